#include "ehrseq/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "ehrseq/eval.hpp"
#include "ehrseq/random.hpp"

namespace ehrseq {

std::vector<std::string> SplitPlan::pool() const {
  std::vector<std::string> out;
  if (folds.empty()) return out;
  out = folds[0].train;
  out.insert(out.end(), folds[0].validation.begin(), folds[0].validation.end());
  std::sort(out.begin(), out.end());
  return out;
}

SplitPlan split_data(std::span<const std::string> stay_ids, std::span<const int> targets,
                     const SplitOptions& options) {
  if (stay_ids.size() != targets.size()) throw_usage("split: stay and target counts differ");
  if (!(options.test_fraction > 0.0 && options.test_fraction < 1.0))
    throw_usage("split: test fraction must be in (0, 1)");
  if (options.folds < 1) throw_usage("split: fold count must be at least 1");
  if (options.validation_size == 0) throw_usage("split: validation size must be positive");
  const std::size_t n = stay_ids.size();
  if (n < 10 * options.validation_size)
    throw_usage("split: cohort of " + std::to_string(n) + " stays is smaller than 10 x validation size " +
                std::to_string(options.validation_size));
  {
    std::set<std::string_view> seen;
    for (const auto& id : stay_ids)
      if (!seen.insert(id).second) throw_data("split: duplicate stay id " + id);
  }

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (targets[i] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) throw_data("split: cohort needs both outcomes");

  Rng rng(options.seed);
  rng.shuffle(std::span<std::size_t>(pos));
  rng.shuffle(std::span<std::size_t>(neg));

  const auto n_test = static_cast<std::size_t>(std::llround(options.test_fraction * static_cast<double>(n)));
  const auto test_pos = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_test) * static_cast<double>(pos.size()) / static_cast<double>(n)));
  const std::size_t test_neg = n_test - test_pos;
  if (test_pos > pos.size() || test_neg > neg.size()) throw_usage("split: test set larger than a class");

  const std::size_t pool_pos = pos.size() - test_pos;
  const std::size_t pool_neg = neg.size() - test_neg;
  const std::size_t pool_n = pool_pos + pool_neg;
  const auto val_pos = static_cast<std::size_t>(std::llround(
      static_cast<double>(options.validation_size) * static_cast<double>(pool_pos) / static_cast<double>(pool_n)));
  const std::size_t val_neg = options.validation_size - val_pos;
  const auto k = static_cast<std::size_t>(options.folds);
  if (k * val_pos > pool_pos || k * val_neg > pool_neg)
    throw_usage("split: " + std::to_string(options.folds) + " disjoint validation sets of " +
                std::to_string(options.validation_size) + " do not fit in the training pool");

  auto ids_of = [&](std::vector<std::size_t> idx) {
    std::sort(idx.begin(), idx.end());
    std::vector<std::string> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(stay_ids[i]);
    return out;
  };

  SplitPlan plan;
  plan.seed = options.seed;
  plan.test_fraction = options.test_fraction;
  plan.validation_size = options.validation_size;
  {
    std::vector<std::size_t> t(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(test_pos));
    t.insert(t.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(test_neg));
    plan.test = ids_of(std::move(t));
  }
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> val, train;
    auto assign = [&](const std::vector<std::size_t>& cls, std::size_t skip, std::size_t per_fold) {
      for (std::size_t j = skip; j < cls.size(); ++j) {
        const std::size_t slot = j - skip;
        (slot >= f * per_fold && slot < (f + 1) * per_fold ? val : train).push_back(cls[j]);
      }
    };
    assign(pos, test_pos, val_pos);
    assign(neg, test_neg, val_neg);
    plan.folds.push_back({ids_of(std::move(train)), ids_of(std::move(val))});
  }
  return plan;
}

void write_split(const std::filesystem::path& path, const SplitPlan& plan) {
  write_file_atomic(path, [&](std::ostream& out) {
    out << "#ehrseq-split\tv1\n";
    out << "#seed\t" << plan.seed << '\n';
    out << "#test_fraction\t" << format_double(plan.test_fraction) << '\n';
    out << "#validation_size\t" << plan.validation_size << '\n';
    out << "#folds\t" << plan.folds.size() << '\n';
    for (const auto& id : plan.test) out << "test\t-\t" << escape_field(id) << '\n';
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
      for (const auto& id : plan.folds[f].train) out << "train\t" << f << '\t' << escape_field(id) << '\n';
      for (const auto& id : plan.folds[f].validation) out << "validation\t" << f << '\t' << escape_field(id) << '\n';
    }
  });
}

SplitPlan read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open split file " + path.string());
  std::string line;
  auto bad = [&](const std::string& why) { throw_data("split file " + path.string() + ": " + why); };
  if (!std::getline(in, line) || line != "#ehrseq-split\tv1") bad("missing header");
  SplitPlan plan;
  std::size_t folds = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, '\t');
    if (line[0] == '#') {
      if (f.size() != 2) bad("malformed header line");
      if (f[0] == "#seed") plan.seed = static_cast<std::uint64_t>(std::stoull(std::string(f[1])));
      else if (f[0] == "#test_fraction") plan.test_fraction = parse_double(f[1]).value_or(-1);
      else if (f[0] == "#validation_size") plan.validation_size = static_cast<std::size_t>(parse_int(f[1]).value_or(0));
      else if (f[0] == "#folds") {
        folds = static_cast<std::size_t>(parse_int(f[1]).value_or(0));
        plan.folds.resize(folds);
      }
      continue;
    }
    if (f.size() != 3) bad("expected role, fold, stay_id");
    auto id = unescape_field(f[2]);
    if (f[0] == "test") {
      plan.test.push_back(std::move(id));
      continue;
    }
    const auto k = parse_int(f[1]);
    if (!k || *k < 0 || static_cast<std::size_t>(*k) >= folds) bad("fold index out of range");
    auto& fold = plan.folds[static_cast<std::size_t>(*k)];
    if (f[0] == "train") fold.train.push_back(std::move(id));
    else if (f[0] == "validation") fold.validation.push_back(std::move(id));
    else bad("unknown role " + std::string(f[0]));
  }
  return plan;
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<double> final_scores(std::span<const TokenizedStay* const> stays, const ModelParams& params,
                                 int threads) {
  std::vector<double> out(stays.size());
  parallel_for(stays.size(), threads, [&](std::size_t i) { out[i] = final_probability(*stays[i], params); });
  return out;
}

std::string describe(const ModelConfig& c) {
  return "embed=" + std::to_string(c.embed_dim) + " hidden=" + std::to_string(c.hidden_units) +
         " dropout=" + format_double(c.embedding_dropout);
}

}  // namespace

double final_probability(const TokenizedStay& stay, const ModelParams& params) {
  const auto traj = forward(stay, params, Mode::eval);
  if (traj.probabilities.empty()) return sigmoid(params.head_bias());
  return traj.probabilities.back();
}

TrainRunRecord train_fold(std::span<const TokenizedStay* const> train, std::span<const TokenizedStay* const> validation,
                          const ModelConfig& config, const TrainOptions& options) {
  config.validate();
  if (train.empty()) throw_usage("train: empty training set");
  if (validation.empty()) throw_usage("train: empty validation set");
  if (options.batch_size < 1) throw_usage("train: batch size must be positive");
  if (options.patience < 0) throw_usage("train: patience must be non-negative");
  if (options.max_epochs < 1) throw_usage("train: max epochs must be positive");
  std::vector<int> val_labels;
  for (const auto* s : validation) val_labels.push_back(s->target);
  {
    const auto pos = std::count(val_labels.begin(), val_labels.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(val_labels.size()))
      throw_data("train: validation set holds a single outcome class");
  }

  const auto start = std::chrono::steady_clock::now();
  TrainRunRecord rec;
  rec.config = config;
  ModelParams params = init_params(config, derive_seed(options.seed, 0));
  rec.best_params = params;
  AdamState state(params.flat().size(), options.adam);
  Gradients grads(config);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const TokenizedStay*> batch;
  int since_best = 0;
  bool have_best = false;

  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(options.seed, static_cast<std::uint64_t>(epoch));
    Rng rng(epoch_seed);
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t terms = 0;
    std::uint64_t batch_index = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(options.batch_size)) {
      batch.clear();
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(options.batch_size));
      for (std::size_t j = b; j < e; ++j) batch.push_back(train[order[j]]);
      const auto r = backward(batch, params, grads, Mode::train, derive_seed(epoch_seed, ++batch_index),
                              options.threads);
      if (!std::isfinite(r.loss)) {
        rec.aborted = true;
        rec.abort_reason = "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index);
        break;
      }
      try {
        adam_step(params, grads, state);
      } catch (const Error& err) {
        rec.aborted = true;
        rec.abort_reason = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " +
                           err.what();
        break;
      }
      loss_sum += r.loss * static_cast<double>(r.terms);
      terms += r.terms;
    }
    if (rec.aborted) break;

    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = terms ? loss_sum / static_cast<double>(terms) : 0.0;
    const auto scores = final_scores(validation, params, options.threads);
    er.validation_auroc = auroc(scores, val_labels);
    rec.epochs.push_back(er);
    if (options.progress)
      options.progress("epoch " + std::to_string(epoch) + " " + describe(config) +
                       " loss=" + format_double(er.train_loss) + " val_auroc=" + format_double(er.validation_auroc));
    if (!have_best || er.validation_auroc > rec.best_auroc) {
      have_best = true;
      rec.best_auroc = er.validation_auroc;
      rec.best_epoch = epoch;
      rec.best_params = params;
      since_best = 0;
    } else if (++since_best > options.patience) {
      break;
    }
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

GridResult grid_search(std::span<const TokenizedStay* const> train, std::span<const TokenizedStay* const> validation,
                       std::span<const ModelConfig> grid, const TrainOptions& options) {
  if (grid.empty()) throw_usage("grid search: empty grid");
  GridResult result;
  for (const auto& cfg : grid) {
    result.runs.push_back(train_fold(train, validation, cfg, options));
    const auto& r = result.runs.back();
    if (r.aborted) break;
    const auto& best = result.runs[result.best];
    if (r.best_auroc > best.best_auroc ||
        (r.best_auroc == best.best_auroc && r.config.parameter_count() < best.config.parameter_count()))
      result.best = result.runs.size() - 1;
  }
  return result;
}

std::vector<ModelConfig> make_grid(std::span<const int> embed_dims, std::span<const int> hidden_units,
                                   std::span<const double> dropouts, std::size_t vocab_size, int horizon_hours) {
  std::vector<ModelConfig> grid;
  for (int e : embed_dims)
    for (int h : hidden_units)
      for (double q : dropouts) {
        ModelConfig c;
        c.embed_dim = e;
        c.hidden_units = h;
        c.embedding_dropout = q;
        c.vocab_size = vocab_size;
        c.horizon_hours = horizon_hours;
        grid.push_back(c);
      }
  return grid;
}

void write_predictions(const std::filesystem::path& path, const HourlyPredictions& predictions) {
  write_file_atomic(path, [&](std::ostream& out) {
    out << "stay_id\thour\tprobability\n";
    for (std::size_t i = 0; i < predictions.stay_ids.size(); ++i) {
      const auto& traj = predictions.trajectories[i];
      for (std::size_t t = 0; t < traj.size(); ++t)
        out << escape_field(predictions.stay_ids[i]) << '\t' << (t + 1) << '\t' << format_double(traj[t]) << '\n';
    }
  });
}

HourlyPredictions read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open predictions " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "stay_id\thour\tprobability")
    throw_data("predictions " + path.string() + ": missing header");
  HourlyPredictions out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, '\t');
    const auto where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 3) throw_data("predictions " + where + ": expected 3 fields");
    auto id = unescape_field(f[0]);
    const auto hour = parse_int(f[1]);
    const auto p = parse_double(f[2]);
    if (!hour || !p || *p < 0.0 || *p > 1.0) throw_data("predictions " + where + ": bad hour or probability");
    if (out.stay_ids.empty() || out.stay_ids.back() != id) {
      out.stay_ids.push_back(std::move(id));
      out.trajectories.emplace_back();
    }
    auto& traj = out.trajectories.back();
    if (*hour != static_cast<std::int64_t>(traj.size()) + 1)
      throw_data("predictions " + where + ": hours must be consecutive from 1");
    traj.push_back(*p);
  }
  return out;
}

std::vector<FoldOutput> run_protocol(const EncodedCohort& data, const SplitPlan& plan, const ProtocolOptions& options) {
  if (plan.folds.empty()) throw_usage("protocol: split plan has no folds");
  if (options.grid.empty()) throw_usage("protocol: empty grid");
  std::map<std::string_view, const TokenizedStay*> by_id;
  for (const auto& s : data.stays) by_id.emplace(s.stay_id, &s);
  auto resolve = [&](const std::vector<std::string>& ids) {
    std::vector<const TokenizedStay*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw_data("protocol: stay " + id + " from the split plan is not in the encoded data");
      out.push_back(it->second);
    }
    return out;
  };
  auto ids_hash = [](const std::vector<std::string>& ids) {
    std::uint64_t h = fnv1a("");
    for (const auto& id : ids) h = fnv1a(id + "\n", h);
    return hex64(h);
  };

  std::filesystem::create_directories(options.out_dir);
  const auto test = resolve(plan.test);
  std::vector<FoldOutput> outputs;
  std::ostringstream manifest;
  manifest << "# ehrseq run manifest\n";
  manifest << "seed = " << options.train.seed << '\n';
  manifest << "split_seed = " << plan.seed << '\n';
  manifest << "folds = " << plan.folds.size() << '\n';
  manifest << "test_fraction = " << format_double(plan.test_fraction) << '\n';
  manifest << "stratified_test = true\n";
  manifest << "validation_size = " << plan.validation_size << '\n';
  manifest << "test_stays = " << plan.test.size() << '\n';
  manifest << "test_hash = " << ids_hash(plan.test) << '\n';
  manifest << "batch_size = " << options.train.batch_size << '\n';
  manifest << "max_epochs = " << options.train.max_epochs << '\n';
  manifest << "patience = " << options.train.patience << '\n';
  manifest << "learning_rate = " << format_double(options.train.adam.lr) << '\n';
  manifest << "threads = " << options.train.threads << '\n';
  manifest << "vocab_hash = " << options.vocab_hash << '\n';
  for (std::size_t g = 0; g < options.grid.size(); ++g) manifest << "grid." << g << " = " << describe(options.grid[g]) << '\n';

  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const auto train = resolve(plan.folds[f].train);
    const auto validation = resolve(plan.folds[f].validation);
    auto opts = options.train;
    opts.seed = derive_seed(options.train.seed, f);
    if (options.train.progress)
      opts.progress = [&, f](const std::string& msg) { options.train.progress("fold " + std::to_string(f) + " " + msg); };

    FoldOutput out;
    out.grid = grid_search(train, validation, options.grid, opts);
    const auto& best = out.grid.runs[out.grid.best];
    const std::string stem = "fold_" + std::to_string(f);
    out.checkpoint = options.out_dir / (stem + ".ckpt");
    out.predictions = options.out_dir / (stem + ".test.tsv");
    out.log = options.out_dir / (stem + ".log");

    CheckpointMeta meta;
    meta.seed = opts.seed;
    meta.vocab_hash = options.vocab_hash;
    meta.extra["fold"] = std::to_string(f);
    meta.extra["best_epoch"] = std::to_string(best.best_epoch);
    meta.extra["validation_auroc"] = format_double(best.best_auroc);
    write_checkpoint(out.checkpoint, best.best_params, meta);

    write_file_atomic(out.log, [&](std::ostream& log) {
      log << "#fold\t" << f << '\n';
      for (std::size_t g = 0; g < out.grid.runs.size(); ++g) {
        const auto& r = out.grid.runs[g];
        log << "#run\t" << g << '\t' << describe(r.config) << "\tbest_epoch=" << r.best_epoch
            << "\tbest_auroc=" << format_double(r.best_auroc) << "\twall_seconds=" << format_double(r.wall_seconds)
            << (r.aborted ? "\taborted=" + r.abort_reason : std::string()) << '\n';
        log << "run\tepoch\ttrain_loss\tvalidation_auroc\n";
        for (const auto& e : r.epochs)
          log << g << '\t' << e.epoch << '\t' << format_double(e.train_loss) << '\t'
              << format_double(e.validation_auroc) << '\n';
      }
      log << "#selected\t" << out.grid.best << '\n';
    });

    if (best.aborted || out.grid.runs.back().aborted)
      throw_numeric("fold " + std::to_string(f) + ": " + out.grid.runs.back().abort_reason +
                    "; last good checkpoint written to " + out.checkpoint.string());

    HourlyPredictions preds;
    preds.stay_ids = plan.test;
    preds.trajectories.resize(test.size());
    parallel_for(test.size(), options.train.threads, [&](std::size_t i) {
      preds.trajectories[i] = forward(*test[i], best.best_params, Mode::eval).probabilities;
    });
    write_predictions(out.predictions, preds);

    manifest << "fold." << f << ".train_stays = " << train.size() << '\n';
    manifest << "fold." << f << ".train_hash = " << ids_hash(plan.folds[f].train) << '\n';
    manifest << "fold." << f << ".validation_hash = " << ids_hash(plan.folds[f].validation) << '\n';
    manifest << "fold." << f << ".selected = " << describe(best.config) << '\n';
    manifest << "fold." << f << ".best_epoch = " << best.best_epoch << '\n';
    manifest << "fold." << f << ".validation_auroc = " << format_double(best.best_auroc) << '\n';
    manifest << "fold." << f << ".checkpoint = " << out.checkpoint.filename().string() << '\n';
    manifest << "fold." << f << ".predictions = " << out.predictions.filename().string() << '\n';
    outputs.push_back(std::move(out));
  }
  write_file_atomic(options.out_dir / "manifest.txt", manifest.str());
  return outputs;
}

}  // namespace ehrseq
