#include "ehrseq/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "ehrseq/csv.hpp"
#include "ehrseq/ingest.hpp"
#include "ehrseq/model.hpp"
#include "ehrseq/random.hpp"
#include "ehrseq/synth.hpp"
#include "ehrseq/tokenize.hpp"

namespace ehrseq {

namespace {

namespace fs = std::filesystem;

void emit(const RunContext& ctx, std::string_view text) {
  if (ctx.output) ctx.output(text);
}

void progress(const RunContext& ctx, const std::string& line) {
  if (ctx.progress) ctx.progress(line);
}

const std::string& require(const std::string& value, std::string_view key) {
  if (value.empty()) throw_usage("missing required option --" + std::string(key));
  return value;
}

fs::path input(const std::string& value, std::string_view key) {
  fs::path p = require(value, key);
  if (!fs::exists(p)) throw_data("input not found: " + p.string() + " (--" + std::string(key) + ")");
  return p;
}

std::vector<std::size_t> indices_of(const Cohort& cohort, const std::vector<std::string>& ids) {
  std::map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < cohort.stays.size(); ++i) index.emplace(cohort.stays[i].stay_id, i);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = index.find(id);
    if (it == index.end()) throw_data("stay " + id + " of the split plan is not in the cohort");
    out.push_back(it->second);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string vocab_hash(const fs::path& vocab_path) { return hex64(file_hash(vocab_path)); }

void run_synth(const RunConfig& c, const RunContext& ctx) {
  const fs::path out = require(c.out, "out");
  auto g = GeneratorConfig::defaults();
  g.n_stays = c.synth_stays;
  g.horizon_hours = c.horizon;
  g.base_rate = c.base_rate;
  g.seed = c.seed;
  g.tautology_rate = c.tautology_rate;
  if (c.signal_scale >= 0.0) g.signal_scale = c.signal_scale;
  if (c.artifact_rate >= 0.0)
    for (auto& l : g.continuous)
      if (l.artifact_rate > 0.0) l.artifact_rate = c.artifact_rate;
  progress(ctx, "synth generating stays=" + std::to_string(g.n_stays));
  const auto cohort = generate_cohort(g, c.threads);
  write_synth(out, cohort);
  std::ostringstream s;
  s << "stays = " << cohort.stays.size() << '\n';
  s << "deaths = " << std::count(cohort.died.begin(), cohort.died.end(), 1) << '\n';
  std::size_t events = 0;
  for (const auto& st : cohort.stays) events += st.events.size();
  s << "events = " << events << '\n';
  s << "bayes_auroc_1 = " << format_double(bayes_auroc(cohort, 1)) << '\n';
  s << "bayes_auroc_" << g.horizon_hours << " = " << format_double(bayes_auroc(cohort, g.horizon_hours)) << '\n';
  emit(ctx, s.str());
}

void run_ingest(const RunConfig& c, const RunContext& ctx) {
  if (c.events.empty()) throw_usage("missing required option --events");
  std::vector<fs::path> events;
  for (const auto& e : c.events) events.push_back(input(e, "events"));
  const auto stays = input(c.stays, "stays");
  const fs::path out = require(c.out, "out");
  IngestOptions opt;
  opt.events.stay_id = c.stay_column;
  opt.events.label = c.label_column;
  opt.events.value = c.value_column;
  opt.events.time = c.time_column;
  opt.events.delimiter = c.delimiter;
  opt.horizon_hours = c.horizon;
  opt.cap = c.event_cap;
  opt.threads = c.threads;
  progress(ctx, "ingest reading files=" + std::to_string(events.size()));
  const auto result = ingest_files(events, stays, opt);
  write_cohort(out, result.cohort);
  std::ostringstream diag;
  result.diagnostics.write(diag);
  write_file_atomic(fs::path(out.string() + ".diagnostics"), diag.str());
  emit(ctx, diag.str());
}

void run_split(const RunConfig& c, const RunContext& ctx) {
  const auto cohort = read_cohort(input(c.cohort, "cohort"));
  const fs::path out = require(c.out, "out");
  std::vector<std::string> ids;
  std::vector<int> targets;
  for (const auto& s : cohort.stays) {
    if (s.mortality == Mortality::undocumented) throw_data("stay " + s.stay_id + " has undocumented mortality");
    ids.push_back(s.stay_id);
    targets.push_back(s.mortality == Mortality::died ? 1 : 0);
  }
  SplitOptions opt;
  opt.test_fraction = c.test_fraction;
  opt.validation_size = c.validation_size;
  opt.folds = c.folds;
  opt.seed = c.seed;
  const auto plan = split_data(ids, targets, opt);
  write_split(out, plan);
  std::ostringstream s;
  s << "test_stays = " << plan.test.size() << '\n';
  for (std::size_t f = 0; f < plan.folds.size(); ++f)
    s << "fold." << f << ".train = " << plan.folds[f].train.size() << "\nfold." << f
      << ".validation = " << plan.folds[f].validation.size() << '\n';
  emit(ctx, s.str());
  progress(ctx, "split done folds=" + std::to_string(plan.folds.size()));
}

struct PoolView {
  Cohort cohort;
  AccessCounter counter;
  std::vector<std::size_t> pool;
};

void load_pool(const RunConfig& c, PoolView& v) {
  v.cohort = read_cohort(input(c.cohort, "cohort"));
  const auto plan = read_split(input(c.split, "split"));
  v.pool = indices_of(v.cohort, plan.pool());
}

std::string access_summary(const AccessCounter& counter) {
  return "train_reads = " + std::to_string(counter.train.load()) +
         "\ntest_reads = " + std::to_string(counter.test.load()) + '\n';
}

void run_fit_bins(const RunConfig& c, const RunContext& ctx) {
  const fs::path out = require(c.out, "out");
  PoolView v;
  load_pool(c, v);
  const CohortView train(v.cohort, v.pool, Partition::train, &v.counter);
  const auto table = fit_bin_table(train, c.bins, c.threads);
  write_bins(out, table, c.bins);
  emit(ctx, "labels = " + std::to_string(table.size()) + '\n' + access_summary(v.counter));
}

void run_build_vocab(const RunConfig& c, const RunContext& ctx) {
  const fs::path out = require(c.out, "out");
  PoolView v;
  load_pool(c, v);
  const auto bins = read_bins(input(c.bins_path, "bins-table"));
  const CohortView train(v.cohort, v.pool, Partition::train, &v.counter);
  const auto vocab = build_vocab(train, bins);
  write_vocab(out, vocab);
  emit(ctx, "tokens = " + std::to_string(vocab.size()) + '\n' + access_summary(v.counter));
}

void run_encode(const RunConfig& c, const RunContext& ctx) {
  const auto cohort = read_cohort(input(c.cohort, "cohort"));
  const auto bins = read_bins(input(c.bins_path, "bins-table"));
  const auto vocab_path = input(c.vocab, "vocab");
  const auto vocab = read_vocab(vocab_path);
  const fs::path out = require(c.out, "out");
  EncodedCohort enc;
  enc.horizon_hours = cohort.horizon_hours;
  enc.vocab_hash = vocab_hash(vocab_path);
  enc.stays.resize(cohort.stays.size());
  parallel_for(cohort.stays.size(), c.threads,
               [&](std::size_t i) { enc.stays[i] = encode_stay(cohort.stays[i], vocab, bins); });
  write_encoded(out, enc);
  std::size_t unknown = 0, missing = 0, total = 0;
  for (const auto& s : enc.stays)
    for (const auto& h : s.hours)
      for (auto id : h) {
        ++total;
        unknown += id == Vocab::kUnknown;
        missing += id == Vocab::kMissing;
      }
  emit(ctx, "stays = " + std::to_string(enc.stays.size()) + "\ntokens = " + std::to_string(total) +
                "\ntokens.missing = " + std::to_string(missing) + "\ntokens.unknown = " + std::to_string(unknown) +
                '\n');
}

void run_train(const RunConfig& c, const RunContext& ctx) {
  auto data = read_encoded(input(c.encoded, "encoded"));
  const auto plan = read_split(input(c.split, "split"));
  const auto vocab_path = input(c.vocab, "vocab");
  const fs::path out = require(c.out, "out");
  const auto hash = vocab_hash(vocab_path);
  if (hash != data.vocab_hash) throw_data("encoded cohort was built with a different vocabulary");
  const auto vocab = read_vocab(vocab_path);

  if (c.shuffle_labels) {
    // Null control: permute outcomes across the training pool only.
    std::map<std::string_view, std::size_t> index;
    for (std::size_t i = 0; i < data.stays.size(); ++i) index.emplace(data.stays[i].stay_id, i);
    std::vector<std::size_t> pool;
    for (const auto& id : plan.pool()) pool.push_back(index.at(id));
    std::vector<int> targets;
    for (auto i : pool) targets.push_back(data.stays[i].target);
    Rng rng(derive_seed(c.seed, 0x5eed5));
    rng.shuffle(std::span<int>(targets));
    for (std::size_t j = 0; j < pool.size(); ++j) data.stays[pool[j]].target = targets[j];
  }

  ProtocolOptions opt;
  opt.grid = make_grid(c.embed_dims, c.hidden_units, c.dropouts, vocab.size(), data.horizon_hours);
  opt.train.batch_size = c.batch_size;
  opt.train.max_epochs = c.max_epochs;
  opt.train.patience = c.patience;
  opt.train.adam.lr = c.learning_rate;
  opt.train.seed = c.seed;
  opt.train.threads = c.threads;
  opt.train.progress = ctx.progress;
  opt.out_dir = out;
  opt.vocab_hash = hash;
  const auto folds = run_protocol(data, plan, opt);
  std::ostringstream s;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& best = folds[f].grid.runs[folds[f].grid.best];
    s << "fold." << f << ".validation_auroc = " << format_double(best.best_auroc) << '\n';
    s << "fold." << f << ".best_epoch = " << best.best_epoch << '\n';
    s << "fold." << f << ".checkpoint = " << folds[f].checkpoint.string() << '\n';
  }
  emit(ctx, s.str());
}

std::map<std::string, std::string> read_manifest(const fs::path& path) {
  std::map<std::string, std::string> out;
  for (auto line : split(read_file(path), '\n')) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) continue;
    out[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

void run_evaluate(const RunConfig& c, const RunContext& ctx) {
  EvalInputs in;
  in.encoded = read_encoded(input(c.encoded, "encoded"));
  in.plan = read_split(input(c.split, "split"));
  const fs::path run = input(c.run_dir, "run-dir");
  const auto manifest = read_manifest(input((run / "manifest.txt").string(), "run-dir"));
  const auto folds = parse_int(manifest.count("folds") ? manifest.at("folds") : "");
  if (!folds || *folds < 1) throw_data("run manifest lacks a fold count");
  for (std::int64_t f = 0; f < *folds; ++f) {
    const auto key = "fold." + std::to_string(f) + ".predictions";
    if (!manifest.count(key)) throw_data("run manifest lacks " + key);
    in.folds.push_back(read_predictions(input((run / manifest.at(key)).string(), "run-dir")));
  }
  SeverityScores scores;
  if (!c.scores.empty()) {
    scores = read_scores(input(c.scores, "scores"));
    in.scores = &scores;
  }
  const auto report = evaluate(in, c);
  const auto text = format_report(report, c);
  if (!c.out.empty()) write_file_atomic(c.out, text);
  emit(ctx, text);
}

std::pair<ModelParams, CheckpointMeta> load_model(const RunConfig& c) {
  const auto path = input(c.checkpoint, "checkpoint");
  return {read_checkpoint(path), read_checkpoint_meta(path)};
}

void run_predict(const RunConfig& c, const RunContext& ctx) {
  const auto [params, meta] = load_model(c);
  const auto data = read_encoded(input(c.encoded, "encoded"));
  require(c.stay_id, "stay");
  if (!meta.vocab_hash.empty() && meta.vocab_hash != data.vocab_hash)
    throw_data("checkpoint and encoded cohort use different vocabularies");
  const auto it = std::find_if(data.stays.begin(), data.stays.end(),
                               [&](const TokenizedStay& s) { return s.stay_id == c.stay_id; });
  if (it == data.stays.end()) throw_data("stay " + c.stay_id + " not found in " + c.encoded);
  const int upto = c.upto_hour > 0 ? c.upto_hour : it->observed_hours;
  if (upto > data.horizon_hours) throw_usage("--upto-hour exceeds the horizon of " + std::to_string(data.horizon_hours));
  const auto traj = forward(*it, params, Mode::eval, 0, upto).probabilities;
  const double empty = 1.0 / (1.0 + std::exp(-params.head_bias()));
  std::ostringstream s;
  s << "hour\tprobability\n";
  for (int t = 1; t <= upto; ++t) {
    // After discharge the last prediction carries forward.
    const double p = traj.empty() ? empty : traj[std::min<std::size_t>(traj.size(), static_cast<std::size_t>(t)) - 1];
    s << t << '\t' << format_double(p) << '\n';
  }
  emit(ctx, s.str());
}

struct CaseInputs {
  ModelParams params;
  BucketedStay stay;
  std::vector<CaseHour> hours;
};

CaseInputs load_case(const RunConfig& c) {
  CaseInputs ci;
  auto [params, meta] = load_model(c);
  ci.params = std::move(params);
  const auto cohort = read_cohort(input(c.cohort, "cohort"));
  const auto bins = read_bins(input(c.bins_path, "bins-table"));
  const auto vocab_path = input(c.vocab, "vocab");
  if (!meta.vocab_hash.empty() && meta.vocab_hash != vocab_hash(vocab_path))
    throw_data("checkpoint was trained with a different vocabulary");
  const auto vocab = read_vocab(vocab_path);
  require(c.stay_id, "stay");
  const auto it = std::find_if(cohort.stays.begin(), cohort.stays.end(),
                               [&](const BucketedStay& s) { return s.stay_id == c.stay_id; });
  if (it == cohort.stays.end()) throw_data("stay " + c.stay_id + " not found in " + c.cohort);
  ci.stay = *it;
  ci.hours = report_case(ci.stay, ci.params, vocab, bins);
  return ci;
}

void run_rank(const RunConfig& c, const RunContext& ctx) {
  const auto ci = load_case(c);
  if (c.hour > static_cast<int>(ci.hours.size()))
    throw_usage("--hour " + std::to_string(c.hour) + " is past the stay's " + std::to_string(ci.hours.size()) +
                " observed hours");
  const std::span<const CaseHour> one(&ci.hours[static_cast<std::size_t>(c.hour - 1)], 1);
  emit(ctx, format_case_table(one, static_cast<std::size_t>(c.top), false));
}

void run_report(const RunConfig& c, const RunContext& ctx) {
  const auto ci = load_case(c);
  emit(ctx, format_case_table(ci.hours, static_cast<std::size_t>(c.top), true));
}

}  // namespace

SeverityScores read_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open " + path.string());
  DelimitedReader reader(in);
  std::vector<std::string> f;
  if (!reader.next(f)) throw_data(path.string() + ": empty score table");
  auto col = [&](std::string_view name) {
    for (std::size_t i = 0; i < f.size(); ++i)
      if (trim(f[i]) == name) return i;
    throw_data(path.string() + ": missing column " + std::string(name));
  };
  const auto id = col("ICUSTAY_ID"), oasis = col("OASIS"), saps = col("SAPSII");
  SeverityScores out;
  while (reader.next(f)) {
    const auto where = path.string() + ":" + std::to_string(reader.line_number());
    if (f.size() <= std::max({id, oasis, saps})) throw_data(where + ": too few fields");
    const auto o = parse_double(trim(f[oasis]));
    const auto s = parse_double(trim(f[saps]));
    if (!o || !s) throw_data(where + ": non-numeric score");
    out.stay_ids.emplace_back(trim(f[id]));
    out.oasis.push_back(*o);
    out.saps.push_back(*s);
  }
  return out;
}

EvalReport evaluate(const EvalInputs& in, const RunConfig& c) {
  EvalReport r;
  r.horizon = in.encoded.horizon_hours;
  std::map<std::string_view, const TokenizedStay*> stays;
  for (const auto& s : in.encoded.stays) stays.emplace(s.stay_id, &s);
  std::vector<int> labels;
  for (const auto& id : in.plan.test) {
    const auto it = stays.find(id);
    if (it == stays.end()) throw_data("test stay " + id + " is not in the encoded cohort");
    labels.push_back(it->second->target);
  }
  r.test_stays = labels.size();
  r.deaths = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));

  std::vector<std::vector<std::vector<double>>> trajs;
  for (const auto& preds : in.folds) {
    std::map<std::string_view, std::size_t> at;
    for (std::size_t i = 0; i < preds.stay_ids.size(); ++i) at.emplace(preds.stay_ids[i], i);
    std::vector<std::vector<double>> t;
    for (const auto& id : in.plan.test) {
      const auto it = at.find(id);
      t.push_back(it == at.end() ? std::vector<double>{} : preds.trajectories[it->second]);
    }
    trajs.push_back(std::move(t));
  }

  BootstrapOptions bo;
  bo.resamples = c.bootstrap;
  bo.level = c.level;
  bo.seed = c.seed;
  bo.threads = c.threads;
  const auto censor = c.censor == "observed_only" ? CensorMode::observed_only : CensorMode::carry_forward;
  r.dynamic = dynamic_auroc(trajs, labels, r.horizon, censor, bo);

  // Final-hour scores (carry forward) over stays with at least one prediction.
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!trajs[0][i].empty()) members.push_back(i);
  std::vector<int> lab;
  for (auto i : members) lab.push_back(labels[i]);
  std::vector<std::vector<double>> finals;
  std::vector<double> mean(members.size(), 0.0);
  for (const auto& t : trajs) {
    std::vector<double> s;
    for (std::size_t j = 0; j < members.size(); ++j) {
      s.push_back(t[members[j]].back());
      mean[j] += s.back() / static_cast<double>(trajs.size());
    }
    r.fold_auroc.push_back(auroc(s, lab));
    finals.push_back(std::move(s));
  }
  if (bo.resamples > 0) {
    r.auroc = bootstrap_ci_pooled(finals, lab, bo);
  } else {
    double m = 0.0;
    for (double a : r.fold_auroc) m += a / static_cast<double>(r.fold_auroc.size());
    r.auroc = {m, m, m, 0};
  }
  r.roc = roc_curve(mean, lab);
  r.calibration = calibration_curve(mean, lab, c.calibration_bins);

  if (in.scores) {
    std::map<std::string_view, std::size_t> at;
    for (std::size_t i = 0; i < in.scores->stay_ids.size(); ++i) at.emplace(in.scores->stay_ids[i], i);
    auto gather = [&](const std::vector<std::string>& ids, const std::vector<double>& col, std::vector<double>& x,
                      std::vector<int>& y) {
      for (const auto& id : ids) {
        const auto it = at.find(id);
        const auto st = stays.find(id);
        if (it == at.end() || st == stays.end()) continue;
        x.push_back(col[it->second]);
        y.push_back(st->second->target);
      }
    };
    const auto pool = in.plan.pool();
    for (int which = 0; which < 2; ++which) {
      const auto& col = which == 0 ? in.scores->oasis : in.scores->saps;
      std::vector<double> x_train, x_test;
      std::vector<int> y_train, y_test;
      gather(pool, col, x_train, y_train);
      gather(in.plan.test, col, x_test, y_test);
      if (x_test.empty()) throw_data("no test stay has a severity score");
      const std::vector<double> y_train_d(y_train.begin(), y_train.end());
      BaselineResult b;
      b.name = which == 0 ? "oasis" : "saps2";
      b.model = which == 0 ? fit_logistic(x_train, y_train_d)
                           : fit_calibration_lm(CalibrationKind::saps_curve, x_train, y_train_d);
      for (double s : x_test) b.test_probabilities.push_back(severity_to_probability(s, b.model));
      if (bo.resamples > 0) {
        b.auroc = bootstrap_ci(b.test_probabilities, y_test, bo);
      } else {
        const double a = auroc(b.test_probabilities, y_test);
        b.auroc = {a, a, a, 0};
      }
      r.baselines.push_back(std::move(b));
    }
  }
  return r;
}

std::string format_report(const EvalReport& r, const RunConfig& c) {
  std::ostringstream s;
  s << "# ehrseq evaluation report\n";
  s << "test_stays = " << r.test_stays << '\n';
  s << "deaths = " << r.deaths << '\n';
  s << "folds = " << r.fold_auroc.size() << '\n';
  s << "horizon = " << r.horizon << '\n';
  s << "bootstrap = " << c.bootstrap << '\n';
  s << "level = " << format_double(c.level) << '\n';
  s << "censor = " << c.censor << '\n';
  s << "auroc = " << format_double(r.auroc.point) << '\n';
  s << "auroc_lo = " << format_double(r.auroc.lo) << '\n';
  s << "auroc_hi = " << format_double(r.auroc.hi) << '\n';
  for (std::size_t f = 0; f < r.fold_auroc.size(); ++f)
    s << "fold." << f << ".auroc = " << format_double(r.fold_auroc[f]) << '\n';
  for (const auto& b : r.baselines) {
    s << b.name << ".kind = " << calibration_kind_name(b.model.kind) << '\n';
    s << b.name << ".coef = ";
    for (std::size_t k = 0; k < b.model.coef.size(); ++k) s << (k ? "," : "") << format_double(b.model.coef[k]);
    s << '\n';
    if (!b.model.warning.empty()) s << b.name << ".warning = " << b.model.warning << '\n';
    s << b.name << ".auroc = " << format_double(b.auroc.point) << '\n';
    s << b.name << ".auroc_lo = " << format_double(b.auroc.lo) << '\n';
    s << b.name << ".auroc_hi = " << format_double(b.auroc.hi) << '\n';
  }
  for (const auto& [k, v] : r.dynamic.diagnostics.counts()) s << "diagnostic." << k << " = " << v << '\n';

  s << "\n[dynamic_auroc]\nhour\tstays\tauroc\tlo\thi\n";
  for (const auto& h : r.dynamic.hours) {
    s << h.hour << '\t' << h.stays << '\t';
    if (h.defined) s << format_double(h.auroc) << '\t' << format_double(h.lo) << '\t' << format_double(h.hi) << '\n';
    else s << "NA\tNA\tNA\n";
  }
  s << "\n[roc]\nfpr\ttpr\n";
  for (const auto& p : r.roc.points)
    s << format_double(p.fpr) << '\t' << format_double(p.tpr) << '\n';
  s << "\n[calibration]\nbin\tcount\tmean_predicted\tobserved_rate\n";
  for (const auto& p : r.calibration)
    s << p.bin << '\t' << p.count << '\t' << format_double(p.mean_predicted) << '\t' << format_double(p.observed_rate)
      << '\n';
  return s.str();
}

void run_subcommand(std::string_view name, const RunConfig& config, const RunContext& ctx) {
  const auto errors = validate_config(config);
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e.field + ": " + e.message;
    throw_usage(msg);
  }
  progress(ctx, "start " + std::string(name));
  if (name == "synth") run_synth(config, ctx);
  else if (name == "ingest") run_ingest(config, ctx);
  else if (name == "split") run_split(config, ctx);
  else if (name == "fit-bins") run_fit_bins(config, ctx);
  else if (name == "build-vocab") run_build_vocab(config, ctx);
  else if (name == "encode") run_encode(config, ctx);
  else if (name == "train") run_train(config, ctx);
  else if (name == "evaluate") run_evaluate(config, ctx);
  else if (name == "predict") run_predict(config, ctx);
  else if (name == "rank") run_rank(config, ctx);
  else if (name == "report") run_report(config, ctx);
  else throw_usage("unknown subcommand '" + std::string(name) + "'");
  progress(ctx, "done " + std::string(name));
}

}  // namespace ehrseq
