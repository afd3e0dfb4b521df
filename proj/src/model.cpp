#include "ehrseq/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ehrseq/random.hpp"

namespace ehrseq {

void ModelConfig::validate() const {
  if (embed_dim <= 0) throw_usage("embed_dim must be positive");
  if (hidden_units <= 0) throw_usage("hidden_units must be positive");
  if (!(embedding_dropout >= 0.0 && embedding_dropout < 1.0)) throw_usage("embedding dropout must be in [0, 1)");
  if (vocab_size < 2) throw_usage("vocab_size must include the two reserved tokens");
  if (horizon_hours <= 0) throw_usage("horizon must be positive");
}

std::size_t ModelConfig::parameter_count() const {
  const auto d = static_cast<std::size_t>(embed_dim);
  const auto h = static_cast<std::size_t>(hidden_units);
  return vocab_size * d + vocab_size + 4 * h * d + 4 * h * h + 4 * h + h + 1;
}

ModelParams::ModelParams(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto v = config.vocab_size;
  const auto d = static_cast<std::size_t>(config.embed_dim);
  const auto h = static_cast<std::size_t>(config.hidden_units);
  std::size_t offset = 0;
  const auto push = [&](const char* name, std::size_t rows, std::size_t cols) {
    blocks_.push_back(Block{name, offset, rows, cols});
    offset += rows * cols;
  };
  push("embedding", v, d);
  push("token_weight", v, 1);
  push("lstm_input", 4 * h, d);
  push("lstm_recurrent", 4 * h, h);
  push("lstm_bias", 4 * h, 1);
  push("head_weight", h, 1);
  push("head_bias", 1, 1);
  data_.assign(offset, 0.0);
}

void ModelParams::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

void ModelParams::add(const ModelParams& other) {
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

ModelParams::MatMap ModelParams::mat(std::size_t b) {
  const auto& blk = blocks_[b];
  return MatMap(data_.data() + blk.offset, static_cast<Eigen::Index>(blk.rows), static_cast<Eigen::Index>(blk.cols));
}
ModelParams::ConstMatMap ModelParams::mat(std::size_t b) const {
  const auto& blk = blocks_[b];
  return ConstMatMap(data_.data() + blk.offset, static_cast<Eigen::Index>(blk.rows),
                     static_cast<Eigen::Index>(blk.cols));
}
ModelParams::VecMap ModelParams::vec(std::size_t b) {
  const auto& blk = blocks_[b];
  return VecMap(data_.data() + blk.offset, static_cast<Eigen::Index>(blk.size()));
}
ModelParams::ConstVecMap ModelParams::vec(std::size_t b) const {
  const auto& blk = blocks_[b];
  return ConstVecMap(data_.data() + blk.offset, static_cast<Eigen::Index>(blk.size()));
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p(config);
  Rng rng(seed);
  auto emb = p.embedding();
  for (Eigen::Index r = 1; r < emb.rows(); ++r)
    for (Eigen::Index c = 0; c < emb.cols(); ++c) emb(r, c) = rng.uniform(-0.1, 0.1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.hidden_units));
  for (auto& v : p.input_weights().reshaped()) v = rng.uniform(-scale, scale);
  for (auto& v : p.recurrent_weights().reshaped()) v = rng.uniform(-scale, scale);
  const auto h = config.hidden_units;
  p.gate_bias().segment(h, h).setOnes();
  for (auto& v : p.head_weights()) v = rng.uniform(-scale, scale);
  return p;
}

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct HourTrace {
  std::vector<std::int32_t> ids;  // surviving non-missing ids, ascending
  Eigen::VectorXd weights;        // softmax weights aligned with ids
};

// Fills `trace` and writes the aggregate into x.
void aggregate_traced(std::span<const std::int32_t> token_ids, std::span<const std::uint8_t> keep,
                      const ModelParams& params, HourTrace& trace, Eigen::Ref<Eigen::VectorXd> x) {
  const auto vocab = static_cast<std::int32_t>(params.config().vocab_size);
  trace.ids.clear();
  for (std::size_t j = 0; j < token_ids.size(); ++j) {
    const auto id = token_ids[j];
    if (id < 0 || id >= vocab) throw_data("token index " + std::to_string(id) + " outside vocabulary");
    if (id == Vocab::kMissing) continue;
    if (!keep.empty() && !keep[j]) continue;
    trace.ids.push_back(id);
  }
  x.setZero();
  const auto n = static_cast<Eigen::Index>(trace.ids.size());
  trace.weights.resize(n);
  if (n == 0) return;
  std::sort(trace.ids.begin(), trace.ids.end());
  const auto w = params.token_weights();
  double mx = -std::numeric_limits<double>::infinity();
  for (auto id : trace.ids) mx = std::max(mx, w[id]);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    trace.weights[j] = std::exp(w[trace.ids[static_cast<std::size_t>(j)]] - mx);
    total += trace.weights[j];
  }
  trace.weights /= total;
  const auto emb = params.embedding();
  for (Eigen::Index j = 0; j < n; ++j) x.noalias() += trace.weights[j] * emb.row(trace.ids[static_cast<std::size_t>(j)]).transpose();
}

std::vector<std::vector<std::uint8_t>> dropout_masks(const TokenizedStay& stay, int hours, double q,
                                                     std::uint64_t seed) {
  std::vector<std::vector<std::uint8_t>> masks(static_cast<std::size_t>(hours));
  if (q <= 0.0) return masks;
  Rng rng(seed);
  for (int t = 0; t < hours; ++t) {
    const auto& ids = stay.hours[static_cast<std::size_t>(t)];
    auto& m = masks[static_cast<std::size_t>(t)];
    m.resize(ids.size());
    for (auto& k : m) k = rng.uniform() >= q ? 1 : 0;
  }
  return masks;
}

struct StayTrace {
  int steps = 0;
  std::vector<HourTrace> hours;
  Eigen::MatrixXd x;      // D x T
  Eigen::MatrixXd gates;  // 4H x T, post-activation
  Eigen::MatrixXd c;      // H x (T+1), column 0 is the initial state
  Eigen::MatrixXd h;      // H x (T+1)
  std::vector<double> p;
  std::vector<double> logit;
};

int steps_for(const TokenizedStay& stay, int max_hours) {
  int steps = std::min<int>(stay.observed_hours, static_cast<int>(stay.hours.size()));
  if (max_hours >= 0) steps = std::min(steps, max_hours);
  return std::max(steps, 0);
}

void run_forward(const TokenizedStay& stay, const ModelParams& params, Mode mode, std::uint64_t seed, int max_hours,
                 StayTrace& tr) {
  const auto& cfg = params.config();
  const int d = cfg.embed_dim;
  const int hu = cfg.hidden_units;
  const int steps = steps_for(stay, max_hours);
  const double q = mode == Mode::train ? cfg.embedding_dropout : 0.0;
  const auto masks = dropout_masks(stay, steps, q, seed);

  tr.steps = steps;
  tr.hours.resize(static_cast<std::size_t>(steps));
  tr.x.resize(d, steps);
  tr.gates.resize(4 * hu, steps);
  tr.c.setZero(hu, steps + 1);
  tr.h.setZero(hu, steps + 1);
  tr.p.resize(static_cast<std::size_t>(steps));
  tr.logit.resize(static_cast<std::size_t>(steps));

  const auto wx = params.input_weights();
  const auto wh = params.recurrent_weights();
  const auto b = params.gate_bias();
  const auto v = params.head_weights();
  Eigen::VectorXd z(4 * hu);
  for (int t = 0; t < steps; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    aggregate_traced(stay.hours[ut], masks[ut], params, tr.hours[ut], tr.x.col(t));
    z.noalias() = wx * tr.x.col(t);
    z.noalias() += wh * tr.h.col(t);
    z += b;
    auto g = tr.gates.col(t);
    for (int k = 0; k < hu; ++k) {
      g[k] = sigmoid(z[k]);
      g[hu + k] = sigmoid(z[hu + k]);
      g[2 * hu + k] = std::tanh(z[2 * hu + k]);
      g[3 * hu + k] = sigmoid(z[3 * hu + k]);
    }
    for (int k = 0; k < hu; ++k) {
      const double cn = g[hu + k] * tr.c(k, t) + g[k] * g[2 * hu + k];
      tr.c(k, t + 1) = cn;
      tr.h(k, t + 1) = g[3 * hu + k] * std::tanh(cn);
    }
    tr.logit[ut] = v.dot(tr.h.col(t + 1)) + params.head_bias();
    tr.p[ut] = sigmoid(tr.logit[ut]);
  }
}

double bce_term(double p, int y) {
  const double pc = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return -(y ? std::log(pc) : std::log(1.0 - pc));
}

// d(term)/d(logit); zero where the clamp is active.
double bce_logit_grad(double p, int y) {
  if (p < kProbabilityClamp || p > 1.0 - kProbabilityClamp) return 0.0;
  return p - y;
}

void run_backward(const TokenizedStay& stay, const ModelParams& params, const StayTrace& tr, double scale,
                  Gradients& grads) {
  const auto& cfg = params.config();
  const int hu = cfg.hidden_units;
  const auto wx = params.input_weights();
  const auto wh = params.recurrent_weights();
  const auto v = params.head_weights();
  const auto emb = params.embedding();

  auto g_emb = grads.embedding();
  auto g_w = grads.token_weights();
  auto g_wx = grads.input_weights();
  auto g_wh = grads.recurrent_weights();
  auto g_b = grads.gate_bias();
  auto g_v = grads.head_weights();
  double& g_c = grads.head_bias();

  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(hu);
  Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(hu);
  Eigen::VectorXd dh(hu), dz(4 * hu), dx(cfg.embed_dim);
  for (int t = tr.steps - 1; t >= 0; --t) {
    const auto ut = static_cast<std::size_t>(t);
    const double dlogit = scale * bce_logit_grad(tr.p[ut], stay.target);
    g_v += dlogit * tr.h.col(t + 1);
    g_c += dlogit;
    dh = dh_next + dlogit * v;

    const auto g = tr.gates.col(t);
    for (int k = 0; k < hu; ++k) {
      const double ig = g[k], fg = g[hu + k], cg = g[2 * hu + k], og = g[3 * hu + k];
      const double tc = std::tanh(tr.c(k, t + 1));
      const double dc = dc_next[k] + dh[k] * og * (1.0 - tc * tc);
      dz[k] = dc * cg * ig * (1.0 - ig);
      dz[hu + k] = dc * tr.c(k, t) * fg * (1.0 - fg);
      dz[2 * hu + k] = dc * ig * (1.0 - cg * cg);
      dz[3 * hu + k] = dh[k] * tc * og * (1.0 - og);
      dc_next[k] = dc * fg;
    }
    g_wx.noalias() += dz * tr.x.col(t).transpose();
    g_wh.noalias() += dz * tr.h.col(t).transpose();
    g_b += dz;
    dh_next.noalias() = wh.transpose() * dz;

    const auto& ht = tr.hours[ut];
    if (ht.ids.empty()) continue;
    dx.noalias() = wx.transpose() * dz;
    const double xdx = tr.x.col(t).dot(dx);
    for (std::size_t j = 0; j < ht.ids.size(); ++j) {
      const auto id = ht.ids[j];
      const double a = ht.weights[static_cast<Eigen::Index>(j)];
      g_emb.row(id).noalias() += a * dx.transpose();
      g_w[id] += a * (emb.row(id).dot(dx) - xdx);
    }
  }
  g_emb.row(Vocab::kMissing).setZero();
}

}  // namespace

Eigen::VectorXd aggregate_hour(std::span<const std::int32_t> token_ids, const ModelParams& params,
                               std::span<const std::uint8_t> keep) {
  HourTrace tr;
  Eigen::VectorXd x(params.config().embed_dim);
  aggregate_traced(token_ids, keep, params, tr, x);
  return x;
}

LstmState lstm_step(const Eigen::VectorXd& x, const LstmState& state, const ModelParams& params) {
  const int hu = params.config().hidden_units;
  Eigen::VectorXd z = params.input_weights() * x + params.recurrent_weights() * state.h + params.gate_bias();
  LstmState next{Eigen::VectorXd(hu), Eigen::VectorXd(hu)};
  for (int k = 0; k < hu; ++k) {
    const double i = sigmoid(z[k]), f = sigmoid(z[hu + k]), g = std::tanh(z[2 * hu + k]), o = sigmoid(z[3 * hu + k]);
    next.c[k] = f * state.c[k] + i * g;
    next.h[k] = o * std::tanh(next.c[k]);
  }
  return next;
}

Trajectory forward(const TokenizedStay& stay, const ModelParams& params, Mode mode, std::uint64_t seed,
                   int max_hours) {
  StayTrace tr;
  run_forward(stay, params, mode, seed, max_hours, tr);
  Trajectory out;
  out.probabilities = tr.p;
  out.hidden_norms.resize(static_cast<std::size_t>(tr.steps));
  for (int t = 0; t < tr.steps; ++t) out.hidden_norms[static_cast<std::size_t>(t)] = tr.h.col(t + 1).norm();
  return out;
}

double loss(std::span<const Trajectory> trajectories, std::span<const int> targets) {
  if (trajectories.size() != targets.size()) throw_usage("loss: trajectory and target counts differ");
  double total = 0.0;
  std::size_t terms = 0;
  for (std::size_t i = 0; i < trajectories.size(); ++i)
    for (double p : trajectories[i].probabilities) {
      total += bce_term(p, targets[i]);
      ++terms;
    }
  return terms ? total / static_cast<double>(terms) : 0.0;
}

BatchResult backward(std::span<const TokenizedStay* const> batch, const ModelParams& params, Gradients& grads,
                     Mode mode, std::uint64_t seed, int threads) {
  if (grads.flat().size() != params.flat().size()) grads = Gradients(params.config());
  grads.set_zero();
  std::size_t terms = 0;
  for (const auto* s : batch) terms += static_cast<std::size_t>(steps_for(*s, -1));
  BatchResult result{0.0, terms};
  if (terms == 0) return result;
  const double scale = 1.0 / static_cast<double>(terms);

  const int workers = effective_threads(threads, batch.size());
  std::vector<Gradients> local(static_cast<std::size_t>(workers > 1 ? workers : 0), Gradients(params.config()));
  std::vector<double> losses(batch.size(), 0.0);
  parallel_chunks(batch.size(), workers, [&](int worker, std::size_t begin, std::size_t end) {
    Gradients& g = workers > 1 ? local[static_cast<std::size_t>(worker)] : grads;
    StayTrace tr;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& stay = *batch[i];
      run_forward(stay, params, mode, derive_seed(seed, i), -1, tr);
      double l = 0.0;
      for (double p : tr.p) l += bce_term(p, stay.target);
      losses[i] = l;
      run_backward(stay, params, tr, scale, g);
    }
  });
  for (auto& g : local) grads.add(g);
  double total = 0.0;
  for (double l : losses) total += l;
  result.loss = total * scale;
  return result;
}

std::vector<RankedToken> rank_hour(std::span<const std::int32_t> token_ids, const ModelParams& params) {
  const auto w = params.token_weights();
  const auto vocab = static_cast<std::int32_t>(params.config().vocab_size);
  std::vector<RankedToken> ranked;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < token_ids.size(); ++j) {
    const auto id = token_ids[j];
    if (id == Vocab::kMissing) continue;
    if (id < 0 || id >= vocab) throw_data("token index " + std::to_string(id) + " outside vocabulary");
    ranked.push_back(RankedToken{j, id, 0.0});
    mx = std::max(mx, w[id]);
  }
  double total = 0.0;
  for (auto& r : ranked) total += (r.weight = std::exp(w[r.token] - mx));
  for (auto& r : ranked) r.weight /= total;
  std::sort(ranked.begin(), ranked.end(), [](const RankedToken& a, const RankedToken& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    if (a.token != b.token) return a.token < b.token;
    return a.position < b.position;
  });
  return ranked;
}

namespace {

constexpr std::string_view kCheckpointMagic = "EHRSEQ-CHECKPOINT 1";

void put_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::map<std::string, std::string> parse_kv_lines(std::string_view text) {
  std::map<std::string, std::string> kv;
  for (auto line : split(text, '\n')) {
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) continue;
    kv.emplace(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
  }
  return kv;
}

std::filesystem::path meta_path(const std::filesystem::path& p) {
  auto m = p;
  m += ".meta";
  return m;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params, const CheckpointMeta& meta) {
  const auto& cfg = params.config();
  write_file_atomic(path, [&](std::ostream& out) {
    out << kCheckpointMagic << '\n'
        << "embed_dim=" << cfg.embed_dim << '\n'
        << "hidden_units=" << cfg.hidden_units << '\n'
        << "embedding_dropout=" << format_double(cfg.embedding_dropout) << '\n'
        << "vocab_size=" << cfg.vocab_size << '\n'
        << "horizon_hours=" << cfg.horizon_hours << '\n'
        << "aggregation=" << kAggregation << '\n'
        << "gate_order=input,forget,cell,output\n"
        << "precision=float64\n"
        << "byte_order=little\n"
        << "blocks=" << params.blocks().size() << "\n\n";
    const auto flat = params.flat();
    for (const auto& b : params.blocks()) {
      out << "block " << b.name << ' ' << b.rows << ' ' << b.cols << '\n';
      for (std::size_t i = 0; i < b.size(); ++i) put_le(out, flat[b.offset + i]);
      out << '\n';
    }
  });
  write_file_atomic(meta_path(path), [&](std::ostream& out) {
    out << "vocab_hash=" << meta.vocab_hash << '\n' << "seed=" << meta.seed << '\n';
    for (const auto& [k, v] : meta.extra) out << k << '=' << v << '\n';
  });
}

ModelParams read_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto fail = [&](const std::string& why) -> void { throw_data(path.string() + ": " + why); };
  const auto header_end = bytes.find("\n\n");
  if (!bytes.starts_with(kCheckpointMagic) || header_end == std::string::npos) fail("not an ehrseq checkpoint (v1)");
  const auto kv = parse_kv_lines(std::string_view(bytes).substr(0, header_end));
  const auto get = [&](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) fail(std::string("missing header field ") + key);
    return it->second;
  };
  if (get("aggregation") != kAggregation) fail("unsupported aggregation " + get("aggregation"));
  if (get("precision") != "float64") fail("unsupported precision " + get("precision"));
  ModelConfig cfg;
  const auto ed = parse_int(get("embed_dim"));
  const auto hu = parse_int(get("hidden_units"));
  const auto dr = parse_double(get("embedding_dropout"));
  const auto vs = parse_int(get("vocab_size"));
  const auto hz = parse_int(get("horizon_hours"));
  if (!ed || !hu || !dr || !vs || !hz) fail("malformed header");
  cfg.embed_dim = static_cast<int>(*ed);
  cfg.hidden_units = static_cast<int>(*hu);
  cfg.embedding_dropout = *dr;
  cfg.vocab_size = static_cast<std::size_t>(*vs);
  cfg.horizon_hours = static_cast<int>(*hz);
  ModelParams params(cfg);
  std::size_t pos = header_end + 2;
  auto flat = params.flat();
  for (const auto& b : params.blocks()) {
    const auto eol = bytes.find('\n', pos);
    if (eol == std::string::npos) fail("truncated block header");
    const std::string expect = "block " + b.name + " " + std::to_string(b.rows) + " " + std::to_string(b.cols);
    if (bytes.compare(pos, eol - pos, expect) != 0) fail("expected '" + expect + "'");
    pos = eol + 1;
    if (pos + 8 * b.size() + 1 > bytes.size()) fail("truncated block " + b.name);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (std::size_t i = 0; i < b.size(); ++i) flat[b.offset + i] = get_le(p + 8 * i);
    pos += 8 * b.size() + 1;
  }
  return params;
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  auto kv = parse_kv_lines(read_file(meta_path(path)));
  CheckpointMeta meta;
  if (const auto it = kv.find("vocab_hash"); it != kv.end()) meta.vocab_hash = it->second;
  if (const auto it = kv.find("seed"); it != kv.end()) meta.seed = static_cast<std::uint64_t>(parse_int(it->second).value_or(0));
  kv.erase("vocab_hash");
  kv.erase("seed");
  meta.extra = std::move(kv);
  return meta;
}

}  // namespace ehrseq
