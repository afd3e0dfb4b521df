#include "ehrseq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ehrseq/random.hpp"

namespace ehrseq {

namespace {

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

ClassCounts count_classes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw_usage("scores and labels differ in length");
  ClassCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw_data("labels must be 0 or 1");
    if (std::isnan(scores[i])) throw_data("NaN score");
    (labels[i] ? c.pos : c.neg)++;
  }
  return c;
}

// Stays grouped by tied score, ascending.
struct TieGroups {
  std::vector<std::size_t> order;  // stay indices sorted by score
  std::vector<std::size_t> start;  // group boundaries into `order`, plus a final sentinel
};

TieGroups tie_groups(std::span<const double> scores) {
  TieGroups g;
  g.order.resize(scores.size());
  std::iota(g.order.begin(), g.order.end(), std::size_t{0});
  std::stable_sort(g.order.begin(), g.order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  for (std::size_t i = 0; i < g.order.size(); ++i)
    if (i == 0 || scores[g.order[i]] != scores[g.order[i - 1]]) g.start.push_back(i);
  g.start.push_back(g.order.size());
  return g;
}

// AUROC where stay i appears weight[i] times; NaN when a class is absent.
double weighted_auroc(const TieGroups& g, std::span<const int> labels, std::span<const std::uint32_t> weight) {
  double neg_below = 0.0, u = 0.0, pos_total = 0.0;
  for (std::size_t k = 0; k + 1 < g.start.size(); ++k) {
    double gp = 0.0, gn = 0.0;
    for (std::size_t j = g.start[k]; j < g.start[k + 1]; ++j) {
      const auto i = g.order[j];
      (labels[i] ? gp : gn) += weight[i];
    }
    u += gp * (neg_below + 0.5 * gn);
    neg_below += gn;
    pos_total += gp;
  }
  if (pos_total == 0.0 || neg_below == 0.0) return std::nan("");
  return u / (pos_total * neg_below);
}

std::pair<double, double> percentile_interval(std::vector<double> stats, double level) {
  std::sort(stats.begin(), stats.end());
  const double alpha = 1.0 - level;
  const auto b = static_cast<double>(stats.size());
  const auto idx = [&](double q) {
    const double r = std::ceil(q * b) - 1.0;
    return static_cast<std::size_t>(std::clamp(r, 0.0, b - 1.0));
  };
  return {stats[idx(alpha / 2)], stats[idx(1.0 - alpha / 2)]};
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  const auto c = count_classes(scores, labels);
  if (c.pos == 0 || c.neg == 0) throw_data("AUROC is undefined when only one class is present");
  const auto g = tie_groups(scores);
  const std::vector<std::uint32_t> ones(scores.size(), 1);
  return weighted_auroc(g, labels, ones);
}

RocResult roc_curve(std::span<const double> scores, std::span<const int> labels) {
  const auto c = count_classes(scores, labels);
  if (c.pos == 0 || c.neg == 0) throw_data("ROC is undefined when only one class is present");
  const auto g = tie_groups(scores);
  RocResult roc;
  roc.points.push_back({0.0, 0.0});
  double tp = 0, fp = 0, area = 0;
  // Walk from the highest score down.
  for (std::size_t k = g.start.size() - 1; k-- > 0;) {
    double gp = 0, gn = 0;
    for (std::size_t j = g.start[k]; j < g.start[k + 1]; ++j) (labels[g.order[j]] ? gp : gn) += 1;
    const RocPoint prev = roc.points.back();
    tp += gp;
    fp += gn;
    const RocPoint next{fp / static_cast<double>(c.neg), tp / static_cast<double>(c.pos)};
    area += (next.fpr - prev.fpr) * (next.tpr + prev.tpr) / 2.0;
    roc.points.push_back(next);
  }
  roc.auroc = area;
  return roc;
}

Interval bootstrap_ci_pooled(std::span<const std::vector<double>> score_sets, std::span<const int> labels,
                             const BootstrapOptions& options) {
  if (score_sets.empty()) throw_usage("bootstrap needs at least one score set");
  if (options.resamples < 1) throw_usage("bootstrap resample count must be positive");
  if (!(options.level > 0.0 && options.level < 1.0)) throw_usage("bootstrap level must be in (0, 1)");
  const std::size_t n = labels.size();
  std::vector<TieGroups> groups;
  Interval out;
  for (const auto& s : score_sets) {
    if (s.size() != n) throw_usage("score set length differs from labels");
    out.point += auroc(s, labels);
    groups.push_back(tie_groups(s));
  }
  out.point /= static_cast<double>(score_sets.size());

  const auto b_count = static_cast<std::size_t>(options.resamples);
  std::vector<double> stats(b_count);
  std::vector<std::uint64_t> redraws(b_count, 0);
  parallel_chunks(b_count, options.threads, [&](int, std::size_t begin, std::size_t end) {
    std::vector<std::uint32_t> weight(n);
    for (std::size_t b = begin; b < end; ++b) {
      Rng rng(derive_seed(options.seed, b));
      while (true) {
        std::fill(weight.begin(), weight.end(), 0u);
        std::size_t pos = 0;
        for (std::size_t k = 0; k < n; ++k) {
          const auto i = rng.below(n);
          ++weight[i];
          pos += static_cast<std::size_t>(labels[i]);
        }
        if (pos > 0 && pos < n) break;
        ++redraws[b];
      }
      double sum = 0.0;
      for (const auto& g : groups) sum += weighted_auroc(g, labels, weight);
      stats[b] = sum / static_cast<double>(groups.size());
    }
  });
  for (auto r : redraws) out.redraws += r;
  std::tie(out.lo, out.hi) = percentile_interval(std::move(stats), options.level);
  return out;
}

Interval bootstrap_ci(std::span<const double> scores, std::span<const int> labels, const BootstrapOptions& options) {
  const std::vector<std::vector<double>> one{std::vector<double>(scores.begin(), scores.end())};
  return bootstrap_ci_pooled(one, labels, options);
}

DynamicAuroc dynamic_auroc(std::span<const std::vector<std::vector<double>>> fold_trajectories,
                           std::span<const int> labels, int horizon, CensorMode mode,
                           const BootstrapOptions& options) {
  if (fold_trajectories.empty()) throw_usage("dynamic AUROC needs at least one set of trajectories");
  if (horizon <= 0) throw_usage("horizon must be positive");
  DynamicAuroc out;
  const std::size_t n = labels.size();
  for (const auto& f : fold_trajectories)
    if (f.size() != n) throw_usage("trajectory count differs from labels");
  // Observed length is shared across folds (it is a property of the stay).
  for (std::size_t i = 0; i < n; ++i)
    if (fold_trajectories[0][i].empty()) out.diagnostics.add("stays.without_predictions");

  for (int t = 1; t <= horizon; ++t) {
    HourMetric m;
    m.hour = t;
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      const auto len = fold_trajectories[0][i].size();
      if (len >= static_cast<std::size_t>(t) || (mode == CensorMode::carry_forward && len > 0)) members.push_back(i);
    }
    std::vector<int> lab;
    for (auto i : members) lab.push_back(labels[i]);
    std::vector<std::vector<double>> sets;
    for (const auto& f : fold_trajectories) {
      std::vector<double> s;
      for (auto i : members) {
        const auto& traj = f[i];
        s.push_back(traj[std::min(traj.size(), static_cast<std::size_t>(t)) - 1]);
      }
      sets.push_back(std::move(s));
    }
    m.stays = members.size();
    const auto pos = static_cast<std::size_t>(std::count(lab.begin(), lab.end(), 1));
    if (pos == 0 || pos == lab.size()) {
      out.diagnostics.add("hours.omitted_single_class");
      out.hours.push_back(m);
      continue;
    }
    m.defined = true;
    if (options.resamples > 0) {
      auto opts = options;
      opts.seed = derive_seed(options.seed, static_cast<std::uint64_t>(t));
      const auto iv = bootstrap_ci_pooled(sets, lab, opts);
      m.auroc = iv.point;
      m.lo = iv.lo;
      m.hi = iv.hi;
      out.diagnostics.add("bootstrap.redraws", iv.redraws);
    } else {
      double sum = 0.0;
      for (const auto& s : sets) sum += auroc(s, lab);
      m.auroc = m.lo = m.hi = sum / static_cast<double>(sets.size());
    }
    out.hours.push_back(m);
  }
  return out;
}

std::vector<CalibrationPoint> calibration_curve(std::span<const double> probabilities, std::span<const int> labels,
                                                int n_bins) {
  if (n_bins < 2) throw_usage("calibration bin count must be at least 2");
  if (probabilities.size() != labels.size()) throw_usage("probabilities and labels differ in length");
  std::vector<CalibrationPoint> bins(static_cast<std::size_t>(n_bins));
  std::vector<double> events(bins.size(), 0.0);
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double p = probabilities[i];
    if (!(p >= 0.0 && p <= 1.0)) throw_data("probability outside [0, 1]");
    const auto b = std::min(static_cast<std::size_t>(p * n_bins), bins.size() - 1);
    bins[b].count++;
    bins[b].mean_predicted += p;
    events[b] += labels[i];
  }
  std::vector<CalibrationPoint> out;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    if (bins[b].count == 0) continue;
    auto pt = bins[b];
    pt.bin = static_cast<int>(b);
    pt.mean_predicted /= static_cast<double>(pt.count);
    pt.observed_rate = events[b] / static_cast<double>(pt.count);
    out.push_back(pt);
  }
  return out;
}

std::vector<CaseHour> report_case(const BucketedStay& stay, const ModelParams& params, const Vocab& vocab,
                                  const BinTable& bins) {
  const auto encoded = encode_stay(stay, vocab, bins);
  const auto traj = forward(encoded, params, Mode::eval);
  std::vector<CaseHour> out;
  for (std::size_t h = 0; h < traj.probabilities.size(); ++h) {
    CaseHour ch;
    ch.hour = static_cast<int>(h);
    ch.probability = traj.probabilities[h];
    const auto ranked = rank_hour(encoded.hours[h], params);
    ch.ranked = ranked.size();
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const auto& ev = stay.hours[h].events[ranked[r].position];
      CaseEvent ce{r + 1, ev.label, ev.value, "", vocab.token(ranked[r].token), ranked[r].weight};
      if (const auto cls = classify_value(ev.value); cls.is_continuous())
        if (const auto it = bins.find(ev.label); it != bins.end())
          ce.band = percentile_band(it->second.bin_of(cls.number()), it->second.bins);
      ch.events.push_back(std::move(ce));
    }
    out.push_back(std::move(ch));
  }
  return out;
}

std::string format_case_table(std::span<const CaseHour> hours, std::size_t top, bool with_probability) {
  struct Row {
    std::string hour, prob, rank, name, value;
  };
  std::vector<Row> rows;
  rows.push_back({"Hour", with_probability ? "Probability" : "", "Rank", "Event name", "Value (percentile)"});
  for (const auto& h : hours) {
    const std::size_t shown = std::min(top, h.events.size());
    char prob[32];
    std::snprintf(prob, sizeof prob, "%.3f", h.probability);
    if (shown == 0) rows.push_back({std::to_string(h.hour) + "-" + std::to_string(h.hour + 1), prob, "-", "", ""});
    for (std::size_t i = 0; i < shown; ++i) {
      const auto& e = h.events[i];
      Row r;
      if (i == 0) {
        r.hour = std::to_string(h.hour) + "-" + std::to_string(h.hour + 1);
        r.prob = prob;
      }
      r.rank = std::to_string(e.rank) + "/" + std::to_string(h.ranked);
      r.name = e.label;
      r.value = e.value.empty() ? "(missing)" : e.band.empty() ? e.value : e.value + " (" + e.band + ")";
      rows.push_back(std::move(r));
    }
  }
  std::size_t w[4] = {0, 0, 0, 0};
  for (const auto& r : rows) {
    w[0] = std::max(w[0], r.hour.size());
    w[1] = std::max(w[1], r.prob.size());
    w[2] = std::max(w[2], r.rank.size());
    w[3] = std::max(w[3], r.name.size());
  }
  std::ostringstream out;
  const auto pad = [](const std::string& s, std::size_t n) { return s + std::string(n - s.size() + 2, ' '); };
  for (const auto& r : rows) {
    out << pad(r.hour, w[0]);
    if (with_probability) out << pad(r.prob, w[1]);
    out << pad(r.rank, w[2]) << pad(r.name, w[3]) << r.value << '\n';
  }
  return out.str();
}

}  // namespace ehrseq
