#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ehrseq/diagnostics.hpp"
#include "ehrseq/model.hpp"

namespace ehrseq {

/// Mann-Whitney AUROC, positives = label 1, ties count one half.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
  double fpr;
  double tpr;
};

struct RocResult {
  std::vector<RocPoint> points;  // (0,0) .. (1,1), one vertex per distinct score
  double auroc = 0.5;            // trapezoidal area under `points`
};

RocResult roc_curve(std::span<const double> scores, std::span<const int> labels);

struct BootstrapOptions {
  int resamples = 10000;
  double level = 0.95;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct Interval {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::uint64_t redraws = 0;  // resamples redrawn because they held one class
};

/// Percentile interval of AUROC over stay-level resamples with replacement.
/// Resample b draws from derive_seed(seed, b), so results do not depend on threads.
Interval bootstrap_ci(std::span<const double> scores, std::span<const int> labels, const BootstrapOptions& options);

/// Same resampling applied jointly to several models scored on the same stays;
/// the statistic is the mean of their AUROCs.
Interval bootstrap_ci_pooled(std::span<const std::vector<double>> score_sets, std::span<const int> labels,
                             const BootstrapOptions& options);

enum class CensorMode { carry_forward, observed_only };

struct HourMetric {
  int hour = 0;  // prediction made after `hour` hours of data
  std::size_t stays = 0;
  bool defined = false;
  double auroc = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct DynamicAuroc {
  std::vector<HourMetric> hours;
  Diagnostics diagnostics;
};

/// Per-hour AUROC for hours 1..horizon. `fold_trajectories[f][i]` holds
/// p_1..p_T of stay i under fold model f; with several folds the point
/// estimate is the mean of the per-fold AUROCs. resamples == 0 skips intervals.
DynamicAuroc dynamic_auroc(std::span<const std::vector<std::vector<double>>> fold_trajectories,
                           std::span<const int> labels, int horizon, CensorMode mode,
                           const BootstrapOptions& options);

struct CalibrationPoint {
  int bin = 0;
  std::size_t count = 0;
  double mean_predicted = 0.0;
  double observed_rate = 0.0;
};

/// Equal-width probability bins; empty bins are omitted.
std::vector<CalibrationPoint> calibration_curve(std::span<const double> probabilities, std::span<const int> labels,
                                                int n_bins);

struct CaseEvent {
  std::size_t rank = 0;  // 1-based
  std::string label;
  std::string value;
  std::string band;  // percentile band for binned numbers, empty otherwise
  std::string token;
  double weight = 0.0;
};

struct CaseHour {
  int hour = 0;
  double probability = 0.0;  // prediction after this hour's events
  std::size_t ranked = 0;
  std::vector<CaseEvent> events;
};

/// Hourly predictions with events ranked by their learned aggregation weight.
std::vector<CaseHour> report_case(const BucketedStay& stay, const ModelParams& params, const Vocab& vocab,
                                  const BinTable& bins);

/// Table with columns Hour, Rank, Event name, Value (percentile).
std::string format_case_table(std::span<const CaseHour> hours, std::size_t top, bool with_probability = true);

}  // namespace ehrseq
