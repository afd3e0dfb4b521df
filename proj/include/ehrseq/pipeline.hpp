#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ehrseq/common.hpp"
#include "ehrseq/config.hpp"
#include "ehrseq/eval.hpp"
#include "ehrseq/optim.hpp"
#include "ehrseq/train.hpp"

namespace ehrseq {

struct RunContext {
  std::function<void(std::string_view)> output;  // standard output text
  ProgressFn progress;                           // machine-readable progress lines
};

/// Validates the configuration (field errors become one usage error), checks
/// that every input exists, then runs the subcommand.
void run_subcommand(std::string_view name, const RunConfig& config, const RunContext& context = {});

/// Severity scores keyed by stay id (columns ICUSTAY_ID, OASIS, SAPSII).
struct SeverityScores {
  std::vector<std::string> stay_ids;
  std::vector<double> oasis;
  std::vector<double> saps;
};
SeverityScores read_scores(const std::filesystem::path& path);

struct BaselineResult {
  std::string name;
  CalibrationModel model;
  Interval auroc;
  std::vector<double> test_probabilities;
};

struct EvalReport {
  std::size_t test_stays = 0;
  std::size_t deaths = 0;
  int horizon = 48;
  std::vector<double> fold_auroc;  // per fold, at the horizon
  Interval auroc;                  // fold mean at the horizon
  DynamicAuroc dynamic;
  RocResult roc;  // fold-averaged probability at the horizon
  std::vector<CalibrationPoint> calibration;
  std::vector<BaselineResult> baselines;
};

struct EvalInputs {
  EncodedCohort encoded;
  SplitPlan plan;
  std::vector<HourlyPredictions> folds;
  const SeverityScores* scores = nullptr;  // optional
};

EvalReport evaluate(const EvalInputs& inputs, const RunConfig& config);
std::string format_report(const EvalReport& report, const RunConfig& config);

}  // namespace ehrseq
