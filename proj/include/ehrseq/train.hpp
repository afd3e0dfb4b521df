#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ehrseq/common.hpp"
#include "ehrseq/model.hpp"
#include "ehrseq/optim.hpp"
#include "ehrseq/tokenize.hpp"

namespace ehrseq {

struct SplitOptions {
  double test_fraction = 0.10;
  std::size_t validation_size = 1000;
  int folds = 10;
  std::uint64_t seed = 1;
};

struct FoldSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  bool operator==(const FoldSplit&) const = default;
};

/// Stratified hold-out test set plus k folds over the remaining pool. Each
/// fold validates on its own disjoint stratified slice and trains on the rest.
struct SplitPlan {
  std::uint64_t seed = 0;
  double test_fraction = 0.10;
  std::size_t validation_size = 0;
  std::vector<std::string> test;
  std::vector<FoldSplit> folds;

  /// Stays outside the test set (the union of each fold's train and validation).
  std::vector<std::string> pool() const;
  bool operator==(const SplitPlan&) const = default;
};

SplitPlan split_data(std::span<const std::string> stay_ids, std::span<const int> targets,
                     const SplitOptions& options);

void write_split(const std::filesystem::path& path, const SplitPlan& plan);
SplitPlan read_split(const std::filesystem::path& path);

struct TrainOptions {
  int batch_size = 128;
  int max_epochs = 100;
  int patience = 5;
  AdamHyper adam;
  std::uint64_t seed = 1;
  int threads = 1;
  ProgressFn progress;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double validation_auroc = 0.0;
};

struct TrainRunRecord {
  ModelConfig config;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 when no epoch completed
  double best_auroc = 0.0;
  ModelParams best_params;
  double wall_seconds = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

/// Probability after the stay's last observed hour; a stay without events
/// scores the model's output for an empty history.
double final_probability(const TokenizedStay& stay, const ModelParams& params);

/// Adam over shuffled mini-batches with early stopping on validation AUROC of
/// the final observed hour. Training stops once the AUROC has not strictly
/// exceeded its running best for more than `patience` epochs. A non-finite
/// loss stops training with `aborted` set; best_params then holds the last
/// good model.
TrainRunRecord train_fold(std::span<const TokenizedStay* const> train, std::span<const TokenizedStay* const> validation,
                          const ModelConfig& config, const TrainOptions& options);

struct GridResult {
  std::size_t best = 0;
  std::vector<TrainRunRecord> runs;  // grid order
};

/// Exhaustive search; best = highest validation AUROC, ties to fewer parameters, then grid order.
GridResult grid_search(std::span<const TokenizedStay* const> train, std::span<const TokenizedStay* const> validation,
                       std::span<const ModelConfig> grid, const TrainOptions& options);

/// Cartesian product in embed-major order.
std::vector<ModelConfig> make_grid(std::span<const int> embed_dims, std::span<const int> hidden_units,
                                   std::span<const double> dropouts, std::size_t vocab_size, int horizon_hours);

struct ProtocolOptions {
  std::vector<ModelConfig> grid;
  TrainOptions train;
  std::filesystem::path out_dir;
  std::string vocab_hash;
};

struct FoldOutput {
  std::filesystem::path checkpoint;
  std::filesystem::path predictions;
  std::filesystem::path log;
  GridResult grid;
};

/// Trains every fold of the plan and writes, per fold, the selected
/// checkpoint, a training log and the hourly test-set probabilities, plus a
/// run manifest. Aborted training raises a numeric error after the last good
/// checkpoint is written.
std::vector<FoldOutput> run_protocol(const EncodedCohort& data, const SplitPlan& plan, const ProtocolOptions& options);

/// Hourly probability table: stay_id, hour, probability (hours 1..observed).
struct HourlyPredictions {
  std::vector<std::string> stay_ids;
  std::vector<std::vector<double>> trajectories;
};

void write_predictions(const std::filesystem::path& path, const HourlyPredictions& predictions);
HourlyPredictions read_predictions(const std::filesystem::path& path);

}  // namespace ehrseq
