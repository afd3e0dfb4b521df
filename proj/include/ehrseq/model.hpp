#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ehrseq/tokenize.hpp"

namespace ehrseq {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int embed_dim = 32;
  int hidden_units = 64;
  double embedding_dropout = 0.0;
  std::size_t vocab_size = 2;
  int horizon_hours = 48;

  void validate() const;
  std::size_t parameter_count() const;
  bool operator==(const ModelConfig&) const = default;
};

/// All trainable parameters in one flat row-major buffer, partitioned into
/// named blocks. Gradients and optimizer moments reuse the same layout.
class ModelParams {
public:
  struct Block {
    std::string name;
    std::size_t offset;
    std::size_t rows;
    std::size_t cols;
    std::size_t size() const { return rows * cols; }
  };

  ModelParams() = default;
  explicit ModelParams(const ModelConfig& config);  // all zeros

  const ModelConfig& config() const { return config_; }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  void set_zero();
  void add(const ModelParams& other);

  using MatMap = Eigen::Map<RowMatrix>;
  using ConstMatMap = Eigen::Map<const RowMatrix>;
  using VecMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

  // Gate rows are ordered input, forget, cell, output.
  MatMap embedding() { return mat(0); }
  VecMap token_weights() { return vec(1); }
  MatMap input_weights() { return mat(2); }
  MatMap recurrent_weights() { return mat(3); }
  VecMap gate_bias() { return vec(4); }
  VecMap head_weights() { return vec(5); }
  double& head_bias() { return data_[blocks_[6].offset]; }

  ConstMatMap embedding() const { return mat(0); }
  ConstVecMap token_weights() const { return vec(1); }
  ConstMatMap input_weights() const { return mat(2); }
  ConstMatMap recurrent_weights() const { return mat(3); }
  ConstVecMap gate_bias() const { return vec(4); }
  ConstVecMap head_weights() const { return vec(5); }
  double head_bias() const { return data_[blocks_[6].offset]; }

  bool operator==(const ModelParams& o) const { return config_ == o.config_ && data_ == o.data_; }

private:
  MatMap mat(std::size_t b);
  ConstMatMap mat(std::size_t b) const;
  VecMap vec(std::size_t b);
  ConstVecMap vec(std::size_t b) const;

  ModelConfig config_;
  std::vector<Block> blocks_;
  std::vector<double> data_;
};

using Gradients = ModelParams;

/// Deterministic for a fixed seed; embedding row 0 and token weights start at
/// zero, gate biases at zero except the forget gate (1.0).
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Softmax over the learned per-token weights of the surviving, non-missing
/// tokens, summed in ascending token order. `keep` (optional) marks which
/// positions survived embedding dropout.
Eigen::VectorXd aggregate_hour(std::span<const std::int32_t> token_ids, const ModelParams& params,
                               std::span<const std::uint8_t> keep = {});

struct LstmState {
  Eigen::VectorXd h;
  Eigen::VectorXd c;
};

LstmState lstm_step(const Eigen::VectorXd& x, const LstmState& state, const ModelParams& params);

enum class Mode { train, eval };

struct Trajectory {
  std::vector<double> probabilities;  // p_1..p_T, one per observed hour
  std::vector<double> hidden_norms;   // ||h_t|| per hour, for inspection
};

inline constexpr double kProbabilityClamp = 1e-7;

/// Runs the model over the stay's observed hours (optionally fewer).
Trajectory forward(const TokenizedStay& stay, const ModelParams& params, Mode mode = Mode::eval,
                   std::uint64_t seed = 0, int max_hours = -1);

/// Mean binary cross entropy over every (stay, hour) term; target 1 = death.
double loss(std::span<const Trajectory> trajectories, std::span<const int> targets);

struct BatchResult {
  double loss = 0.0;
  std::size_t terms = 0;
};

/// Exact gradient of the batch loss, accumulated into `grads` (overwritten).
/// Stay i of the batch draws its dropout mask from derive_seed(seed, i).
/// With threads > 1 each worker owns a gradient buffer; buffers are summed in worker order.
BatchResult backward(std::span<const TokenizedStay* const> batch, const ModelParams& params, Gradients& grads,
                     Mode mode, std::uint64_t seed, int threads = 1);

struct RankedToken {
  std::size_t position;  // index within the hour's token list
  std::int32_t token;
  double weight;  // softmax weight among the hour's ranked tokens
};

/// Tokens of one hour by descending aggregation weight; ties by ascending
/// token index, then position. Missing-value tokens are not ranked.
std::vector<RankedToken> rank_hour(std::span<const std::int32_t> token_ids, const ModelParams& params);

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string vocab_hash;
  std::map<std::string, std::string> extra;
};

inline constexpr std::string_view kAggregation = "softmax_token_weights";

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params, const CheckpointMeta& meta);
ModelParams read_checkpoint(const std::filesystem::path& path);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace ehrseq
