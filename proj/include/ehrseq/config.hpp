#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ehrseq {

/// Every setting of every subcommand, with full-cohort defaults
/// (20 bins, 48 h, 10 folds, 10,000 bootstrap samples).
struct RunConfig {
  // paths
  std::vector<std::string> events;  // one or more event tables
  std::string stays;
  std::string scores;
  std::string cohort;
  std::string split;
  std::string bins_path;
  std::string vocab;
  std::string encoded;
  std::string run_dir;
  std::string checkpoint;
  std::string out;

  // ingest / tokenize
  int bins = 20;
  int horizon = 48;
  std::size_t event_cap = 10000;
  char delimiter = ',';
  std::string stay_column = "ICUSTAY_ID";
  std::string label_column = "LABEL";
  std::string value_column = "VALUE";
  std::string time_column = "CHARTTIME";

  // split / train
  double test_fraction = 0.10;
  std::size_t validation_size = 1000;
  int folds = 10;
  std::vector<int> embed_dims = {16, 32, 48};
  std::vector<int> hidden_units = {32, 64, 128, 256};
  std::vector<double> dropouts = {0.0, 0.2, 0.4};
  int batch_size = 128;
  int max_epochs = 100;
  int patience = 5;
  double learning_rate = 0.0005;
  bool shuffle_labels = false;  // null-control runs: permute training targets

  // evaluate
  int bootstrap = 10000;
  double level = 0.95;
  std::string censor = "carry_forward";
  int calibration_bins = 10;

  // predict / rank / report
  std::string stay_id;
  int upto_hour = 0;
  int hour = 1;
  int top = 10;

  // synth
  std::size_t synth_stays = 2000;
  double base_rate = 0.132;
  double signal_scale = -1.0;  // negative: generator default
  double tautology_rate = 0.0;
  double artifact_rate = -1.0;  // negative: generator default

  std::uint64_t seed = 1;
  int threads = 1;
};

struct ConfigError {
  std::string field;
  std::string message;
};

/// Every violated constraint, each naming its field.
std::vector<ConfigError> validate_config(const RunConfig& config);

struct OptionInfo {
  std::string_view key;
  std::string_view help;
  std::string_view commands;  // space separated subcommands that read the option
};

std::span<const OptionInfo> option_table();
std::span<const std::string_view> subcommands();
std::string_view subcommand_help(std::string_view subcommand);

/// Sets one option from text; throws a usage error naming the key when the
/// key is unknown or the value does not parse.
void set_option(RunConfig& config, std::string_view key, std::string_view value);
std::string get_option(const RunConfig& config, std::string_view key);

/// Applies "key = value" lines; '#' starts a comment.
void apply_config_text(RunConfig& config, std::string_view text);

}  // namespace ehrseq
