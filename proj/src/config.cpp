#include "ehrseq/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

#include "ehrseq/common.hpp"

namespace ehrseq {

namespace {

using Setter = std::function<void(RunConfig&, std::string_view)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Entry {
  OptionInfo info;
  Setter set;
  Getter get;
};

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw_usage("option " + std::string(key) + ": expected " + std::string(expected) + ", got '" + std::string(value) +
              "'");
}

template <typename T>
T parse_integer(std::string_view key, std::string_view v) {
  const auto x = parse_int(v);
  if (!x || (std::is_unsigned_v<T> && *x < 0)) bad_value(key, v, "an integer");
  return static_cast<T>(*x);
}

double parse_number(std::string_view key, std::string_view v) {
  const auto x = parse_double(v);
  if (!x) bad_value(key, v, "a number");
  return *x;
}

std::vector<std::string_view> list_items(std::string_view v) {
  std::vector<std::string_view> out;
  for (auto item : split(v, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
Entry field(std::string_view key, std::string_view help, std::string_view commands, T RunConfig::*member) {
  Entry e{{key, help, commands}, {}, {}};
  e.set = [key, member](RunConfig& c, std::string_view v) {
    if constexpr (std::is_same_v<T, std::string>) {
      c.*member = std::string(v);
    } else if constexpr (std::is_same_v<T, bool>) {
      if (v == "1" || v == "true" || v == "yes" || v == "on") c.*member = true;
      else if (v == "0" || v == "false" || v == "no" || v == "off") c.*member = false;
      else bad_value(key, v, "true or false");
    } else if constexpr (std::is_same_v<T, char>) {
      if (v == "\\t" || v == "tab") c.*member = '\t';
      else if (v.size() == 1) c.*member = v[0];
      else bad_value(key, v, "a single character");
    } else if constexpr (std::is_same_v<T, double>) {
      c.*member = parse_number(key, v);
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      std::vector<int> out;
      for (auto item : list_items(v)) out.push_back(parse_integer<int>(key, item));
      c.*member = out;
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      std::vector<double> out;
      for (auto item : list_items(v)) out.push_back(parse_number(key, item));
      c.*member = out;
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      std::vector<std::string> out;
      for (auto item : list_items(v)) out.emplace_back(item);
      c.*member = out;
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      std::uint64_t x = 0;
      const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
      if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "an unsigned integer");
      c.*member = x;
    } else {
      c.*member = parse_integer<T>(key, v);
    }
  };
  e.get = [member](const RunConfig& c) -> std::string {
    const auto& x = c.*member;
    if constexpr (std::is_same_v<T, std::string>) {
      return x;
    } else if constexpr (std::is_same_v<T, bool>) {
      return x ? "true" : "false";
    } else if constexpr (std::is_same_v<T, char>) {
      return x == '\t' ? std::string("\\t") : std::string(1, x);
    } else if constexpr (std::is_same_v<T, double>) {
      return format_double(x);
    } else if constexpr (std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<double>> ||
                         std::is_same_v<T, std::vector<std::string>>) {
      std::string out;
      for (const auto& item : x) {
        if (!out.empty()) out += ',';
        if constexpr (std::is_same_v<T, std::vector<double>>) out += format_double(item);
        else if constexpr (std::is_same_v<T, std::vector<int>>) out += std::to_string(item);
        else out += item;
      }
      return out;
    } else {
      return std::to_string(x);
    }
  };
  return e;
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      field("events", "event table(s), comma separated", "ingest", &RunConfig::events),
      field("stays", "stays table (admission time, age, mortality)", "ingest", &RunConfig::stays),
      field("scores", "severity score table (ICUSTAY_ID, OASIS, SAPSII)", "evaluate", &RunConfig::scores),
      field("cohort", "bucketed cohort file", "split fit-bins build-vocab encode rank report", &RunConfig::cohort),
      field("split", "split plan file", "fit-bins build-vocab train evaluate", &RunConfig::split),
      field("bins-table", "percentile bin table file", "build-vocab encode rank report", &RunConfig::bins_path),
      field("vocab", "vocabulary file", "encode train rank report", &RunConfig::vocab),
      field("encoded", "encoded cohort file", "train evaluate predict", &RunConfig::encoded),
      field("run-dir", "training run directory", "evaluate", &RunConfig::run_dir),
      field("checkpoint", "model checkpoint", "predict rank report", &RunConfig::checkpoint),
      field("out", "output path", "synth ingest split fit-bins build-vocab encode train evaluate", &RunConfig::out),
      field("bins", "percentile bins per continuous label", "fit-bins", &RunConfig::bins),
      field("horizon", "hours of data per stay", "synth ingest", &RunConfig::horizon),
      field("event-cap", "maximum events kept per stay", "ingest", &RunConfig::event_cap),
      field("delimiter", "event table delimiter (a character or \\t)", "ingest", &RunConfig::delimiter),
      field("stay-column", "event table stay id column", "ingest", &RunConfig::stay_column),
      field("label-column", "event table label column", "ingest", &RunConfig::label_column),
      field("value-column", "event table value column", "ingest", &RunConfig::value_column),
      field("time-column", "event table timestamp column", "ingest", &RunConfig::time_column),
      field("test-fraction", "share of stays held out for testing", "split", &RunConfig::test_fraction),
      field("validation-size", "stays per fold validation set", "split", &RunConfig::validation_size),
      field("folds", "cross-validation folds", "split", &RunConfig::folds),
      field("embed-dims", "embedding sizes to search", "train", &RunConfig::embed_dims),
      field("hidden-units", "LSTM sizes to search", "train", &RunConfig::hidden_units),
      field("dropouts", "embedding dropout rates to search", "train", &RunConfig::dropouts),
      field("batch-size", "stays per mini-batch", "train", &RunConfig::batch_size),
      field("max-epochs", "upper bound on training epochs", "train", &RunConfig::max_epochs),
      field("patience", "epochs without validation improvement before stopping", "train", &RunConfig::patience),
      field("learning-rate", "Adam step size", "train", &RunConfig::learning_rate),
      field("shuffle-labels", "permute training outcomes (null control)", "train", &RunConfig::shuffle_labels),
      field("bootstrap", "bootstrap resamples (0 skips intervals)", "evaluate", &RunConfig::bootstrap),
      field("level", "confidence level", "evaluate", &RunConfig::level),
      field("censor", "hours after discharge: carry_forward or observed_only", "evaluate", &RunConfig::censor),
      field("calibration-bins", "bins of the calibration curve", "evaluate", &RunConfig::calibration_bins),
      field("stay", "stay id", "predict rank report", &RunConfig::stay_id),
      field("upto-hour", "hours to predict (0: observed hours)", "predict", &RunConfig::upto_hour),
      field("hour", "hour to rank (1-based)", "rank", &RunConfig::hour),
      field("top", "events listed per hour", "rank report", &RunConfig::top),
      field("n-stays", "synthetic stays", "synth", &RunConfig::synth_stays),
      field("base-rate", "synthetic mortality rate", "synth", &RunConfig::base_rate),
      field("signal-scale", "synthetic signal strength (negative: default)", "synth", &RunConfig::signal_scale),
      field("tautology-rate", "hourly rate of the leaked code-status event in dying stays", "synth",
            &RunConfig::tautology_rate),
      field("artifact-rate", "rate of impossible pH readings (negative: default)", "synth", &RunConfig::artifact_rate),
      field("seed", "random seed", "synth split train evaluate", &RunConfig::seed),
      field("threads", "worker threads (1 is bit-reproducible)",
            "synth ingest fit-bins build-vocab encode train evaluate", &RunConfig::threads),
  };
  return table;
}

const Entry& find_entry(std::string_view key) {
  for (const auto& e : entries())
    if (e.info.key == key) return e;
  throw_usage("unknown option '" + std::string(key) + "'");
}

}  // namespace

std::span<const OptionInfo> option_table() {
  static const std::vector<OptionInfo> infos = [] {
    std::vector<OptionInfo> out;
    for (const auto& e : entries()) out.push_back(e.info);
    return out;
  }();
  return infos;
}

std::span<const std::string_view> subcommands() {
  static const std::string_view names[] = {"synth",  "ingest",   "split",   "fit-bins", "build-vocab", "encode",
                                           "train",  "evaluate", "predict", "rank",     "report"};
  return names;
}

std::string_view subcommand_help(std::string_view s) {
  if (s == "synth") return "generate a synthetic cohort with a known risk signal";
  if (s == "ingest") return "link events to stays, apply exclusions and bucket by hour";
  if (s == "split") return "stratified test split and cross-validation folds";
  if (s == "fit-bins") return "fit percentile bins on the training pool";
  if (s == "build-vocab") return "build the token vocabulary from the training pool";
  if (s == "encode") return "tokenize every stay into hourly token indices";
  if (s == "train") return "grid search with early stopping on every fold";
  if (s == "evaluate") return "test AUROC, dynamic AUROC, calibration and severity-score baselines";
  if (s == "predict") return "hourly mortality probabilities for one stay";
  if (s == "rank") return "events of one hour ranked by learned weight";
  if (s == "report") return "hourly probabilities with ranked events for one stay";
  return "";
}

void set_option(RunConfig& config, std::string_view key, std::string_view value) {
  find_entry(key).set(config, trim(value));
}

std::string get_option(const RunConfig& config, std::string_view key) { return find_entry(key).get(config); }

void apply_config_text(RunConfig& config, std::string_view text) {
  std::size_t lineno = 0;
  for (auto line : split(text, '\n')) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw_usage("config line " + std::to_string(lineno) + ": expected key = value");
    set_option(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

std::vector<ConfigError> validate_config(const RunConfig& c) {
  std::vector<ConfigError> errors;
  auto check = [&](bool ok, std::string field, std::string message) {
    if (!ok) errors.push_back({std::move(field), std::move(message)});
  };
  check(c.bins >= 2, "bins", "bin count must be at least 2");
  check(c.horizon >= 1, "horizon", "horizon must be at least 1 hour");
  check(c.event_cap >= 1, "event-cap", "event cap must be positive");
  check(c.test_fraction > 0.0 && c.test_fraction < 1.0, "test-fraction", "must lie in (0, 1)");
  check(c.validation_size >= 1, "validation-size", "must be positive");
  check(c.folds >= 1, "folds", "fold count must be at least 1");
  check(!c.embed_dims.empty() && std::all_of(c.embed_dims.begin(), c.embed_dims.end(), [](int x) { return x > 0; }),
        "embed-dims", "needs at least one positive size");
  check(!c.hidden_units.empty() &&
            std::all_of(c.hidden_units.begin(), c.hidden_units.end(), [](int x) { return x > 0; }),
        "hidden-units", "needs at least one positive size");
  check(!c.dropouts.empty() &&
            std::all_of(c.dropouts.begin(), c.dropouts.end(), [](double x) { return x >= 0.0 && x < 1.0; }),
        "dropouts", "needs at least one rate in [0, 1)");
  check(c.batch_size >= 1, "batch-size", "must be positive");
  check(c.max_epochs >= 1, "max-epochs", "must be positive");
  check(c.patience >= 0, "patience", "must be non-negative");
  check(c.learning_rate > 0.0, "learning-rate", "must be positive");
  check(c.bootstrap >= 0, "bootstrap", "must be non-negative");
  check(c.level > 0.0 && c.level < 1.0, "level", "must lie in (0, 1)");
  check(c.censor == "carry_forward" || c.censor == "observed_only", "censor",
        "must be carry_forward or observed_only");
  check(c.calibration_bins >= 2, "calibration-bins", "must be at least 2");
  check(c.upto_hour >= 0, "upto-hour", "must be non-negative");
  check(c.hour >= 1, "hour", "must be at least 1");
  check(c.top >= 1, "top", "must be positive");
  check(c.synth_stays >= 1, "n-stays", "must be positive");
  check(c.base_rate > 0.0 && c.base_rate < 1.0, "base-rate", "must lie in (0, 1)");
  check(c.tautology_rate >= 0.0 && c.tautology_rate < 1.0, "tautology-rate", "must lie in [0, 1)");
  check(c.artifact_rate < 1.0, "artifact-rate", "must be below 1");
  check(c.threads >= 1, "threads", "must be at least 1");
  return errors;
}

}  // namespace ehrseq
