#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ehrseq/ingest.hpp"

namespace ehrseq {

/// A numeric event type; dying stays draw values shifted by `shift` standard deviations.
struct ContinuousLabel {
  std::string name;
  double mean = 0.0;
  double sd = 1.0;
  double shift = 0.0;
  int decimals = 0;
  double weight = 1.0;             // relative event frequency
  double artifact_rate = 0.0;      // share of impossible readings (same in both classes)
  double artifact_value = 0.0;
};

/// A categorical event type; dying stays reweight category odds by exp(log_odds_shift).
struct DiscreteLabel {
  std::string name;
  std::vector<std::string> categories;
  std::vector<double> probabilities;  // surviving stays
  std::vector<double> log_odds_shift;
  double weight = 1.0;
};

struct GeneratorConfig {
  std::size_t n_stays = 2000;
  int horizon_hours = 48;
  // Expected events in hour h: rate_floor + (rate_start - rate_floor) * exp(-h / rate_decay_hours).
  double rate_start = 48.0;
  double rate_floor = 28.0;
  double rate_decay_hours = 12.0;
  double base_rate = 0.132;
  double signal_scale = 1.0;  // multiplies every class-conditional effect; 0 gives a noise-only cohort
  double missing_rate = 0.02;
  // Per-hour probability that a dying stay records the code-status tautology
  // event; surviving stays record it at 5% of this rate.
  double tautology_rate = 0.0;
  double short_stay_fraction = 0.1;
  double minor_fraction = 0.0;
  double undocumented_fraction = 0.0;
  std::uint64_t seed = 1;
  std::vector<ContinuousLabel> continuous;
  std::vector<DiscreteLabel> discrete;

  /// Default configuration with the built-in label universe.
  static GeneratorConfig defaults();
  void validate() const;
};

inline constexpr std::string_view kTautologyLabel = "Code Status";
inline constexpr std::string_view kTautologyValue = "CPR Not Indicated";

struct SynthCohort {
  int horizon_hours = 48;
  std::vector<StayRecord> stays;               // events included, time ordered
  std::vector<int> died;                       // planted outcome
  std::vector<int> observed_hours;             // generated stay length in hours
  std::vector<std::vector<double>> oracle;     // oracle[i][t]: posterior after t hours, t = 0..horizon
  std::vector<double> oasis;
  std::vector<double> saps;
};

/// Deterministic for a fixed seed regardless of `threads` (per-stay derived seeds).
SynthCohort generate_cohort(const GeneratorConfig& config, int threads = 1);

/// AUROC of the Bayes posterior after `at_hour` hours.
double bayes_auroc(const SynthCohort& cohort, int at_hour);
double bayes_auroc(const GeneratorConfig& config, int at_hour, int threads = 1);

/// Writes events.csv, stays.csv, scores.csv and truth.tsv into `dir`.
void write_synth(const std::filesystem::path& dir, const SynthCohort& cohort);

}  // namespace ehrseq
