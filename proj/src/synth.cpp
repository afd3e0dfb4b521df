#include "ehrseq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ehrseq/csv.hpp"
#include "ehrseq/eval.hpp"
#include "ehrseq/random.hpp"

namespace ehrseq {

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig c;
  // name, mean, sd, shift (sd units, dying stays), decimals, weight, artifact rate, artifact value
  c.continuous = {
      {"Heart Rate", 86, 17, 0.05, 0, 8, 0, 0},
      {"Respiratory Rate", 19, 5, 0.05, 0, 6, 0, 0},
      {"NBP [Systolic]", 120, 20, -0.04, 0, 4, 0, 0},
      {"NBP [Diastolic]", 62, 13, 0, 0, 4, 0, 0},
      {"SpO2", 97, 2.5, 0, 0, 6, 0, 0},
      {"Temperature F", 98.6, 1.2, 0, 1, 2, 0, 0},
      {"BUN", 25, 12, 0.3, 0, 0.4, 0, 0},
      {"Lactate", 2.0, 1.0, 0.35, 1, 0.3, 0, 0},
      {"Creatinine", 1.2, 0.5, 0.25, 1, 0.4, 0, 0},
      {"PH", 7.38, 0.06, -0.3, 2, 0.4, 0.03, 5.5},
      {"Urine Out Foley", 150, 80, 0, 0, 3, 0, 0},
      {"Inspired O2 Fraction", 45, 12, 0, 0, 2, 0, 0},
      {"CVP", 10, 4, 0, 0, 2, 0, 0},
      {"Glucose", 130, 40, 0, 0, 1, 0, 0},
  };
  c.discrete = {
      {"Eye Opening",
       {"4 Spontaneously", "3 To Speech", "2 To Pain", "1 No Response"},
       {0.6, 0.2, 0.12, 0.08},
       {-0.1, 0.0, 0.2, 0.4},
       0.5},
      {"Ectopy Type", {"None", "PVC's", "Bigeminy", "Vent. Tachy"}, {0.8, 0.12, 0.05, 0.03}, {0, 0.1, 0.3, 0.5}, 0.3},
      {"Heart Rhythm",
       {"SR (Sinus Rhythm)", "ST (Sinus Tachycardia)", "AF (Atrial Fibrillation)", "SB (Sinus Bradycardia)"},
       {0.55, 0.2, 0.15, 0.1},
       {0, 0, 0, 0},
       2},
      {"Service", {"MED", "SURG", "CMED", "CSURG", "NSURG"}, {0.2, 0.2, 0.2, 0.2, 0.2}, {0, 0, 0, 0, 0}, 0.3},
      {"Allergy 1",
       {"No Known Drug Allergies", "Penicillins", "Sulfa (Sulfonamides)"},
       {0.7, 0.2, 0.1},
       {0, 0, 0},
       0.3},
      {"Pain Management", {"[Route/Status #2] IV Gtt", "PCA", "PO"}, {0.3, 0.3, 0.4}, {0, 0, 0}, 0.5},
      {"Activity", {"Bed Rest", "Chair", "Ambulate"}, {0.5, 0.3, 0.2}, {0, 0, 0}, 1},
      {"Code Status", {"Full Code"}, {1.0}, {0.0}, 0.3},
  };
  return c;
}

void GeneratorConfig::validate() const {
  if (n_stays == 0) throw_usage("synth: n_stays must be positive");
  if (horizon_hours <= 0) throw_usage("synth: horizon must be positive");
  if (!(rate_start > 0 && rate_floor > 0 && rate_decay_hours > 0)) throw_usage("synth: event rates must be positive");
  if (!(base_rate > 0 && base_rate < 1)) throw_usage("synth: base rate must be in (0, 1)");
  if (!(missing_rate >= 0 && missing_rate < 1)) throw_usage("synth: missing rate must be in [0, 1)");
  if (!(tautology_rate >= 0 && tautology_rate < 1)) throw_usage("synth: tautology rate must be in [0, 1)");
  for (double f : {short_stay_fraction, minor_fraction, undocumented_fraction})
    if (!(f >= 0 && f <= 1)) throw_usage("synth: fractions must be in [0, 1]");
  if (continuous.empty() && discrete.empty()) throw_usage("synth: empty label universe");
  for (const auto& l : continuous)
    if (!(l.sd > 0) || l.weight < 0 || l.artifact_rate < 0 || l.artifact_rate >= 1)
      throw_usage("synth: bad continuous label " + l.name);
  for (const auto& l : discrete)
    if (l.categories.empty() || l.categories.size() != l.probabilities.size() ||
        l.categories.size() != l.log_odds_shift.size() || l.weight < 0)
      throw_usage("synth: bad discrete label " + l.name);
}

namespace {

struct StayPlan {
  std::string stay_id;
  std::string patient_id;
  Timestamp intime;
  double age;
  int died;
  bool documented;
  int hours;
  std::uint64_t seed;
};

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

double logit(double p) { return std::log(p / (1 - p)); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct DiscreteModel {
  std::vector<double> p0, p1;
  std::vector<double> llr;  // log(p1 / p0); exactly zero for labels without effect
};

DiscreteModel discrete_model(const DiscreteLabel& l, double scale) {
  DiscreteModel m{l.probabilities, l.probabilities, {}};
  const double total0 = std::accumulate(m.p0.begin(), m.p0.end(), 0.0);
  bool informative = false;
  double z = 0.0;
  for (std::size_t k = 0; k < m.p0.size(); ++k) {
    m.p0[k] /= total0;
    informative |= scale * l.log_odds_shift[k] != 0.0;
    z += m.p0[k] * std::exp(scale * l.log_odds_shift[k]);
  }
  const double log_z = informative ? std::log(z) : 0.0;
  for (std::size_t k = 0; k < m.p0.size(); ++k) {
    m.llr.push_back(informative ? scale * l.log_odds_shift[k] - log_z : 0.0);
    m.p1[k] = informative ? m.p0[k] * std::exp(m.llr[k]) : m.p0[k];
  }
  return m;
}

struct StayOutput {
  std::vector<RawEvent> events;
  std::vector<double> oracle;
};

StayOutput generate_stay(const GeneratorConfig& cfg, const StayPlan& plan, const std::vector<double>& label_weights,
                         const std::vector<DiscreteModel>& dmodels) {
  Rng rng(plan.seed);
  StayOutput out;
  out.oracle.assign(static_cast<std::size_t>(cfg.horizon_hours) + 1, 0.0);
  double log_odds = logit(cfg.base_rate);
  out.oracle[0] = cfg.base_rate;
  const double q1 = cfg.tautology_rate;
  const double q0 = cfg.tautology_rate * 0.05;
  const std::size_t n_cont = cfg.continuous.size();

  for (int h = 0; h < cfg.horizon_hours; ++h) {
    if (h < plan.hours) {
      const double rate =
          cfg.rate_floor + (cfg.rate_start - cfg.rate_floor) * std::exp(-static_cast<double>(h) / cfg.rate_decay_hours);
      const auto count = rng.poisson(rate);
      std::vector<RawEvent> hour_events;
      for (std::uint64_t e = 0; e < count; ++e) {
        const auto which = rng.categorical(label_weights);
        RawEvent ev{plan.stay_id, "", "", plan.intime + h * 3600 + static_cast<Timestamp>(rng.below(3600))};
        const bool missing = rng.bernoulli(cfg.missing_rate);
        if (which < n_cont) {
          const auto& l = cfg.continuous[which];
          ev.label = l.name;
          const double shift = cfg.signal_scale * l.shift;
          if (rng.bernoulli(l.artifact_rate)) {
            ev.value = format_fixed(l.artifact_value, l.decimals);  // same mass in both classes
          } else {
            const double z = rng.normal() + (plan.died ? shift : 0.0);
            const std::string text = format_fixed(l.mean + l.sd * z, l.decimals);
            const double zr = (*parse_double(text) - l.mean) / l.sd;
            ev.value = text;
            if (!missing) log_odds += shift * zr - 0.5 * shift * shift;
          }
        } else {
          const auto& l = cfg.discrete[which - n_cont];
          const auto& m = dmodels[which - n_cont];
          ev.label = l.name;
          const auto k = rng.categorical(plan.died ? m.p1 : m.p0);
          ev.value = l.categories[k];
          if (!missing) log_odds += m.llr[k];
        }
        if (missing) ev.value.clear();
        hour_events.push_back(std::move(ev));
      }
      if (q1 > 0.0) {
        const bool present = rng.bernoulli(plan.died ? q1 : q0);
        log_odds += present ? std::log(q1 / q0) : std::log((1 - q1) / (1 - q0));
        if (present)
          hour_events.push_back(RawEvent{plan.stay_id, std::string(kTautologyLabel), std::string(kTautologyValue),
                                         plan.intime + h * 3600 + static_cast<Timestamp>(rng.below(3600))});
      }
      std::stable_sort(hour_events.begin(), hour_events.end(),
                       [](const RawEvent& a, const RawEvent& b) { return a.time < b.time; });
      for (auto& ev : hour_events) out.events.push_back(std::move(ev));
    }
    out.oracle[static_cast<std::size_t>(h) + 1] = sigmoid(log_odds);
  }
  return out;
}

}  // namespace

SynthCohort generate_cohort(const GeneratorConfig& config, int threads) {
  config.validate();
  Rng rng(config.seed);
  const Timestamp base = *parse_timestamp("2100-01-01 00:00:00");
  std::vector<StayPlan> plans(config.n_stays);
  std::size_t patients = 0;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    auto& p = plans[i];
    p.stay_id = std::to_string(200000 + i);
    const bool repeat = i > 0 && rng.bernoulli(0.15);
    p.patient_id = repeat ? plans[i - 1].patient_id : std::to_string(10000 + patients++);
    p.intime = base + static_cast<Timestamp>(rng.below(100ULL * 365 * 86400));
    p.died = rng.bernoulli(config.base_rate) ? 1 : 0;
    p.age = rng.bernoulli(config.minor_fraction) ? rng.uniform(0.0, 17.9) : rng.uniform(18.0, 91.0);
    p.documented = !rng.bernoulli(config.undocumented_fraction);
    p.hours = config.horizon_hours;
    if (config.horizon_hours > 13 && rng.bernoulli(config.short_stay_fraction))
      p.hours = 12 + static_cast<int>(rng.below(static_cast<std::uint64_t>(config.horizon_hours - 12)));
    p.seed = derive_seed(config.seed, i);
  }

  std::vector<double> label_weights;
  for (const auto& l : config.continuous) label_weights.push_back(l.weight);
  for (const auto& l : config.discrete) label_weights.push_back(l.weight);
  std::vector<DiscreteModel> dmodels;
  for (const auto& l : config.discrete) dmodels.push_back(discrete_model(l, config.signal_scale));

  std::vector<StayOutput> outputs(plans.size());
  parallel_for(plans.size(), threads,
               [&](std::size_t i) { outputs[i] = generate_stay(config, plans[i], label_weights, dmodels); });

  SynthCohort cohort;
  cohort.horizon_hours = config.horizon_hours;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const auto& p = plans[i];
    StayRecord rec{p.stay_id,
                   p.patient_id,
                   p.intime,
                   std::round(p.age * 10) / 10,
                   !p.documented ? Mortality::undocumented : p.died ? Mortality::died : Mortality::survived,
                   std::move(outputs[i].events)};
    cohort.stays.push_back(std::move(rec));
    cohort.died.push_back(p.died);
    cohort.observed_hours.push_back(p.hours);
    cohort.oracle.push_back(std::move(outputs[i].oracle));
    // Severity scores: weakly informative, drawn after the events so they do not disturb them.
    Rng srng(derive_seed(p.seed, 0x5ca1e));
    cohort.oasis.push_back(std::clamp(std::round(srng.normal(30.0 + 5.0 * p.died, 8.0)), 0.0, 80.0));
    cohort.saps.push_back(std::clamp(std::round(srng.normal(33.0 + 10.0 * p.died, 13.0)), 0.0, 160.0));
  }
  return cohort;
}

double bayes_auroc(const SynthCohort& cohort, int at_hour) {
  if (at_hour < 0 || at_hour > cohort.horizon_hours) throw_usage("bayes_auroc: hour outside horizon");
  std::vector<double> scores;
  for (const auto& o : cohort.oracle) scores.push_back(o[static_cast<std::size_t>(at_hour)]);
  return auroc(scores, cohort.died);
}

double bayes_auroc(const GeneratorConfig& config, int at_hour, int threads) {
  return bayes_auroc(generate_cohort(config, threads), at_hour);
}

void write_synth(const std::filesystem::path& dir, const SynthCohort& cohort) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "events.csv", [&](std::ostream& out) {
    write_record(out, {"ICUSTAY_ID", "LABEL", "VALUE", "CHARTTIME"});
    for (const auto& s : cohort.stays)
      for (const auto& e : s.events) {
        const auto t = format_timestamp(e.time);
        write_record(out, {e.stay_id, e.label, e.value, t});
      }
  });
  write_file_atomic(dir / "stays.csv", [&](std::ostream& out) {
    write_record(out, {"ICUSTAY_ID", "SUBJECT_ID", "INTIME", "AGE", "HOSPITAL_EXPIRE_FLAG"});
    for (const auto& s : cohort.stays) {
      const auto t = format_timestamp(s.intime);
      const auto age = format_double(s.age);
      const std::string flag = s.mortality == Mortality::died ? "1" : s.mortality == Mortality::survived ? "0" : "";
      write_record(out, {s.stay_id, s.patient_id, t, age, flag});
    }
  });
  write_file_atomic(dir / "scores.csv", [&](std::ostream& out) {
    write_record(out, {"ICUSTAY_ID", "OASIS", "SAPSII"});
    for (std::size_t i = 0; i < cohort.stays.size(); ++i) {
      const auto o = format_double(cohort.oasis[i]);
      const auto s = format_double(cohort.saps[i]);
      write_record(out, {cohort.stays[i].stay_id, o, s});
    }
  });
  write_file_atomic(dir / "truth.tsv", [&](std::ostream& out) {
    out << "stay_id\tdied\tlatent_logit\tobserved_hours";
    for (int t = 0; t <= cohort.horizon_hours; ++t) out << "\tp_" << t;
    out << '\n';
    for (std::size_t i = 0; i < cohort.stays.size(); ++i) {
      const auto& o = cohort.oracle[i];
      out << cohort.stays[i].stay_id << '\t' << cohort.died[i] << '\t'
          << format_double(std::log(o.back() / (1 - o.back()))) << '\t' << cohort.observed_hours[i];
      for (double p : o) out << '\t' << format_double(p);
      out << '\n';
    }
  });
}

}  // namespace ehrseq
