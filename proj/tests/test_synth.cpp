#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ehrseq/ingest.hpp"
#include "ehrseq/synth.hpp"

using namespace ehrseq;
namespace fs = std::filesystem;

namespace {

GeneratorConfig small(std::size_t n, std::uint64_t seed) {
  auto c = GeneratorConfig::defaults();
  c.n_stays = n;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("planted mortality matches the base rate") {
  const auto cohort = generate_cohort(small(5000, 3));
  double deaths = 0;
  for (int d : cohort.died) deaths += d;
  CHECK(std::abs(deaths / 5000 - 0.132) < 0.02);
}

TEST_CASE("generation does not depend on the thread count") {
  const auto a = generate_cohort(small(300, 5), 1);
  const auto b = generate_cohort(small(300, 5), 3);
  CHECK(a.stays == b.stays);
  CHECK(a.oracle == b.oracle);
  CHECK(a.saps == b.saps);
  CHECK_FALSE(generate_cohort(small(300, 6)).stays == a.stays);
}

TEST_CASE("a noise-only cohort gives an uninformative oracle") {
  auto c = small(2000, 7);
  c.signal_scale = 0.0;
  const auto cohort = generate_cohort(c);
  const double a = bayes_auroc(cohort, 48);
  CHECK(a >= 0.48);
  CHECK(a <= 0.52);
}

TEST_CASE("event rate follows the configured decay") {
  const auto c = small(1500, 9);
  const auto cohort = generate_cohort(c);
  for (int h : {0, 6, 24, 47}) {
    double total = 0;
    int n = 0;
    for (std::size_t i = 0; i < cohort.stays.size(); ++i) {
      if (cohort.observed_hours[i] < c.horizon_hours) continue;
      const auto& st = cohort.stays[i];
      for (const auto& e : st.events)
        if (hour_index(e.time, st.intime) == h) total += 1;
      ++n;
    }
    const double expect = c.rate_floor + (c.rate_start - c.rate_floor) * std::exp(-h / c.rate_decay_hours);
    CHECK(std::abs(total / n - expect) < 0.1 * expect);
  }
}

TEST_CASE("the oracle gains information over time") {
  const auto cohort = generate_cohort(small(2000, 11));
  const double early = bayes_auroc(cohort, 1);
  const double late = bayes_auroc(cohort, 48);
  CHECK(early > 0.5);
  CHECK(late > early);
  for (const auto& o : cohort.oracle) CHECK(o.size() == 49);
}

TEST_CASE("written files ingest without drops") {
  const auto dir = fs::temp_directory_path() / "ehrseq_test_synth";
  fs::remove_all(dir);
  auto cfg = small(150, 13);
  cfg.tautology_rate = 0.2;
  const auto cohort = generate_cohort(cfg);
  write_synth(dir, cohort);
  for (const char* f : {"events.csv", "stays.csv", "scores.csv", "truth.tsv"}) CHECK(fs::exists(dir / f));
  const auto r = ingest_files({dir / "events.csv"}, dir / "stays.csv", IngestOptions{});
  std::size_t generated = 0, kept = 0;
  for (const auto& s : cohort.stays) generated += s.events.size();
  for (const auto& s : r.cohort.stays) kept += s.total_events();
  CHECK(kept == generated);
  CHECK(r.cohort.stays.size() == cohort.stays.size());
  for (const auto& [key, n] : r.diagnostics.counts()) CHECK_MESSAGE((key.find("dropped") == std::string::npos || n == 0), key);
  fs::remove_all(dir);
}

TEST_CASE("invalid generator settings are usage errors") {
  auto c = small(10, 1);
  c.base_rate = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small(10, 1);
  c.rate_start = -1;
  CHECK_THROWS_AS(generate_cohort(c), Error);
}
