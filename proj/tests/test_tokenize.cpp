#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "ehrseq/random.hpp"
#include "ehrseq/tokenize.hpp"

using namespace ehrseq;
namespace fs = std::filesystem;

TEST_CASE("value classification follows the float grammar") {
  CHECK(classify_value("7.4").is_continuous());
  CHECK(classify_value("-3").number() == -3.0);
  CHECK(classify_value("+3.").number() == 3.0);
  CHECK(classify_value(".5").number() == 0.5);
  CHECK(classify_value("1e3").number() == 1000.0);
  CHECK_FALSE(classify_value("1e").is_continuous());
  CHECK_FALSE(classify_value("7.4 ").is_continuous());
  CHECK_FALSE(classify_value("Full Code").is_continuous());
  CHECK_FALSE(classify_value("1.2.3").is_continuous());
  CHECK_FALSE(classify_value("nan").is_continuous());
  CHECK_FALSE(classify_value("inf").is_continuous());
  CHECK_FALSE(classify_value("1e999").is_continuous());  // overflows: kept as text
  CHECK(classify_value("120/80").text() == "120/80");
}

TEST_CASE("nearest-rank bins: boundaries, ties and the upper tie rule") {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  const auto spec = fit_bins("HR", v, 20);
  REQUIRE(spec.boundaries.size() == 19);
  CHECK(spec.boundaries[0] == 5.0);   // ceil(1*100/20) = 5th value
  CHECK(spec.boundaries[18] == 95.0);
  CHECK(spec.bin_of(0.0) == 0);
  CHECK(spec.bin_of(4.9) == 0);
  CHECK(spec.bin_of(5.0) == 1);  // equal to a cut point: higher bin
  CHECK(spec.bin_of(1e9) == 19);
  CHECK(spec.n_values == 100);

  const std::vector<double> same(10, 3.0);
  const auto flat = fit_bins("X", same, 4);
  CHECK(flat.bin_of(3.0) == 3);
  CHECK(flat.bin_of(2.0) == 0);

  CHECK_THROWS_AS(fit_bins("X", v, 1), Error);
  CHECK_THROWS_AS(fit_bins("X", std::vector<double>{}, 20), Error);
}

TEST_CASE("bin masses are balanced for distinct values") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int p = 2 + static_cast<int>(rng.below(30));
    const std::size_t n = 1 + rng.below(500);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i) + rng.uniform() * 0.5;
    rng.shuffle(std::span<double>(v));
    const auto spec = fit_bins("L", v, p);
    std::vector<std::size_t> mass(static_cast<std::size_t>(p), 0);
    for (double x : v) ++mass[static_cast<std::size_t>(spec.bin_of(x))];
    const double ideal = static_cast<double>(n) / p;
    for (auto m : mass) CHECK(std::abs(static_cast<double>(m) - ideal) <= 1.0);
  }
}

TEST_CASE("percentile bands") {
  CHECK(percentile_band(18, 20) == "90-95%");
  CHECK(percentile_band(0, 20) == "0-5%");
  CHECK(percentile_band(2, 3) == "66.67-100%");
}

TEST_CASE("tokens for numbers, text, missing and unbinned values") {
  BinTable bins;
  bins.emplace("PH", fit_bins("PH", std::vector<double>{7.1, 7.2, 7.3, 7.4}, 2));
  CHECK(tokenize_event({"1", "PH", "7.35", 0}, bins) == "PH_1");
  CHECK(tokenize_event({"1", "PH", "7.0", 0}, bins) == "PH_0");
  CHECK(tokenize_event({"1", "Code Status", "Full Code", 0}, bins) == "Code Status Full Code");
  CHECK(tokenize_event({"1", "PH", "", 0}, bins) == kMissingToken);
  CHECK(tokenize_event({"1", "Glucose", "120", 0}, bins) == kUnknownToken);
  CHECK(tokenize_event({"1", "PH", "clotted", 0}, bins) == "PH clotted");
}

TEST_CASE("vocabulary is built in first-occurrence order with reserved slots") {
  const std::vector<std::string> stream = {"b", "a", "b", std::string(kMissingToken), "c"};
  const auto v = build_vocab(stream);
  CHECK(v.size() == 5);
  CHECK(v.token(0) == kMissingToken);
  CHECK(v.token(1) == kUnknownToken);
  CHECK(v.index_of("b") == 2);
  CHECK(v.index_of("a") == 3);
  CHECK(v.index_of("c") == 4);
  CHECK(v.index_of("zzz") == Vocab::kUnknown);
  CHECK_FALSE(v.contains("zzz"));
}

namespace {

Cohort small_cohort() {
  Cohort c;
  c.horizon_hours = 4;
  for (int i = 0; i < 4; ++i) {
    BucketedStay s{std::to_string(i), "p", 0, 50, i % 2 ? Mortality::died : Mortality::survived, {}};
    s.hours.resize(4);
    for (int h = 0; h < 4; ++h) s.hours[static_cast<std::size_t>(h)].hour_index = h;
    s.hours[0].events.push_back({s.stay_id, "HR", std::to_string(60 + 10 * i), 10});
    s.hours[0].events.push_back({s.stay_id, "Rhythm", i < 2 ? "SR" : "AF", 20});
    if (i != 3) s.hours[static_cast<std::size_t>(i)].events.push_back({s.stay_id, "HR", "", 3600 * i + 5});
    c.stays.push_back(std::move(s));
  }
  return c;
}

}  // namespace

TEST_CASE("encoding maps events to indices and records observed hours") {
  const auto c = small_cohort();
  AccessCounter counter;
  const CohortView train(c, {0, 1, 2}, Partition::train, &counter);
  const auto bins = fit_bin_table(train, 2);
  const auto vocab = build_vocab(train, bins);
  CHECK(counter.test == 0);
  CHECK(counter.train > 0);

  const auto e0 = encode_stay(c.stays[0], vocab, bins);
  CHECK(e0.target == 0);
  CHECK(e0.observed_hours == 1);
  const auto e2 = encode_stay(c.stays[2], vocab, bins);
  CHECK(e2.target == 0);
  CHECK(e2.observed_hours == 3);
  CHECK(e2.hours[2] == std::vector<std::int32_t>{Vocab::kMissing});
  const auto e3 = encode_stay(c.stays[3], vocab, bins);
  CHECK(e3.target == 1);
  const auto decoded = decode_stay(e3, vocab);
  CHECK(decoded[0][1] == "Rhythm AF");
  CHECK(decoded[0][0] == "HR_1");

  const CohortView test(c, {3}, Partition::test, &counter);
  CHECK_THROWS_AS(fit_bin_table(test, 2), Error);
  CHECK_THROWS_AS(build_vocab(test, bins), Error);
  CHECK(counter.test == 0);
}

TEST_CASE("bins, vocabulary and encoded files round trip") {
  const auto dir = fs::temp_directory_path() / "ehrseq_test_tokenize";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto c = small_cohort();
  const auto view = CohortView::all(c);
  const auto bins = fit_bin_table(view, 3);
  const auto vocab = build_vocab(view, bins);
  write_bins(dir / "bins.tsv", bins, 3);
  write_vocab(dir / "vocab.tsv", vocab);
  CHECK(read_bins(dir / "bins.tsv") == bins);
  CHECK(read_vocab(dir / "vocab.tsv") == vocab);

  EncodedCohort enc;
  enc.horizon_hours = 4;
  enc.vocab_hash = "abc";
  for (const auto& s : c.stays) enc.stays.push_back(encode_stay(s, vocab, bins));
  write_encoded(dir / "enc.tsv", enc);
  const auto back = read_encoded(dir / "enc.tsv");
  CHECK(back.horizon_hours == 4);
  CHECK(back.vocab_hash == "abc");
  CHECK(back.stays == enc.stays);
  fs::remove_all(dir);
}
