#include <doctest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "ehrseq/common.hpp"
#include "ehrseq/csv.hpp"
#include "ehrseq/diagnostics.hpp"
#include "ehrseq/random.hpp"

using namespace ehrseq;

TEST_CASE("timestamps round trip and reject malformed text") {
  const auto t = parse_timestamp("2101-03-04 05:06:07");
  REQUIRE(t);
  CHECK(format_timestamp(*t) == "2101-03-04 05:06:07");
  CHECK(parse_timestamp("2101-03-04T05:06:07") == t);
  CHECK(*parse_timestamp("1970-01-01 00:00:00") == 0);
  CHECK(*parse_timestamp("1969-12-31 23:59:59") == -1);
  CHECK(format_timestamp(-1) == "1969-12-31 23:59:59");
  CHECK_FALSE(parse_timestamp("2101-02-30 00:00:00"));
  CHECK_FALSE(parse_timestamp("2101-13-01 00:00:00"));
  CHECK_FALSE(parse_timestamp("2101-01-01 24:00:00"));
  CHECK_FALSE(parse_timestamp("yesterday"));
  CHECK_FALSE(parse_timestamp(""));
  CHECK(parse_timestamp("2000-02-29 12:00:00"));
  CHECK_FALSE(parse_timestamp("1900-02-29 12:00:00"));
}

TEST_CASE("numbers format to the shortest exact text") {
  for (double v : {0.0, 1.0, -2.5, 0.1, 1e-300, 123456789.125, 0.30000000000000004}) {
    const auto s = format_double(v);
    REQUIRE(parse_double(s));
    CHECK(*parse_double(s) == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(*parse_double("+3") == 3.0);
  CHECK_FALSE(parse_double("3x"));
  CHECK_FALSE(parse_double(""));
  CHECK(*parse_int("-42") == -42);
  CHECK_FALSE(parse_int("4.2"));
}

TEST_CASE("field escaping is reversible") {
  const std::string raw = "a\tb\nc\\d\re";
  const auto esc = escape_field(raw);
  CHECK(esc.find('\t') == std::string::npos);
  CHECK(esc.find('\n') == std::string::npos);
  CHECK(unescape_field(esc) == raw);
  CHECK(trim("  x y \t") == "x y");
  const auto parts = split("a,,b", ',');
  REQUIRE(parts.size() == 3);
  CHECK(parts[1].empty());
}

TEST_CASE("derived seeds are distinct and stable") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(7, i));
  CHECK(seen.size() == 1000);
  CHECK(derive_seed(7, 3) == derive_seed(7, 3));
  CHECK(derive_seed(7, 3) != derive_seed(8, 3));
  CHECK(hex64(0xabc) == "0000000000000abc");
}

TEST_CASE("rng draws are reproducible and in range") {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng r(11);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
  double pois = 0.0;
  for (int i = 0; i < n; ++i) pois += static_cast<double>(r.poisson(3.5));
  CHECK(std::abs(pois / n - 3.5) < 0.1);
  for (int i = 0; i < 1000; ++i) CHECK(r.below(7) < 7);
  const std::vector<double> w = {0.0, 1.0, 0.0};
  for (int i = 0; i < 100; ++i) CHECK(r.categorical(w) == 1);
  std::vector<int> v = {1, 2, 3, 4, 5};
  r.shuffle(std::span<int>(v));
  CHECK(std::multiset<int>(v.begin(), v.end()) == std::multiset<int>{1, 2, 3, 4, 5});
}

TEST_CASE("atomic writes replace the file and leave no temp files") {
  const auto dir = std::filesystem::temp_directory_path() / "ehrseq_test_common";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto path = dir / "out.txt";
  write_file_atomic(path, "first");
  write_file_atomic(path, "second");
  CHECK(read_file(path) == "second");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  CHECK(files == 1);
  CHECK(file_hash(path) == fnv1a("second"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("parallel_for covers every index once for any thread count") {
  for (int threads : {1, 2, 3, 8}) {
    std::vector<int> hits(37, 0);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
  }
  CHECK_THROWS_AS(parallel_for(4, 2, [](std::size_t i) {
                    if (i == 3) throw_data("boom");
                  }),
                  Error);
}

TEST_CASE("delimited reader handles quoting and embedded newlines") {
  std::istringstream in("a,b,c\n\"x,1\",\"say \"\"hi\"\"\",\"two\nlines\"\n,,\n");
  DelimitedReader r(in);
  std::vector<std::string> f;
  REQUIRE(r.next(f));
  CHECK(f == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(r.next(f));
  CHECK(f == std::vector<std::string>{"x,1", "say \"hi\"", "two\nlines"});
  REQUIRE(r.next(f));
  CHECK(f == std::vector<std::string>{"", "", ""});
  CHECK_FALSE(r.next(f));

  std::ostringstream out;
  write_record(out, {"plain", "with,comma", "with\"quote"});
  CHECK(out.str() == "plain,\"with,comma\",\"with\"\"quote\"\n");
  CHECK(split_record("1,\"2,3\",4") == std::vector<std::string>{"1", "2,3", "4"});
}

TEST_CASE("diagnostics merge and sum by prefix") {
  Diagnostics a, b;
  a.add("events.dropped.x", 2);
  b.add("events.dropped.y");
  b.add("events.kept", 5);
  a.merge(b);
  CHECK(a.sum_prefix("events.dropped.") == 3);
  CHECK(a.get("events.kept") == 5);
  CHECK(a.get("absent") == 0);
  std::ostringstream out;
  a.write(out);
  CHECK(out.str() == "events.dropped.x = 2\nevents.dropped.y = 1\nevents.kept = 5\n");
}
