#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "ehrseq/ingest.hpp"

namespace ehrseq {

/// Either a parsed number (strict float grammar) or verbatim text.
class ValueClass {
public:
  static ValueClass continuous(double v) { return ValueClass(v); }
  static ValueClass discrete(std::string s) { return ValueClass(std::move(s)); }

  bool is_continuous() const { return std::holds_alternative<double>(v_); }
  double number() const { return std::get<double>(v_); }
  const std::string& text() const { return std::get<std::string>(v_); }
  bool operator==(const ValueClass&) const = default;

private:
  explicit ValueClass(double v) : v_(v) {}
  explicit ValueClass(std::string s) : v_(std::move(s)) {}
  std::variant<double, std::string> v_;
};

/// Optional sign, digits with at most one decimal point, optional exponent.
bool matches_float_grammar(std::string_view s);
ValueClass classify_value(std::string_view raw);

inline constexpr std::string_view kQuantileRule = "nearest_rank";
inline constexpr std::string_view kTieRule = "upper";  // a value equal to a cut point takes the higher bin

/// Percentile cut points for one label: boundaries[k-1] is the nearest-rank
/// k/P quantile of the training values, k = 1..P-1.
struct BinSpec {
  std::string label;
  int bins = 20;
  std::size_t n_values = 0;
  std::vector<double> boundaries;

  /// Number of boundaries <= v, in [0, bins).
  int bin_of(double v) const;
  bool operator==(const BinSpec&) const = default;
};

BinSpec fit_bins(std::string label, std::span<const double> values, int bins = 20);

/// Percentile band covered by a bin, e.g. bin 18 of 20 -> "90-95%".
std::string percentile_band(int bin, int bins);

using BinTable = std::map<std::string, BinSpec, std::less<>>;

inline constexpr std::string_view kMissingToken = "<missing>";
inline constexpr std::string_view kUnknownToken = "<unknown>";

/// Token text for an event: "<label>_<bin>" for numbers, "<label> <value>" otherwise.
/// Empty values give the missing token; numbers for labels without bins give the unknown token.
std::string tokenize_event(const RawEvent& event, const BinTable& bins);

class Vocab {
public:
  static constexpr std::int32_t kMissing = 0;
  static constexpr std::int32_t kUnknown = 1;

  Vocab();
  /// Adds a token if new; returns its index.
  std::int32_t add(std::string_view token);
  /// Index of a token, kUnknown when absent.
  std::int32_t index_of(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::int32_t index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t, Hash, std::equal_to<>> index_;
};

/// First-occurrence order over the stream; reserved tokens are never re-added.
Vocab build_vocab(std::span<const std::string> tokens);

struct TokenizedStay {
  std::string stay_id;
  int target = 0;          // 1 = died in hospital, 0 = survived
  int observed_hours = 0;  // last non-empty hour + 1
  std::vector<std::vector<std::int32_t>> hours;

  bool operator==(const TokenizedStay&) const = default;
};

TokenizedStay encode_stay(const BucketedStay& stay, const Vocab& vocab, const BinTable& bins);
std::vector<std::vector<std::string>> decode_stay(const TokenizedStay& stay, const Vocab& vocab);

enum class Partition { train, test };

/// Per-partition read counts, used to prove fitting never touches held-out stays.
struct AccessCounter {
  std::atomic<std::uint64_t> train{0};
  std::atomic<std::uint64_t> test{0};
};

/// A subset of a cohort tagged with the partition it belongs to.
class CohortView {
public:
  CohortView(const Cohort& cohort, std::vector<std::size_t> indices, Partition partition,
             AccessCounter* counter = nullptr);
  static CohortView all(const Cohort& cohort, AccessCounter* counter = nullptr);

  Partition partition() const { return partition_; }
  std::size_t size() const { return indices_.size(); }
  /// Visits each stay, recording the read against the view's partition.
  const BucketedStay& stay(std::size_t i) const;

private:
  const Cohort* cohort_;
  std::vector<std::size_t> indices_;
  Partition partition_;
  AccessCounter* counter_;
};

/// Fits one BinSpec per label that has at least one continuous training value.
BinTable fit_bin_table(const CohortView& train, int bins = 20, int threads = 1);
Vocab build_vocab(const CohortView& train, const BinTable& bins);

void write_bins(const std::filesystem::path& path, const BinTable& table, int bins);
BinTable read_bins(const std::filesystem::path& path);
void write_vocab(const std::filesystem::path& path, const Vocab& vocab);
Vocab read_vocab(const std::filesystem::path& path);

struct EncodedCohort {
  int horizon_hours = 48;
  std::string vocab_hash;
  std::vector<TokenizedStay> stays;
};

void write_encoded(const std::filesystem::path& path, const EncodedCohort& encoded);
EncodedCohort read_encoded(const std::filesystem::path& path);

}  // namespace ehrseq
