#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>

namespace ehrseq {

/// Ordered named counters, reported as "key = value" text.
class Diagnostics {
public:
  void add(const std::string& key, std::uint64_t n = 1) { counts_[key] += n; }
  void set(const std::string& key, std::uint64_t n) { counts_[key] = n; }
  std::uint64_t get(const std::string& key) const {
    const auto it = counts_.find(key);
    return it == counts_.end() ? 0 : it->second;
  }
  /// Sum of every counter whose key starts with `prefix`.
  std::uint64_t sum_prefix(const std::string& prefix) const {
    std::uint64_t total = 0;
    for (auto it = counts_.lower_bound(prefix); it != counts_.end() && it->first.starts_with(prefix); ++it)
      total += it->second;
    return total;
  }
  void merge(const Diagnostics& other) {
    for (const auto& [k, v] : other.counts_) counts_[k] += v;
  }
  const std::map<std::string, std::uint64_t>& counts() const { return counts_; }

  void write(std::ostream& out) const {
    for (const auto& [k, v] : counts_) out << k << " = " << v << '\n';
  }

private:
  std::map<std::string, std::uint64_t> counts_;
};

}  // namespace ehrseq
