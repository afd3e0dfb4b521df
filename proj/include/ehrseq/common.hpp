#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ehrseq {

// Error categories map one-to-one onto the CLI / C API exit codes.
enum class ErrorKind { usage = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_usage(const std::string& msg) { throw Error(ErrorKind::usage, msg); }
[[noreturn]] inline void throw_data(const std::string& msg) { throw Error(ErrorKind::data, msg); }
[[noreturn]] inline void throw_numeric(const std::string& msg) { throw Error(ErrorKind::numeric, msg); }

/// Seconds since 1970-01-01 00:00:00 (proleptic Gregorian, no time zone).
using Timestamp = std::int64_t;

/// Parses "YYYY-MM-DD HH:MM:SS" (a 'T' separator is also accepted).
std::optional<Timestamp> parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

std::string_view trim(std::string_view s);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);
std::optional<double> parse_double(std::string_view s);
std::optional<std::int64_t> parse_int(std::string_view s);

/// Backslash escaping for tab-delimited artifact files (\t, \n, \r, \\).
std::string escape_field(std::string_view s);
std::string unescape_field(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char delim);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);
/// Independent reproducible substream seed for (base, index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

std::string hex64(std::uint64_t v);
std::uint64_t file_hash(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& writer);
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

/// Runs fn(i) for i in [0, n) on up to `threads` workers; contiguous static chunks.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);
/// Like parallel_for, but fn(worker, begin, end) receives a worker index and a chunk.
void parallel_chunks(std::size_t n, int threads,
                     const std::function<void(int, std::size_t, std::size_t)>& fn);
int effective_threads(int requested, std::size_t work_items);

/// Progress sink for machine-readable "key=value" lines.
using ProgressFn = std::function<void(const std::string&)>;

}  // namespace ehrseq
