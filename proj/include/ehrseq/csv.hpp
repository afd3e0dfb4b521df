#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace ehrseq {

/// Streaming reader for delimited text with RFC 4180 style quoting
/// (quoted fields may contain the delimiter, doubled quotes and newlines).
class DelimitedReader {
public:
  DelimitedReader(std::istream& in, char delimiter = ',') : in_(in), delim_(delimiter) {}

  /// Reads the next record; false at end of input.
  bool next(std::vector<std::string>& fields);
  /// Raw text of the last record, without the trailing newline.
  const std::string& raw() const { return raw_; }
  std::size_t line_number() const { return line_; }

private:
  std::istream& in_;
  char delim_;
  std::string raw_;
  std::size_t line_ = 0;
};

/// Splits a single record (no embedded newlines) into fields.
std::vector<std::string> split_record(std::string_view line, char delimiter = ',');

void write_record(std::ostream& out, const std::vector<std::string_view>& fields, char delimiter = ',');

}  // namespace ehrseq
