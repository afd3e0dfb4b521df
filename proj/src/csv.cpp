#include "ehrseq/csv.hpp"

namespace ehrseq {

namespace {

// Returns true when the record is complete (quotes balanced).
bool parse_into(std::string_view line, char delim, std::vector<std::string>& fields) {
  fields.clear();
  std::string cur;
  bool quoted = false;
  bool field_started = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == delim) {
      fields.push_back(std::move(cur));
      cur.clear();
      field_started = false;
    } else {
      cur += c;
      field_started = true;
    }
  }
  fields.push_back(std::move(cur));
  return !quoted;
}

}  // namespace

bool DelimitedReader::next(std::vector<std::string>& fields) {
  std::string line;
  if (!std::getline(in_, line)) return false;
  ++line_;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  raw_ = line;
  while (!parse_into(raw_, delim_, fields)) {
    if (!std::getline(in_, line)) break;  // unterminated quote at EOF: keep what we have
    ++line_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    raw_ += '\n';
    raw_ += line;
  }
  return true;
}

std::vector<std::string> split_record(std::string_view line, char delimiter) {
  std::vector<std::string> fields;
  parse_into(line, delimiter, fields);
  return fields;
}

void write_record(std::ostream& out, const std::vector<std::string_view>& fields, char delimiter) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << delimiter;
    const auto f = fields[i];
    if (f.find_first_of(std::string{delimiter, '"', '\n', '\r'}) != std::string_view::npos) {
      out << '"';
      for (char c : f) {
        if (c == '"') out << '"';
        out << c;
      }
      out << '"';
    } else {
      out << f;
    }
  }
  out << '\n';
}

}  // namespace ehrseq
