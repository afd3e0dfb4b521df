#include "ehrseq/tokenize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ehrseq {

bool matches_float_grammar(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  std::size_t digits = 0;
  bool point = false;
  for (; i < s.size(); ++i) {
    if (s[i] >= '0' && s[i] <= '9') {
      ++digits;
    } else if (s[i] == '.' && !point) {
      point = true;
    } else {
      break;
    }
  }
  if (digits == 0) return false;
  if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
    ++i;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    std::size_t exp_digits = 0;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') {
      ++i;
      ++exp_digits;
    }
    if (exp_digits == 0) return false;
  }
  return i == s.size();
}

ValueClass classify_value(std::string_view raw) {
  if (matches_float_grammar(raw)) {
    // from_chars rejects a leading '+' and a bare trailing '.', both valid here.
    std::string text(raw.front() == '+' ? raw.substr(1) : raw);
    if (const auto v = parse_double(text); v && std::isfinite(*v)) return ValueClass::continuous(*v);
  }
  return ValueClass::discrete(std::string(raw));
}

int BinSpec::bin_of(double v) const {
  return static_cast<int>(std::upper_bound(boundaries.begin(), boundaries.end(), v) - boundaries.begin());
}

BinSpec fit_bins(std::string label, std::span<const double> values, int bins) {
  if (bins < 2) throw_usage("bin count must be at least 2 (got " + std::to_string(bins) + ")");
  if (values.empty()) throw_data("no values to fit bins for label '" + label + "'");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const auto p = static_cast<std::size_t>(bins);
  BinSpec spec{std::move(label), bins, n, {}};
  spec.boundaries.reserve(p - 1);
  for (std::size_t k = 1; k < p; ++k) {
    const std::size_t rank = (k * n + p - 1) / p;  // ceil(k n / P), 1-based
    spec.boundaries.push_back(sorted[rank - 1]);
  }
  return spec;
}

std::string percentile_band(int bin, int bins) {
  const auto pct = [&](int b) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", 100.0 * b / bins);
    return std::string(buf);
  };
  return pct(bin) + "-" + pct(bin + 1) + "%";
}

std::string tokenize_event(const RawEvent& event, const BinTable& bins) {
  if (event.value.empty()) return std::string(kMissingToken);
  const auto cls = classify_value(event.value);
  if (!cls.is_continuous()) return event.label + " " + cls.text();
  const auto it = bins.find(event.label);
  if (it == bins.end()) return std::string(kUnknownToken);
  return event.label + "_" + std::to_string(it->second.bin_of(cls.number()));
}

Vocab::Vocab() {
  add(kMissingToken);
  add(kUnknownToken);
}

std::int32_t Vocab::add(std::string_view token) {
  if (const auto it = index_.find(token); it != index_.end()) return it->second;
  const auto idx = static_cast<std::int32_t>(tokens_.size());
  tokens_.emplace_back(token);
  index_.emplace(tokens_.back(), idx);
  return idx;
}

std::int32_t Vocab::index_of(std::string_view token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnknown : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.find(token) != index_.end(); }

Vocab build_vocab(std::span<const std::string> tokens) {
  Vocab v;
  for (const auto& t : tokens) v.add(t);
  return v;
}

TokenizedStay encode_stay(const BucketedStay& stay, const Vocab& vocab, const BinTable& bins) {
  TokenizedStay out;
  out.stay_id = stay.stay_id;
  out.target = stay.mortality == Mortality::died ? 1 : 0;
  out.hours.resize(stay.hours.size());
  for (std::size_t h = 0; h < stay.hours.size(); ++h) {
    auto& ids = out.hours[h];
    ids.reserve(stay.hours[h].events.size());
    for (const auto& e : stay.hours[h].events) ids.push_back(vocab.index_of(tokenize_event(e, bins)));
    if (!ids.empty()) out.observed_hours = static_cast<int>(h) + 1;
  }
  return out;
}

std::vector<std::vector<std::string>> decode_stay(const TokenizedStay& stay, const Vocab& vocab) {
  std::vector<std::vector<std::string>> out(stay.hours.size());
  for (std::size_t h = 0; h < stay.hours.size(); ++h)
    for (auto id : stay.hours[h]) out[h].push_back(vocab.token(id));
  return out;
}

CohortView::CohortView(const Cohort& cohort, std::vector<std::size_t> indices, Partition partition,
                       AccessCounter* counter)
    : cohort_(&cohort), indices_(std::move(indices)), partition_(partition), counter_(counter) {}

CohortView CohortView::all(const Cohort& cohort, AccessCounter* counter) {
  std::vector<std::size_t> idx(cohort.stays.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return CohortView(cohort, std::move(idx), Partition::train, counter);
}

const BucketedStay& CohortView::stay(std::size_t i) const {
  if (counter_) ++(partition_ == Partition::train ? counter_->train : counter_->test);
  return cohort_->stays.at(indices_.at(i));
}

namespace {

void require_training(const CohortView& view, const char* what) {
  if (view.partition() != Partition::train)
    throw_usage(std::string(what) + " must be fitted on the training partition only");
}

}  // namespace

BinTable fit_bin_table(const CohortView& train, int bins, int threads) {
  require_training(train, "bins");
  if (bins < 2) throw_usage("bin count must be at least 2 (got " + std::to_string(bins) + ")");
  std::map<std::string, std::vector<double>, std::less<>> values;
  for (std::size_t i = 0; i < train.size(); ++i)
    for (const auto& h : train.stay(i).hours)
      for (const auto& e : h.events)
        if (!e.value.empty())
          if (const auto cls = classify_value(e.value); cls.is_continuous())
            values[e.label].push_back(cls.number());

  std::vector<const std::pair<const std::string, std::vector<double>>*> items;
  for (const auto& kv : values) items.push_back(&kv);
  std::vector<BinSpec> specs(items.size());
  parallel_for(items.size(), threads,
               [&](std::size_t i) { specs[i] = fit_bins(items[i]->first, items[i]->second, bins); });
  BinTable table;
  for (auto& s : specs) table.emplace(s.label, std::move(s));
  return table;
}

Vocab build_vocab(const CohortView& train, const BinTable& bins) {
  require_training(train, "vocabulary");
  Vocab v;
  for (std::size_t i = 0; i < train.size(); ++i)
    for (const auto& h : train.stay(i).hours)
      for (const auto& e : h.events) v.add(tokenize_event(e, bins));
  return v;
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open input: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(std::move(line));
  return lines;
}

std::string header_value(const std::vector<std::string>& lines, std::size_t i, std::string_view key,
                         const std::filesystem::path& path) {
  const std::string prefix = "#" + std::string(key) + "\t";
  if (i >= lines.size() || !lines[i].starts_with(prefix))
    throw_data(path.string() + ": expected header '" + std::string(key) + "'");
  return lines[i].substr(prefix.size());
}

}  // namespace

void write_bins(const std::filesystem::path& path, const BinTable& table, int bins) {
  write_file_atomic(path, [&](std::ostream& out) {
    out << "#ehrseq-bins\tv1\n#bins\t" << bins << "\n#quantile_rule\t" << kQuantileRule << "\n#tie_rule\t"
        << kTieRule << '\n';
    for (const auto& [label, spec] : table) {
      out << escape_field(label) << '\t' << spec.n_values;
      for (double b : spec.boundaries) out << '\t' << format_double(b);
      out << '\n';
    }
  });
}

BinTable read_bins(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != "#ehrseq-bins\tv1") throw_data(path.string() + ": not an ehrseq bins file (v1)");
  const auto p = parse_int(header_value(lines, 1, "bins", path));
  if (!p || *p < 2) throw_data(path.string() + ": bad bin count");
  if (header_value(lines, 2, "quantile_rule", path) != kQuantileRule ||
      header_value(lines, 3, "tie_rule", path) != kTieRule)
    throw_data(path.string() + ": unsupported quantile or tie rule");
  BinTable table;
  for (std::size_t i = 4; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split(lines[i], '\t');
    if (f.size() != static_cast<std::size_t>(*p) + 1)
      throw_data(path.string() + ": line " + std::to_string(i + 1) + " has wrong field count");
    BinSpec spec{unescape_field(f[0]), static_cast<int>(*p), 0, {}};
    const auto n = parse_int(f[1]);
    if (!n) throw_data(path.string() + ": bad value count");
    spec.n_values = static_cast<std::size_t>(*n);
    for (std::size_t k = 2; k < f.size(); ++k) {
      const auto b = parse_double(f[k]);
      if (!b) throw_data(path.string() + ": bad boundary on line " + std::to_string(i + 1));
      spec.boundaries.push_back(*b);
    }
    table.emplace(spec.label, std::move(spec));
  }
  return table;
}

void write_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  write_file_atomic(path, [&](std::ostream& out) {
    out << "#ehrseq-vocab\tv1\n#size\t" << vocab.size() << '\n';
    for (std::size_t i = 0; i < vocab.size(); ++i) out << i << '\t' << escape_field(vocab.tokens()[i]) << '\n';
  });
}

Vocab read_vocab(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != "#ehrseq-vocab\tv1") throw_data(path.string() + ": not an ehrseq vocab file (v1)");
  const auto size = parse_int(header_value(lines, 1, "size", path));
  if (!size || *size < 2) throw_data(path.string() + ": bad vocab size");
  Vocab v;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto tab = lines[i].find('\t');
    const auto idx = parse_int(std::string_view(lines[i]).substr(0, tab));
    if (tab == std::string::npos || !idx) throw_data(path.string() + ": bad vocab record");
    const auto token = unescape_field(std::string_view(lines[i]).substr(tab + 1));
    if (*idx < 2) continue;
    if (v.add(token) != *idx) throw_data(path.string() + ": vocab indices not contiguous");
  }
  if (static_cast<std::int64_t>(v.size()) != *size) throw_data(path.string() + ": vocab size mismatch");
  return v;
}

void write_encoded(const std::filesystem::path& path, const EncodedCohort& encoded) {
  write_file_atomic(path, [&](std::ostream& out) {
    out << "#ehrseq-encoded\tv1\n#horizon\t" << encoded.horizon_hours << "\n#vocab_hash\t" << encoded.vocab_hash
        << '\n';
    for (const auto& s : encoded.stays) {
      out << escape_field(s.stay_id) << '\t' << s.target << '\t' << s.observed_hours;
      for (const auto& h : s.hours) {
        out << '\t';
        for (std::size_t j = 0; j < h.size(); ++j) out << (j ? " " : "") << h[j];
      }
      out << '\n';
    }
  });
}

EncodedCohort read_encoded(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open encoded cohort: " + path.string());
  std::string line;
  std::vector<std::string> head(3);
  for (auto& h : head)
    if (!std::getline(in, h)) throw_data(path.string() + ": truncated header");
  if (head[0] != "#ehrseq-encoded\tv1") throw_data(path.string() + ": not an ehrseq encoded file (v1)");
  EncodedCohort enc;
  const auto horizon = parse_int(header_value(head, 1, "horizon", path));
  if (!horizon || *horizon <= 0) throw_data(path.string() + ": bad horizon");
  enc.horizon_hours = static_cast<int>(*horizon);
  enc.vocab_hash = header_value(head, 2, "vocab_hash", path);
  std::size_t lineno = 3;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, '\t');
    if (f.size() != static_cast<std::size_t>(enc.horizon_hours) + 3)
      throw_data(path.string() + ": line " + std::to_string(lineno) + " has wrong field count");
    TokenizedStay s;
    s.stay_id = unescape_field(f[0]);
    const auto target = parse_int(f[1]);
    const auto observed = parse_int(f[2]);
    if (!target || !observed || (*target != 0 && *target != 1))
      throw_data(path.string() + ": bad stay header on line " + std::to_string(lineno));
    s.target = static_cast<int>(*target);
    s.observed_hours = static_cast<int>(*observed);
    s.hours.resize(static_cast<std::size_t>(enc.horizon_hours));
    for (int h = 0; h < enc.horizon_hours; ++h) {
      const auto cell = f[static_cast<std::size_t>(h) + 3];
      if (cell.empty()) continue;
      for (auto tok : split(cell, ' ')) {
        const auto id = parse_int(tok);
        if (!id || *id < 0) throw_data(path.string() + ": bad token index on line " + std::to_string(lineno));
        s.hours[static_cast<std::size_t>(h)].push_back(static_cast<std::int32_t>(*id));
      }
    }
    enc.stays.push_back(std::move(s));
  }
  return enc;
}

}  // namespace ehrseq
