#include "ehrseq/ingest.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <sstream>

#include "ehrseq/csv.hpp"

namespace ehrseq {

std::size_t BucketedStay::total_events() const {
  std::size_t n = 0;
  for (const auto& h : hours) n += h.events.size();
  return n;
}

namespace {

std::size_t find_column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (trim(header[i]) == name) return i;
  throw_data("missing column '" + name + "' in header");
}

Mortality parse_mortality(std::string_view s) {
  s = trim(s);
  if (s == "1") return Mortality::died;
  if (s == "0") return Mortality::survived;
  return Mortality::undocumented;
}

std::string_view mortality_text(Mortality m) {
  switch (m) {
    case Mortality::died: return "died";
    case Mortality::survived: return "survived";
    case Mortality::undocumented: break;
  }
  return "undocumented";
}

Mortality mortality_from_text(std::string_view s) {
  if (s == "died") return Mortality::died;
  if (s == "survived") return Mortality::survived;
  return Mortality::undocumented;
}

}  // namespace

std::size_t EventSchema::min_columns() const { return std::max({stay_id, label, value, time}) + 1; }

EventSchema EventSchema::resolve(const ColumnMap& map, const std::vector<std::string>& header) {
  return EventSchema{find_column(header, map.stay_id), find_column(header, map.label),
                     find_column(header, map.value), find_column(header, map.time), map.delimiter};
}

std::string_view drop_reason_name(DropReason r) {
  switch (r) {
    case DropReason::malformed_row: return "malformed_row";
    case DropReason::bad_timestamp: return "bad_timestamp";
    case DropReason::missing_stay_id: return "missing_stay_id";
    case DropReason::empty_label: return "empty_label";
    case DropReason::unknown_stay: return "unknown_stay";
    case DropReason::excluded_stay: return "excluded_stay";
    case DropReason::before_intime: return "before_intime";
    case DropReason::beyond_horizon: return "beyond_horizon";
    case DropReason::over_cap: return "over_cap";
  }
  return "unknown";
}

std::string drop_key(DropReason r) { return "events.dropped." + std::string(drop_reason_name(r)); }

RowResult parse_event_fields(const std::vector<std::string>& fields, const EventSchema& schema) {
  if (fields.size() < schema.min_columns()) return DropReason::malformed_row;
  const auto stay = trim(fields[schema.stay_id]);
  if (stay.empty()) return DropReason::missing_stay_id;
  const auto label = trim(fields[schema.label]);
  if (label.empty()) return DropReason::empty_label;
  const auto t = parse_timestamp(fields[schema.time]);
  if (!t) return DropReason::bad_timestamp;
  return RawEvent{std::string(stay), std::string(label), fields[schema.value], *t};
}

RowResult parse_event_row(std::string_view row, const EventSchema& schema) {
  return parse_event_fields(split_record(row, schema.delimiter), schema);
}

std::vector<StayRecord> read_stays_table(const std::filesystem::path& path, const StayColumnMap& map,
                                         Diagnostics& diag) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open stays table: " + path.string());
  DelimitedReader reader(in, map.delimiter);
  std::vector<std::string> fields;
  if (!reader.next(fields)) throw_data("empty stays table: " + path.string());
  const std::size_t c_stay = find_column(fields, map.stay_id);
  const std::size_t c_patient = find_column(fields, map.patient_id);
  const std::size_t c_intime = find_column(fields, map.intime);
  const std::size_t c_age = find_column(fields, map.age);
  const std::size_t c_mort = find_column(fields, map.mortality);
  const std::size_t need = std::max({c_stay, c_patient, c_intime, c_age, c_mort}) + 1;

  std::vector<StayRecord> stays;
  std::unordered_set<std::string> seen;
  while (reader.next(fields)) {
    if (fields.size() == 1 && trim(fields[0]).empty()) continue;
    diag.add("stays.read");
    if (fields.size() < need) {
      diag.add("stays.rejected.malformed_row");
      continue;
    }
    StayRecord s;
    s.stay_id = std::string(trim(fields[c_stay]));
    s.patient_id = std::string(trim(fields[c_patient]));
    const auto intime = parse_timestamp(fields[c_intime]);
    const auto age = parse_double(fields[c_age]);
    if (s.stay_id.empty()) {
      diag.add("stays.rejected.missing_stay_id");
      continue;
    }
    if (!intime) {
      diag.add("stays.rejected.bad_intime");
      continue;
    }
    if (!age) {
      diag.add("stays.rejected.bad_age");
      continue;
    }
    if (!seen.insert(s.stay_id).second) {
      diag.add("stays.rejected.duplicate_stay_id");
      continue;
    }
    s.intime = *intime;
    s.age = *age;
    s.mortality = parse_mortality(fields[c_mort]);
    stays.push_back(std::move(s));
  }
  return stays;
}

std::vector<StayRecord> apply_exclusions(std::vector<StayRecord> stays, Diagnostics* diag) {
  std::vector<StayRecord> kept;
  kept.reserve(stays.size());
  for (auto& s : stays) {
    if (s.age < 18.0) {
      if (diag) diag->add("stays.excluded.under_18");
    } else if (s.mortality == Mortality::undocumented) {
      if (diag) diag->add("stays.excluded.undocumented_mortality");
    } else {
      kept.push_back(std::move(s));
    }
  }
  if (diag) diag->add("stays.retained", kept.size());
  return kept;
}

int hour_index(Timestamp time, Timestamp intime) {
  const Timestamp elapsed = time - intime;
  if (elapsed < 0) return -1;
  return static_cast<int>(elapsed / 3600);
}

CohortBuilder::CohortBuilder(const std::vector<StayRecord>& stays, int horizon_hours,
                             std::unordered_set<std::string> excluded_ids)
    : stays_(&stays), horizon_(horizon_hours), excluded_(std::move(excluded_ids)), pending_(stays.size()) {
  index_.reserve(stays.size());
  for (std::size_t i = 0; i < stays.size(); ++i) index_.emplace(stays[i].stay_id, i);
}

void CohortBuilder::add(RawEvent event) {
  const auto it = index_.find(event.stay_id);
  if (it == index_.end()) {
    add_drop(excluded_.contains(event.stay_id) ? DropReason::excluded_stay : DropReason::unknown_stay);
    return;
  }
  const int h = hour_index(event.time, (*stays_)[it->second].intime);
  if (h < 0) {
    add_drop(DropReason::before_intime);
    return;
  }
  if (h >= horizon_) {
    add_drop(DropReason::beyond_horizon);
    return;
  }
  diag_.add("events.bucketed");
  labels_.insert(event.label);
  pending_[it->second].push_back(std::move(event));
}

void CohortBuilder::merge(CohortBuilder&& other) {
  for (std::size_t i = 0; i < pending_.size(); ++i) {
    auto& dst = pending_[i];
    auto& src = other.pending_[i];
    dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
  }
  labels_.merge(other.labels_);
  diag_.merge(other.diag_);
}

std::vector<BucketedStay> CohortBuilder::finish() {
  std::vector<BucketedStay> out;
  out.reserve(stays_->size());
  for (std::size_t i = 0; i < stays_->size(); ++i) {
    const auto& rec = (*stays_)[i];
    BucketedStay b{rec.stay_id, rec.patient_id, rec.intime, rec.age, rec.mortality, {}};
    b.hours.resize(static_cast<std::size_t>(horizon_));
    for (int h = 0; h < horizon_; ++h) b.hours[static_cast<std::size_t>(h)].hour_index = h;
    auto& evs = pending_[i];
    std::stable_sort(evs.begin(), evs.end(), [](const RawEvent& a, const RawEvent& b) { return a.time < b.time; });
    for (auto& e : evs) {
      const int h = hour_index(e.time, rec.intime);
      b.hours[static_cast<std::size_t>(h)].events.push_back(std::move(e));
    }
    evs.clear();
    out.push_back(std::move(b));
  }
  diag_.set("labels.distinct_bucketed", labels_.size());
  return out;
}

std::vector<BucketedStay> link_and_bucket(const std::vector<RawEvent>& events,
                                          const std::vector<StayRecord>& stays, int horizon_hours,
                                          Diagnostics& diag,
                                          const std::unordered_set<std::string>& excluded_ids) {
  CohortBuilder builder(stays, horizon_hours, excluded_ids);
  for (const auto& e : events) builder.add(e);
  auto out = builder.finish();
  diag.merge(builder.diagnostics());
  return out;
}

BucketedStay cap_events(BucketedStay stay, std::size_t cap, Diagnostics* diag) {
  std::size_t total = stay.total_events();
  if (total <= cap) return stay;
  std::size_t to_drop = total - cap;
  if (diag) diag->add(drop_key(DropReason::over_cap), to_drop);
  for (auto& h : stay.hours) {
    if (to_drop == 0) break;
    const std::size_t n = std::min(to_drop, h.events.size());
    h.events.erase(h.events.begin(), h.events.begin() + static_cast<std::ptrdiff_t>(n));
    to_drop -= n;
  }
  return stay;
}

namespace {

void ingest_one_file(const std::filesystem::path& path, const ColumnMap& map, CohortBuilder& builder,
                     std::unordered_set<std::string>& labels) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open event table: " + path.string());
  DelimitedReader reader(in, map.delimiter);
  std::vector<std::string> fields;
  if (!reader.next(fields)) throw_data("empty event table (header row required): " + path.string());
  const auto schema = EventSchema::resolve(map, fields);
  auto& diag = builder.diagnostics();
  while (reader.next(fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;
    diag.add("events.rows_read");
    auto res = parse_event_fields(fields, schema);
    if (auto* r = std::get_if<DropReason>(&res)) {
      builder.add_drop(*r);
      continue;
    }
    auto& ev = std::get<RawEvent>(res);
    labels.insert(ev.label);
    builder.add(std::move(ev));
  }
}

}  // namespace

IngestResult ingest_files(const std::vector<std::filesystem::path>& event_files,
                          const std::filesystem::path& stays_file, const IngestOptions& options) {
  if (options.horizon_hours <= 0) throw_usage("horizon must be positive");
  IngestResult result;
  auto& diag = result.diagnostics;
  auto all_stays = read_stays_table(stays_file, options.stays, diag);
  std::unordered_set<std::string> all_ids;
  for (const auto& s : all_stays) all_ids.insert(s.stay_id);
  const auto stays = apply_exclusions(std::move(all_stays), &diag);
  std::unordered_set<std::string> excluded = std::move(all_ids);
  for (const auto& s : stays) excluded.erase(s.stay_id);

  // One builder per input file, merged in file order.
  std::vector<CohortBuilder> builders;
  std::vector<std::unordered_set<std::string>> labels(event_files.size());
  builders.reserve(event_files.size());
  for (std::size_t i = 0; i < event_files.size(); ++i) builders.emplace_back(stays, options.horizon_hours, excluded);
  parallel_for(event_files.size(), options.threads,
               [&](std::size_t i) { ingest_one_file(event_files[i], options.events, builders[i], labels[i]); });

  CohortBuilder merged(stays, options.horizon_hours, excluded);
  std::unordered_set<std::string> parsed_labels;
  for (std::size_t i = 0; i < builders.size(); ++i) {
    merged.merge(std::move(builders[i]));
    parsed_labels.merge(labels[i]);
  }
  result.cohort.horizon_hours = options.horizon_hours;
  result.cohort.stays = merged.finish();
  diag.merge(merged.diagnostics());
  diag.set("labels.distinct_parsed", parsed_labels.size());

  std::size_t kept = 0;
  for (auto& s : result.cohort.stays) {
    s = cap_events(std::move(s), options.cap, &diag);
    kept += s.total_events();
  }
  diag.set("events.kept", kept);
  return result;
}

void write_cohort(std::ostream& out, const Cohort& cohort) {
  out << "#ehrseq-cohort\tv1\n#horizon\t" << cohort.horizon_hours << '\n';
  for (const auto& s : cohort.stays) {
    out << "S\t" << escape_field(s.stay_id) << '\t' << escape_field(s.patient_id) << '\t'
        << format_timestamp(s.intime) << '\t' << format_double(s.age) << '\t' << mortality_text(s.mortality)
        << '\t' << s.total_events() << '\n';
    for (const auto& h : s.hours)
      for (const auto& e : h.events)
        out << "E\t" << h.hour_index << '\t' << (e.time - s.intime) << '\t' << escape_field(e.label) << '\t'
            << escape_field(e.value) << '\n';
  }
}

void write_cohort(const std::filesystem::path& path, const Cohort& cohort) {
  write_file_atomic(path, [&](std::ostream& out) { write_cohort(out, cohort); });
}

Cohort read_cohort(std::istream& in) {
  Cohort cohort;
  std::string line;
  std::size_t lineno = 0;
  const auto fail = [&](const std::string& why) {
    throw_data("cohort file line " + std::to_string(lineno) + ": " + why);
  };
  if (!std::getline(in, line) || line != "#ehrseq-cohort\tv1") throw_data("not an ehrseq cohort file (v1)");
  ++lineno;
  if (!std::getline(in, line) || !line.starts_with("#horizon\t")) fail("missing horizon header");
  ++lineno;
  const auto horizon = parse_int(std::string_view(line).substr(9));
  if (!horizon || *horizon <= 0) fail("bad horizon");
  cohort.horizon_hours = static_cast<int>(*horizon);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, '\t');
    if (f[0] == "S") {
      if (f.size() != 7) fail("stay record needs 7 fields");
      BucketedStay s;
      s.stay_id = unescape_field(f[1]);
      s.patient_id = unescape_field(f[2]);
      const auto intime = parse_timestamp(f[3]);
      const auto age = parse_double(f[4]);
      if (!intime || !age) fail("bad stay record");
      s.intime = *intime;
      s.age = *age;
      s.mortality = mortality_from_text(f[5]);
      s.hours.resize(static_cast<std::size_t>(cohort.horizon_hours));
      for (int h = 0; h < cohort.horizon_hours; ++h) s.hours[static_cast<std::size_t>(h)].hour_index = h;
      cohort.stays.push_back(std::move(s));
    } else if (f[0] == "E") {
      if (cohort.stays.empty() || f.size() != 5) fail("bad event record");
      auto& s = cohort.stays.back();
      const auto hour = parse_int(f[1]);
      const auto offset = parse_int(f[2]);
      if (!hour || !offset || *hour < 0 || *hour >= cohort.horizon_hours) fail("bad event hour");
      s.hours[static_cast<std::size_t>(*hour)].events.push_back(
          RawEvent{s.stay_id, unescape_field(f[3]), unescape_field(f[4]), s.intime + *offset});
    } else {
      fail("unknown record type");
    }
  }
  return cohort;
}

Cohort read_cohort(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open cohort file: " + path.string());
  return read_cohort(in);
}

}  // namespace ehrseq
