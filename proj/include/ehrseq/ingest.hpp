#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "ehrseq/common.hpp"
#include "ehrseq/diagnostics.hpp"

namespace ehrseq {

struct RawEvent {
  std::string stay_id;
  std::string label;
  std::string value;  // verbatim; empty means a missing reading
  Timestamp time = 0;

  bool operator==(const RawEvent&) const = default;
};

enum class Mortality { survived, died, undocumented };

struct StayRecord {
  std::string stay_id;
  std::string patient_id;
  Timestamp intime = 0;
  double age = 0.0;
  Mortality mortality = Mortality::undocumented;
  std::vector<RawEvent> events;

  bool operator==(const StayRecord&) const = default;
};

struct HourBucket {
  int hour_index = 0;
  std::vector<RawEvent> events;

  bool operator==(const HourBucket&) const = default;
};

/// One ICU stay after linking: `hours` always has `horizon` entries, entry h
/// holding the events with floor((time - intime) / 3600) == h in stable time order.
struct BucketedStay {
  std::string stay_id;
  std::string patient_id;
  Timestamp intime = 0;
  double age = 0.0;
  Mortality mortality = Mortality::undocumented;
  std::vector<HourBucket> hours;

  std::size_t total_events() const;
  bool operator==(const BucketedStay&) const = default;
};

/// Column names for the event table. Defaults follow MIMIC-III CHARTEVENTS
/// joined with D_ITEMS.LABEL.
struct ColumnMap {
  std::string stay_id = "ICUSTAY_ID";
  std::string label = "LABEL";
  std::string value = "VALUE";
  std::string time = "CHARTTIME";
  char delimiter = ',';
};

struct StayColumnMap {
  std::string stay_id = "ICUSTAY_ID";
  std::string patient_id = "SUBJECT_ID";
  std::string intime = "INTIME";
  std::string age = "AGE";
  std::string mortality = "HOSPITAL_EXPIRE_FLAG";  // 1 died, 0 survived, anything else undocumented
  char delimiter = ',';
};

/// Column positions resolved against a header row.
struct EventSchema {
  std::size_t stay_id, label, value, time;
  char delimiter = ',';
  std::size_t min_columns() const;

  static EventSchema resolve(const ColumnMap& map, const std::vector<std::string>& header);
};

enum class DropReason {
  malformed_row,
  bad_timestamp,
  missing_stay_id,
  empty_label,
  unknown_stay,
  excluded_stay,
  before_intime,
  beyond_horizon,
  over_cap,
};

std::string_view drop_reason_name(DropReason r);
/// Diagnostics key for a drop reason, e.g. "events.dropped.bad_timestamp".
std::string drop_key(DropReason r);

using RowResult = std::variant<RawEvent, DropReason>;

RowResult parse_event_row(std::string_view row, const EventSchema& schema);
RowResult parse_event_fields(const std::vector<std::string>& fields, const EventSchema& schema);

std::vector<StayRecord> read_stays_table(const std::filesystem::path& path, const StayColumnMap& map,
                                         Diagnostics& diag);

/// Drops stays aged under 18 at admission or without documented mortality.
std::vector<StayRecord> apply_exclusions(std::vector<StayRecord> stays, Diagnostics* diag = nullptr);

int hour_index(Timestamp time, Timestamp intime);

/// Accumulates events into per-stay hour buckets. Instances built over
/// disjoint parts of the input merge associatively.
class CohortBuilder {
public:
  CohortBuilder(const std::vector<StayRecord>& stays, int horizon_hours,
                std::unordered_set<std::string> excluded_ids = {});

  void add(RawEvent event);
  void add_drop(DropReason r) { diag_.add(drop_key(r)); }
  void merge(CohortBuilder&& other);
  /// Stays in input order, events stably time-sorted within each stay.
  std::vector<BucketedStay> finish();

  Diagnostics& diagnostics() { return diag_; }

private:
  const std::vector<StayRecord>* stays_;
  int horizon_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_set<std::string> excluded_;
  std::vector<std::vector<RawEvent>> pending_;
  std::unordered_set<std::string> labels_;
  Diagnostics diag_;
};

std::vector<BucketedStay> link_and_bucket(const std::vector<RawEvent>& events,
                                          const std::vector<StayRecord>& stays, int horizon_hours,
                                          Diagnostics& diag,
                                          const std::unordered_set<std::string>& excluded_ids = {});

/// Keeps the chronologically last `cap` events of the stay.
BucketedStay cap_events(BucketedStay stay, std::size_t cap = 10000, Diagnostics* diag = nullptr);

struct IngestOptions {
  ColumnMap events;
  StayColumnMap stays;
  int horizon_hours = 48;
  std::size_t cap = 10000;
  int threads = 1;
};

struct Cohort {
  int horizon_hours = 48;
  std::vector<BucketedStay> stays;
};

struct IngestResult {
  Cohort cohort;
  Diagnostics diagnostics;
};

IngestResult ingest_files(const std::vector<std::filesystem::path>& event_files,
                          const std::filesystem::path& stays_file, const IngestOptions& options);

// Cohort intermediate file: tab-delimited, one "S" record per stay followed by
// its "E" records (hour, seconds since intime, label, value).
void write_cohort(std::ostream& out, const Cohort& cohort);
void write_cohort(const std::filesystem::path& path, const Cohort& cohort);
Cohort read_cohort(std::istream& in);
Cohort read_cohort(const std::filesystem::path& path);

}  // namespace ehrseq
