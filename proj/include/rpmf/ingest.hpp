#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rpmf/domain.hpp"
#include "rpmf/errors.hpp"

namespace rpmf {

enum class SensorKind { heart_rate, steps };

std::string_view to_string(SensorKind k);

/// One 5-minute wearable reading. Epochs are nominally 1/288 day apart but
/// gaps of any length are allowed.
struct RawSensorEpoch {
  std::string patient_id;
  double t_days = 0.0;
  SensorKind kind = SensorKind::heart_rate;
  double value = 0.0;
};

inline constexpr double kHrMin = 40.0, kHrMax = 200.0;
inline constexpr double kStepsMin = 0.0, kStepsMax = 600.0;
inline constexpr int kEpochsPerDay = 288;

/// Clamps heart rate into [40, 200] bpm and steps into [0, 600] per epoch.
/// Non-finite values are rejected with a DataError.
RawSensorEpoch clip_vitals(RawSensorEpoch epoch);

/// Daily wearable summary for one integer day bucket [day, day+1). Emits
/// observations timestamped at day+1 (a summary is only known once the day
/// completes): max HR, total steps, and wear percentage. With zero HR
/// epochs only daily_wear_pct = 0 is emitted; nothing is imputed.
std::vector<Observation> aggregate_daily(std::span<const RawSensorEpoch> epochs, int day,
                                         const VariableCatalog& catalog);

/// One continuous_absence_duration token per maximal HR gap >= threshold,
/// placed at the gap's end with the gap length in days as value.
std::vector<Observation> absence_tokens(std::span<const RawSensorEpoch> sorted_epochs,
                                        const VariableCatalog& catalog,
                                        double gap_threshold_days = 0.5);

/// Buckets epochs by floor(t_days); epochs at exact day boundaries belong
/// to the later day. Keys cover every epoch exactly once.
std::map<int, std::vector<RawSensorEpoch>> bucket_by_day(
    std::span<const RawSensorEpoch> epochs);

struct IngestOptions {
  double gap_threshold_days = 0.5;
};

struct IngestReport {
  int duplicate_observations = 0;  // resolved keep-last
  std::vector<std::string> warnings;
};

/// One patient's raw material before aggregation. parse_cohort builds these
/// from files; the synthetic generator produces them directly.
struct RawPatientData {
  PatientRecord skeleton;  // id, profile, monitoring span; streams empty
  std::vector<Observation> direct;  // survey and other pre-aggregated rows
  std::vector<RawSensorEpoch> epochs;
  std::vector<std::pair<double, std::string>> event_rows;  // (t_days, kind)
};

/// The shared aggregation path: clips epochs, derives daily wearable values
/// and absence tokens, maps event rows to input tokens and labels, resolves
/// duplicates keep-last, sorts, validates (throws DataError on violations).
PatientRecord assemble_record(RawPatientData data, const VariableCatalog& catalog,
                              const IngestOptions& options = {}, int* duplicates = nullptr);

/// Parses the three input files (observations JSONL with inline raw-epoch
/// rows, static CSV, events JSONL) into validated PatientRecords sorted by
/// patient id. Raw epochs are clipped, aggregated into daily values, and
/// turned into absence tokens here; event rows feed input tokens and/or
/// adverse-event labels depending on kind.
std::vector<PatientRecord> parse_cohort(const std::string& observations_path,
                                        const std::string& static_path,
                                        const std::string& events_path,
                                        const VariableCatalog& catalog,
                                        const IngestOptions& options = {},
                                        IngestReport* report = nullptr);

struct FilterRule {
  std::string rule_id;
  std::string description;
  std::function<bool(const PatientRecord&)> drop;  // true = drop
};

struct FilterReport {
  std::vector<std::pair<std::string, int>> drop_counts;  // rule order preserved
  std::vector<std::string> kept_ids;
  std::vector<std::pair<std::string, std::string>> dropped;  // (patient, rule)

  std::string table() const;
};

/// The mechanically checkable subset of the trial's patient filters plus an
/// explicit exclusion id list for externally-known reasons.
std::vector<FilterRule> default_filter_rules(const VariableCatalog& catalog,
                                             std::vector<std::string> excluded_ids = {});

/// First matching rule wins for reporting; |kept| + |dropped| = |input|.
std::pair<std::vector<PatientRecord>, FilterReport> apply_filters(
    std::vector<PatientRecord> cohort, std::span<const FilterRule> rules);

/// Reads one patient id per line, ignoring blanks and surrounding space.
std::vector<std::string> read_exclusion_list(const std::string& path);

// Validated-cohort JSONL (the `ingest` output consumed by train/eval).
void write_cohort(const std::string& path, std::span<const PatientRecord> records);
std::vector<PatientRecord> read_cohort(const std::string& path,
                                       const VariableCatalog& catalog);

}  // namespace rpmf
