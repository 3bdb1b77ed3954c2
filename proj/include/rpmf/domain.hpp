#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rpmf {

enum class Category { wearable, survey, event };
enum class ValueKind { continuous, binary, ordinal };

std::string_view to_string(Category c);
std::string_view to_string(ValueKind k);

struct VariableDef {
  int id = -1;  // dense index into the catalog
  std::string name;
  Category category = Category::wearable;
  ValueKind kind = ValueKind::continuous;
};

/// The fixed vocabulary of time-varying variables: 4 wearable, 18 survey,
/// 8 clinical-event markers, in that order. Demographics are static fields
/// on the patient, not catalog entries.
class VariableCatalog {
 public:
  static const VariableCatalog& defaults();

  int size() const { return static_cast<int>(entries_.size()); }
  const VariableDef& by_id(int id) const { return entries_.at(static_cast<size_t>(id)); }
  const VariableDef* find(std::string_view name) const;
  /// Throws std::out_of_range naming the variable if absent.
  int id(std::string_view name) const;
  std::span<const VariableDef> entries() const { return entries_; }

  explicit VariableCatalog(std::vector<VariableDef> entries);

 private:
  std::vector<VariableDef> entries_;
};

inline constexpr int kNumVariables = 30;
inline constexpr int kQor15Items = 15;
inline constexpr double kQor15ItemMax = 10.0;

/// One timestamped measurement of one variable, in native units. Records
/// group observations per patient; the on-disk row carries the patient id.
struct Observation {
  double t_days = 0.0;  // days since enrollment, >= 0
  int variable = -1;
  double value = 0.0;
};

struct StaticProfile {
  double age = 0.0;     // years
  double gender = 0.0;  // 0 = female, 1 = male
  double bmi = 0.0;     // kg/m^2
};

enum class EventKind {
  gp_visit_treatment_related,
  ae_visit,
  readmission,
  dose_reduction_delay,
  death,
};
inline constexpr int kNumEventKinds = 5;

std::string_view to_string(EventKind k);
std::optional<EventKind> event_kind_from_string(std::string_view s);

struct AdverseEvent {
  double t_days = 0.0;
  EventKind kind = EventKind::ae_visit;
};

struct PatientRecord {
  std::string patient_id;
  StaticProfile profile;
  std::vector<Observation> observations;   // sorted by (t_days, variable)
  std::vector<AdverseEvent> adverse_events;  // sorted by t_days
  double monitoring_start_days = 0.0;
  double monitoring_end_days = 0.0;
};

struct Violation {
  std::string field;
  std::string rule;
};

/// Violations are data, not failures: an empty result means the record
/// satisfies every invariant.
std::vector<Violation> validate_record(const PatientRecord& rec,
                                       const VariableCatalog& catalog);

// Names of the event-marker variables that flag a treatment administration.
std::span<const std::string_view> treatment_variable_names();

}  // namespace rpmf
