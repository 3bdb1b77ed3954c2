#include "rpmf/domain.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace rpmf {

std::string_view to_string(Category c) {
  switch (c) {
    case Category::wearable: return "wearable";
    case Category::survey: return "survey";
    case Category::event: return "event";
  }
  return "?";
}

std::string_view to_string(ValueKind k) {
  switch (k) {
    case ValueKind::continuous: return "continuous";
    case ValueKind::binary: return "binary";
    case ValueKind::ordinal: return "ordinal";
  }
  return "?";
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::gp_visit_treatment_related: return "gp_visit_treatment_related";
    case EventKind::ae_visit: return "ae_visit";
    case EventKind::readmission: return "readmission";
    case EventKind::dose_reduction_delay: return "dose_reduction_delay";
    case EventKind::death: return "death";
  }
  return "?";
}

std::optional<EventKind> event_kind_from_string(std::string_view s) {
  if (s == "gp_visit_treatment_related") return EventKind::gp_visit_treatment_related;
  if (s == "ae_visit") return EventKind::ae_visit;
  if (s == "readmission") return EventKind::readmission;
  if (s == "dose_reduction_delay") return EventKind::dose_reduction_delay;
  if (s == "death") return EventKind::death;
  return std::nullopt;
}

VariableCatalog::VariableCatalog(std::vector<VariableDef> entries)
    : entries_(std::move(entries)) {
  for (size_t i = 0; i < entries_.size(); ++i) {
    entries_[i].id = static_cast<int>(i);
  }
}

const VariableDef* VariableCatalog::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

int VariableCatalog::id(std::string_view name) const {
  const VariableDef* def = find(name);
  if (!def) throw std::out_of_range("unknown variable: " + std::string(name));
  return def->id;
}

const VariableCatalog& VariableCatalog::defaults() {
  static const VariableCatalog catalog = [] {
    std::vector<VariableDef> e;
    e.reserve(kNumVariables);
    auto add = [&e](std::string name, Category c, ValueKind k) {
      e.push_back(VariableDef{-1, std::move(name), c, k});
    };
    // Wearable (4)
    add("daily_max_hr", Category::wearable, ValueKind::continuous);
    add("daily_total_steps", Category::wearable, ValueKind::continuous);
    add("daily_wear_pct", Category::wearable, ValueKind::continuous);
    add("continuous_absence_duration", Category::wearable, ValueKind::continuous);
    // Survey (18)
    add("qor15_total", Category::survey, ValueKind::ordinal);
    for (int i = 1; i <= kQor15Items; ++i) {
      add("qor15_item_" + std::to_string(i), Category::survey, ValueKind::ordinal);
    }
    add("complication_seriousness", Category::survey, ValueKind::ordinal);
    add("wellness_checkin", Category::survey, ValueKind::binary);
    // Previous clinical events (8)
    add("chemotherapy", Category::event, ValueKind::binary);
    add("hormone_therapy", Category::event, ValueKind::binary);
    add("immunotherapy", Category::event, ValueKind::binary);
    add("mixed_therapy", Category::event, ValueKind::binary);
    add("readmission", Category::event, ValueKind::binary);
    add("gp_visit", Category::event, ValueKind::binary);
    add("ae_visit", Category::event, ValueKind::binary);
    add("dose_reduction_delay", Category::event, ValueKind::binary);
    return VariableCatalog(std::move(e));
  }();
  return catalog;
}

std::span<const std::string_view> treatment_variable_names() {
  static constexpr std::string_view names[] = {
      "chemotherapy", "hormone_therapy", "immunotherapy", "mixed_therapy"};
  return names;
}

namespace {

bool finite(double x) { return std::isfinite(x); }

}  // namespace

std::vector<Violation> validate_record(const PatientRecord& rec,
                                       const VariableCatalog& catalog) {
  std::vector<Violation> out;
  auto flag = [&out](std::string field, std::string rule) {
    out.push_back(Violation{std::move(field), std::move(rule)});
  };

  if (rec.patient_id.empty()) flag("patient_id", "non-empty");
  if (!(rec.profile.age > 0.0 && rec.profile.age < 120.0)) flag("static.age", "age in (0, 120)");
  if (rec.profile.gender != 0.0 && rec.profile.gender != 1.0) flag("static.gender", "gender in {0, 1}");
  if (!(rec.profile.bmi > 5.0 && rec.profile.bmi < 100.0)) flag("static.bmi", "bmi in (5, 100)");
  if (!finite(rec.monitoring_start_days) || !finite(rec.monitoring_end_days) ||
      rec.monitoring_start_days > rec.monitoring_end_days) {
    flag("monitoring", "monitoring_start_days <= monitoring_end_days, finite");
  }

  int wellness = -1, qor_first = -1;
  if (const VariableDef* d = catalog.find("wellness_checkin")) wellness = d->id;
  if (const VariableDef* d = catalog.find("qor15_item_1")) qor_first = d->id;

  const Observation* prev = nullptr;
  for (size_t i = 0; i < rec.observations.size(); ++i) {
    const Observation& o = rec.observations[i];
    std::string where = "observations[" + std::to_string(i) + "]";
    if (!finite(o.t_days) || o.t_days < 0.0) flag(where + ".t_days", "t_days >= 0");
    if (!finite(o.value)) flag(where + ".value", "value finite");
    if (o.variable < 0 || o.variable >= catalog.size()) {
      flag(where + ".variable", "resolves in catalog");
    } else {
      if (o.variable == wellness && o.value != 0.0 && o.value != 1.0) {
        flag(where + ".value", "wellness_checkin in {0, 1}");
      }
      if (qor_first >= 0 && o.variable >= qor_first && o.variable < qor_first + kQor15Items &&
          (o.value < 0.0 || o.value > kQor15ItemMax)) {
        flag(where + ".value", "qor15_item in [0, 10]");
      }
    }
    if (finite(o.t_days) &&
        (o.t_days < rec.monitoring_start_days || o.t_days > rec.monitoring_end_days)) {
      flag(where + ".t_days", "within monitoring span");
    }
    if (prev && (prev->t_days > o.t_days ||
                 (prev->t_days == o.t_days && prev->variable > o.variable))) {
      flag(where, "sorted by t_days then variable");
    }
    prev = &o;
  }

  for (size_t i = 1; i < rec.adverse_events.size(); ++i) {
    if (rec.adverse_events[i - 1].t_days > rec.adverse_events[i].t_days) {
      flag("adverse_events[" + std::to_string(i) + "]", "sorted by t_days");
    }
  }
  return out;
}

}  // namespace rpmf
