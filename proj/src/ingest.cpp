#include "rpmf/ingest.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace rpmf {

using nlohmann::json;

std::string_view to_string(SensorKind k) {
  return k == SensorKind::heart_rate ? "heart_rate" : "steps";
}

RawSensorEpoch clip_vitals(RawSensorEpoch epoch) {
  if (!std::isfinite(epoch.value)) {
    throw DataError("clip_vitals: non-finite value for patient " + epoch.patient_id +
                    " at t=" + std::to_string(epoch.t_days));
  }
  if (epoch.kind == SensorKind::heart_rate) {
    epoch.value = std::clamp(epoch.value, kHrMin, kHrMax);
  } else {
    epoch.value = std::clamp(epoch.value, kStepsMin, kStepsMax);
  }
  return epoch;
}

std::map<int, std::vector<RawSensorEpoch>> bucket_by_day(
    std::span<const RawSensorEpoch> epochs) {
  std::map<int, std::vector<RawSensorEpoch>> buckets;
  for (const auto& e : epochs) {
    buckets[static_cast<int>(std::floor(e.t_days))].push_back(e);
  }
  return buckets;
}

std::vector<Observation> aggregate_daily(std::span<const RawSensorEpoch> epochs, int day,
                                         const VariableCatalog& catalog) {
  if (day < 0) throw ArgumentError("aggregate_daily: negative day " + std::to_string(day));
  const double stamp = static_cast<double>(day) + 1.0;

  double max_hr = 0.0;
  bool any_hr = false;
  double total_steps = 0.0;
  bool any_steps = false;
  std::set<int> hr_slots;
  for (const auto& e : epochs) {
    if (e.t_days < day || e.t_days >= day + 1) {
      throw ArgumentError("aggregate_daily: epoch at t=" + std::to_string(e.t_days) +
                          " outside day " + std::to_string(day));
    }
    if (e.kind == SensorKind::heart_rate) {
      max_hr = any_hr ? std::max(max_hr, e.value) : e.value;
      any_hr = true;
      // epsilon absorbs representation error in times that are exact
      // slot multiples (k/288)
      int slot = static_cast<int>((e.t_days - day) * kEpochsPerDay + 1e-6);
      hr_slots.insert(std::clamp(slot, 0, kEpochsPerDay - 1));
    } else {
      total_steps += e.value;
      any_steps = true;
    }
  }

  std::vector<Observation> out;
  if (any_hr) {
    out.push_back({stamp, catalog.id("daily_max_hr"), max_hr});
    if (any_steps) {
      out.push_back({stamp, catalog.id("daily_total_steps"),
                     std::min(total_steps, kStepsMax * kEpochsPerDay)});
    }
    out.push_back({stamp, catalog.id("daily_wear_pct"),
                   100.0 * static_cast<double>(hr_slots.size()) / kEpochsPerDay});
  } else {
    // no wearing signal at all: only the engineered missingness feature
    out.push_back({stamp, catalog.id("daily_wear_pct"), 0.0});
  }
  return out;
}

std::vector<Observation> absence_tokens(std::span<const RawSensorEpoch> sorted_epochs,
                                        const VariableCatalog& catalog,
                                        double gap_threshold_days) {
  const int var = catalog.id("continuous_absence_duration");
  std::vector<Observation> out;
  const RawSensorEpoch* prev = nullptr;
  for (const auto& e : sorted_epochs) {
    if (e.kind != SensorKind::heart_rate) continue;
    if (prev) {
      double gap = e.t_days - prev->t_days;
      if (gap >= gap_threshold_days) out.push_back({e.t_days, var, gap});
    }
    prev = &e;
  }
  return out;
}

namespace {

std::string trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& s, const std::string& what, int line_no) {
  try {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(what + ": not a number '" + s + "' at line " + std::to_string(line_no));
  }
}

json parse_line(const std::string& line, const std::string& path, int line_no) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
  }
}

double require_number(const json& obj, const char* key, const std::string& path, int line_no) {
  if (!obj.contains(key) || !obj[key].is_number()) {
    throw DataError(path + ":" + std::to_string(line_no) + ": missing numeric field '" +
                    std::string(key) + "'");
  }
  return obj[key].get<double>();
}

std::string require_string(const json& obj, const char* key, const std::string& path,
                           int line_no) {
  if (!obj.contains(key) || !obj[key].is_string()) {
    throw DataError(path + ":" + std::to_string(line_no) + ": missing string field '" +
                    std::string(key) + "'");
  }
  return obj[key].get<std::string>();
}

// Event kinds that also produce an input token, mapped to the token variable.
const std::unordered_map<std::string, std::string>& event_token_variable() {
  static const std::unordered_map<std::string, std::string> m = {
      {"chemotherapy", "chemotherapy"},
      {"hormone_therapy", "hormone_therapy"},
      {"immunotherapy", "immunotherapy"},
      {"mixed_therapy", "mixed_therapy"},
      {"readmission", "readmission"},
      {"gp_visit", "gp_visit"},
      {"gp_visit_treatment_related", "gp_visit"},
      {"ae_visit", "ae_visit"},
      {"dose_reduction_delay", "dose_reduction_delay"},
  };
  return m;
}

bool known_event_kind(const std::string& kind) {
  return event_token_variable().count(kind) > 0 || event_kind_from_string(kind).has_value();
}

}  // namespace

PatientRecord assemble_record(RawPatientData data, const VariableCatalog& catalog,
                              const IngestOptions& options, int* duplicates) {
  // key (t_days, variable) -> value; ordered so emission is already sorted.
  // Overwrites implement the keep-last duplicate policy.
  std::map<std::pair<double, int>, double> observations;
  int dup_count = 0;
  auto put = [&](const Observation& o) {
    auto [it, inserted] = observations.insert_or_assign(std::pair{o.t_days, o.variable}, o.value);
    (void)it;
    if (!inserted) ++dup_count;
  };

  for (const auto& o : data.direct) put(o);

  std::vector<AdverseEvent> labels;
  for (const auto& [t, kind] : data.event_rows) {
    bool known = false;
    const auto& tokens = event_token_variable();
    if (auto it = tokens.find(kind); it != tokens.end()) {
      put({t, catalog.id(it->second), 1.0});
      known = true;
    }
    if (auto label = event_kind_from_string(kind)) {
      labels.push_back({t, *label});
      known = true;
    }
    if (!known) {
      throw DataError("patient " + data.skeleton.patient_id + ": unknown event kind '" +
                      kind + "'");
    }
  }

  for (auto& e : data.epochs) e = clip_vitals(std::move(e));
  std::stable_sort(data.epochs.begin(), data.epochs.end(),
                   [](const RawSensorEpoch& a, const RawSensorEpoch& z) {
                     return a.t_days < z.t_days;
                   });
  auto buckets = bucket_by_day(data.epochs);
  const double start = data.skeleton.monitoring_start_days;
  const double end = data.skeleton.monitoring_end_days;
  int first_day = std::max(0, static_cast<int>(std::floor(start)));
  for (int day = first_day; day + 1 <= end; ++day) {
    auto it = buckets.find(day);
    std::span<const RawSensorEpoch> day_epochs =
        it == buckets.end() ? std::span<const RawSensorEpoch>{}
                            : std::span<const RawSensorEpoch>(it->second);
    for (const auto& o : aggregate_daily(day_epochs, day, catalog)) put(o);
  }
  for (const auto& o : absence_tokens(data.epochs, catalog, options.gap_threshold_days)) {
    put(o);
  }

  PatientRecord rec = std::move(data.skeleton);
  rec.observations.reserve(observations.size());
  for (const auto& [key, value] : observations) {
    rec.observations.push_back({key.first, key.second, value});
  }
  rec.adverse_events = std::move(labels);
  std::stable_sort(rec.adverse_events.begin(), rec.adverse_events.end(),
                   [](const AdverseEvent& a, const AdverseEvent& z) {
                     return a.t_days < z.t_days;
                   });
  if (duplicates) *duplicates += dup_count;

  auto violations = validate_record(rec, catalog);
  if (!violations.empty()) {
    std::string msg = "patient " + rec.patient_id + ": invalid record:";
    size_t shown = 0;
    for (const auto& v : violations) {
      msg += " [" + v.field + ": " + v.rule + "]";
      if (++shown >= 5) break;
    }
    if (violations.size() > shown) {
      msg += " (+" + std::to_string(violations.size() - shown) + " more)";
    }
    throw DataError(msg);
  }
  return rec;
}

std::vector<PatientRecord> parse_cohort(const std::string& observations_path,
                                        const std::string& static_path,
                                        const std::string& events_path,
                                        const VariableCatalog& catalog,
                                        const IngestOptions& options,
                                        IngestReport* report) {
  IngestReport local;
  IngestReport& rep = report ? *report : local;

  // --- static CSV defines the population
  std::ifstream sf(static_path);
  if (!sf) throw DataError("cannot open static file: " + static_path);
  std::map<std::string, RawPatientData> builders;  // sorted by patient id
  {
    std::string line;
    int line_no = 0;
    if (!std::getline(sf, line)) throw DataError(static_path + ": empty file");
    ++line_no;
    const std::string expected =
        "patient_id,age,gender,bmi,monitoring_start_days,monitoring_end_days";
    if (trim(line) != expected) {
      throw DataError(static_path + ": expected header '" + expected + "'");
    }
    while (std::getline(sf, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      std::vector<std::string> fields;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) fields.push_back(trim(cell));
      if (fields.size() != 6) {
        throw DataError(static_path + ":" + std::to_string(line_no) +
                        ": expected 6 fields, got " + std::to_string(fields.size()));
      }
      RawPatientData b;
      b.skeleton.patient_id = fields[0];
      b.skeleton.profile.age = to_double(fields[1], static_path + " age", line_no);
      if (fields[2] == "F") {
        b.skeleton.profile.gender = 0.0;
      } else if (fields[2] == "M") {
        b.skeleton.profile.gender = 1.0;
      } else {
        throw DataError(static_path + ":" + std::to_string(line_no) +
                        ": gender must be F or M, got '" + fields[2] + "'");
      }
      b.skeleton.profile.bmi = to_double(fields[3], static_path + " bmi", line_no);
      b.skeleton.monitoring_start_days = to_double(fields[4], static_path + " start", line_no);
      b.skeleton.monitoring_end_days = to_double(fields[5], static_path + " end", line_no);
      if (builders.count(fields[0])) {
        throw DataError(static_path + ":" + std::to_string(line_no) + ": duplicate patient '" +
                        fields[0] + "'");
      }
      builders.emplace(fields[0], std::move(b));
    }
  }

  auto builder_for = [&](const std::string& pid, const std::string& path,
                         int line_no) -> RawPatientData& {
    auto it = builders.find(pid);
    if (it == builders.end()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": patient '" + pid +
                      "' not present in static file");
    }
    return it->second;
  };

  // --- observations (direct rows and raw sensor epochs share the file)
  {
    std::ifstream f(observations_path);
    if (!f) throw DataError("cannot open observations file: " + observations_path);
    std::string line;
    int line_no = 0;
    std::set<std::string> unknown_vars;
    while (std::getline(f, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      json obj = parse_line(line, observations_path, line_no);
      std::string pid = require_string(obj, "patient_id", observations_path, line_no);
      double t = require_number(obj, "t_days", observations_path, line_no);
      double value = require_number(obj, "value", observations_path, line_no);
      RawPatientData& b = builder_for(pid, observations_path, line_no);
      if (obj.contains("kind")) {
        std::string kind = trim(require_string(obj, "kind", observations_path, line_no));
        SensorKind sk;
        if (kind == "heart_rate") {
          sk = SensorKind::heart_rate;
        } else if (kind == "steps") {
          sk = SensorKind::steps;
        } else {
          throw DataError(observations_path + ":" + std::to_string(line_no) +
                          ": unknown sensor kind '" + kind + "'");
        }
        if (!std::isfinite(value)) {
          throw DataError(observations_path + ":" + std::to_string(line_no) +
                          ": non-finite sensor value");
        }
        b.epochs.push_back({pid, t, sk, value});
      } else {
        std::string name = trim(require_string(obj, "variable", observations_path, line_no));
        const VariableDef* def = catalog.find(name);
        if (!def) {
          unknown_vars.insert(name);
          continue;
        }
        b.direct.push_back({t, def->id, value});
      }
    }
    if (!unknown_vars.empty()) {
      std::string msg = observations_path + ": unknown variable name(s):";
      for (const auto& v : unknown_vars) msg += " '" + v + "'";
      throw DataError(msg);
    }
  }

  // --- clinical events: tokens for the history, labels for the future
  {
    std::ifstream f(events_path);
    if (!f) throw DataError("cannot open events file: " + events_path);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      json obj = parse_line(line, events_path, line_no);
      std::string pid = require_string(obj, "patient_id", events_path, line_no);
      double t = require_number(obj, "t_days", events_path, line_no);
      std::string kind = trim(require_string(obj, "kind", events_path, line_no));
      RawPatientData& b = builder_for(pid, events_path, line_no);
      if (!known_event_kind(kind)) {
        throw DataError(events_path + ":" + std::to_string(line_no) +
                        ": unknown event kind '" + kind + "'");
      }
      b.event_rows.emplace_back(t, kind);
    }
  }

  // --- the shared aggregation/validation path
  std::vector<PatientRecord> out;
  out.reserve(builders.size());
  for (auto& [pid, b] : builders) {
    int duplicates = 0;
    out.push_back(assemble_record(std::move(b), catalog, options, &duplicates));
    rep.duplicate_observations += duplicates;
    if (duplicates > 0) {
      rep.warnings.push_back("patient " + pid + ": " + std::to_string(duplicates) +
                             " duplicate observation(s) resolved keep-last");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filtering

namespace {

bool is_informative(const Observation& o, int wear_var) {
  return o.variable != wear_var || o.value > 0.0;
}

}  // namespace

std::vector<FilterRule> default_filter_rules(const VariableCatalog& catalog,
                                             std::vector<std::string> excluded_ids) {
  const int wear_var = catalog.id("daily_wear_pct");
  const int absence_var = catalog.id("continuous_absence_duration");
  const int max_hr = catalog.id("daily_max_hr");
  const int steps = catalog.id("daily_total_steps");

  std::vector<int> treatment_vars;
  for (auto name : treatment_variable_names()) treatment_vars.push_back(catalog.id(name));

  std::vector<FilterRule> rules;
  rules.push_back(FilterRule{
      "empty_record", "no observations beyond engineered zero-wear placeholders",
      [wear_var, absence_var](const PatientRecord& r) {
        for (const auto& o : r.observations) {
          if (o.variable == absence_var) continue;
          if (is_informative(o, wear_var)) return false;
        }
        return r.adverse_events.empty();
      }});
  rules.push_back(FilterRule{
      "no_treatment_in_monitoring", "no treatment event inside the monitoring period",
      [treatment_vars](const PatientRecord& r) {
        for (const auto& o : r.observations) {
          for (int tv : treatment_vars) {
            if (o.variable == tv && o.t_days >= r.monitoring_start_days &&
                o.t_days <= r.monitoring_end_days) {
              return false;
            }
          }
        }
        return true;
      }});
  rules.push_back(FilterRule{
      "insufficient_rpm_days", "fewer than 3 distinct days with any RPM observation",
      [&catalog, wear_var, absence_var, max_hr, steps](const PatientRecord& r) {
        std::set<int> days;
        for (const auto& o : r.observations) {
          const auto& def = catalog.by_id(o.variable);
          if (def.category == Category::event) continue;
          if (o.variable == absence_var) continue;
          if (!is_informative(o, wear_var)) continue;
          bool daily_aggregate =
              o.variable == wear_var || o.variable == max_hr || o.variable == steps;
          double t = o.t_days;
          int day;
          if (daily_aggregate && t == std::floor(t)) {
            day = static_cast<int>(t) - 1;  // stamped at day + 1
          } else {
            day = static_cast<int>(std::floor(t));
          }
          days.insert(day);
        }
        return static_cast<int>(days.size()) < 3;
      }});
  std::set<std::string> excluded(excluded_ids.begin(), excluded_ids.end());
  rules.push_back(FilterRule{"excluded_id", "patient id on the explicit exclusion list",
                             [excluded = std::move(excluded)](const PatientRecord& r) {
                               return excluded.count(r.patient_id) > 0;
                             }});
  return rules;
}

std::pair<std::vector<PatientRecord>, FilterReport> apply_filters(
    std::vector<PatientRecord> cohort, std::span<const FilterRule> rules) {
  FilterReport report;
  for (const auto& rule : rules) report.drop_counts.emplace_back(rule.rule_id, 0);
  std::vector<PatientRecord> kept;
  kept.reserve(cohort.size());
  for (auto& rec : cohort) {
    const FilterRule* hit = nullptr;
    for (const auto& rule : rules) {
      if (rule.drop(rec)) {
        hit = &rule;
        break;
      }
    }
    if (hit) {
      for (auto& [id, count] : report.drop_counts) {
        if (id == hit->rule_id) ++count;
      }
      report.dropped.emplace_back(rec.patient_id, hit->rule_id);
    } else {
      report.kept_ids.push_back(rec.patient_id);
      kept.push_back(std::move(rec));
    }
  }
  return {std::move(kept), std::move(report)};
}

std::string FilterReport::table() const {
  std::ostringstream os;
  os << "filter rule                       dropped\n";
  for (const auto& [id, count] : drop_counts) {
    os << id;
    for (size_t i = id.size(); i < 34; ++i) os << ' ';
    os << count << "\n";
  }
  os << "kept";
  for (size_t i = 4; i < 34; ++i) os << ' ';
  os << kept_ids.size() << "\n";
  return os.str();
}

std::vector<std::string> read_exclusion_list(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open exclusion list: " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(f, line)) {
    std::string id = trim(line);
    if (!id.empty()) ids.push_back(std::move(id));
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Cohort serialization

void write_cohort(const std::string& path, std::span<const PatientRecord> records) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path);
  const auto& catalog = VariableCatalog::defaults();
  for (const auto& rec : records) {
    json obs = json::array();
    for (const auto& o : rec.observations) {
      obs.push_back(json::array({o.t_days, catalog.by_id(o.variable).name, o.value}));
    }
    json events = json::array();
    for (const auto& e : rec.adverse_events) {
      events.push_back(json::array({e.t_days, std::string(to_string(e.kind))}));
    }
    json row = {
        {"patient_id", rec.patient_id},
        {"age", rec.profile.age},
        {"gender", rec.profile.gender == 0.0 ? "F" : "M"},
        {"bmi", rec.profile.bmi},
        {"monitoring_start_days", rec.monitoring_start_days},
        {"monitoring_end_days", rec.monitoring_end_days},
        {"observations", std::move(obs)},
        {"adverse_events", std::move(events)},
    };
    f << row.dump() << "\n";
  }
  if (!f) throw DataError("write failed: " + path);
}

std::vector<PatientRecord> read_cohort(const std::string& path,
                                       const VariableCatalog& catalog) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open cohort file: " + path);
  std::vector<PatientRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj = parse_line(line, path, line_no);
    PatientRecord rec;
    rec.patient_id = require_string(obj, "patient_id", path, line_no);
    rec.profile.age = require_number(obj, "age", path, line_no);
    std::string gender = require_string(obj, "gender", path, line_no);
    if (gender != "F" && gender != "M") {
      throw DataError(path + ":" + std::to_string(line_no) + ": gender must be F or M");
    }
    rec.profile.gender = gender == "F" ? 0.0 : 1.0;
    rec.profile.bmi = require_number(obj, "bmi", path, line_no);
    rec.monitoring_start_days = require_number(obj, "monitoring_start_days", path, line_no);
    rec.monitoring_end_days = require_number(obj, "monitoring_end_days", path, line_no);
    if (!obj.contains("observations") || !obj["observations"].is_array() ||
        !obj.contains("adverse_events") || !obj["adverse_events"].is_array()) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": missing observations/adverse_events arrays");
    }
    for (const auto& row : obj["observations"]) {
      if (!row.is_array() || row.size() != 3 || !row[0].is_number() || !row[1].is_string() ||
          !row[2].is_number()) {
        throw DataError(path + ":" + std::to_string(line_no) + ": bad observation row");
      }
      const VariableDef* def = catalog.find(trim(row[1].get<std::string>()));
      if (!def) {
        throw DataError(path + ":" + std::to_string(line_no) + ": unknown variable '" +
                        row[1].get<std::string>() + "'");
      }
      rec.observations.push_back({row[0].get<double>(), def->id, row[2].get<double>()});
    }
    for (const auto& row : obj["adverse_events"]) {
      if (!row.is_array() || row.size() != 2 || !row[0].is_number() || !row[1].is_string()) {
        throw DataError(path + ":" + std::to_string(line_no) + ": bad adverse event row");
      }
      auto kind = event_kind_from_string(row[1].get<std::string>());
      if (!kind) {
        throw DataError(path + ":" + std::to_string(line_no) + ": unknown event kind '" +
                        row[1].get<std::string>() + "'");
      }
      rec.adverse_events.push_back({row[0].get<double>(), *kind});
    }
    auto violations = validate_record(rec, catalog);
    if (!violations.empty()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": record fails validation (" +
                      violations[0].field + ": " + violations[0].rule + ")");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace rpmf
