#include "rpmf/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "rpmf/eval.hpp"
#include "rpmf/rng.hpp"

namespace rpmf {

using nlohmann::json;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kSlotDays = 1.0 / kEpochsPerDay;

const char* kTreatmentKinds[] = {"chemotherapy", "hormone_therapy", "immunotherapy",
                                 "mixed_therapy"};

}  // namespace

void SynthConfig::validate() const {
  if (n_patients <= 0) throw ArgumentError("SynthConfig: n_patients must be positive");
  if (!(span_min_days >= 42.0 && span_max_days <= 298.0 && span_min_days <= span_max_days)) {
    throw ArgumentError("SynthConfig: spans must respect [42, 298] days");
  }
  if (health_noise <= 0 || health_reversion <= 0 || treatment_interval_days <= 0) {
    throw ArgumentError("SynthConfig: rates and intervals must be positive");
  }
  double mix = p_dose_reduction_delay + p_ae_visit + p_gp_visit + p_readmission + p_death;
  if (std::abs(mix - 1.0) > 1e-9) {
    throw ArgumentError("SynthConfig: event kind mix must sum to 1");
  }
  if (wear_frac_mean <= 0 || wear_frac_mean > 1) {
    throw ArgumentError("SynthConfig: wear_frac_mean must be in (0, 1]");
  }
}

SynthConfig SynthConfig::high_signal(int n_patients) {
  SynthConfig cfg;
  cfg.n_patients = n_patients;
  cfg.health_noise = 0.10;
  cfg.treatment_shock = 1.25;
  cfg.hazard_alpha = -8.8;
  cfg.hazard_beta = 5.0;
  cfg.hr_poor_health_slope = 16.0;
  cfg.hr_epoch_noise = 2.5;
  cfg.hr_daily_noise = 1.5;
  cfg.qor_item_health_slope = 1.9;
  cfg.qor_item_noise = 0.8;
  cfg.wellness_value_slope = 2.4;
  return cfg;
}

SynthConfig SynthConfig::null_signal(int n_patients) {
  SynthConfig cfg;
  cfg.n_patients = n_patients;
  cfg.hazard_alpha = -5.3;  // keeps the positive rate near the default cohort
  cfg.hazard_beta = 0.0;
  return cfg;
}

SynthConfig SynthConfig::planted_hr(int n_patients) {
  SynthConfig cfg;
  cfg.n_patients = n_patients;
  // health becomes a free-running AR(1): no treatment coupling
  cfg.treatment_shock = 0.0;
  cfg.treatment_shock_jitter = 0.0;
  cfg.health_noise = 0.45;
  cfg.health_reversion = 0.10;
  // heart rate is the only stream that reads health
  cfg.hr_poor_health_slope = 22.0;
  cfg.hr_epoch_noise = 2.0;
  cfg.hr_daily_noise = 1.0;
  cfg.steps_poor_health_frac = 0.0;
  cfg.wear_health_slope = 0.0;
  cfg.survey_health_slope = 0.0;
  cfg.qor_item_health_slope = 0.0;
  cfg.wellness_value_slope = 0.0;
  cfg.complication_prob = 0.0;
  cfg.hazard_alpha = -8.6;
  cfg.hazard_beta = 4.6;
  return cfg;
}

const PatientTruth* GroundTruth::find(const std::string& patient_id) const {
  for (const auto& p : patients) {
    if (p.patient_id == patient_id) return &p;
  }
  return nullptr;
}

namespace {

struct PatientGen {
  RawPatientData raw;
  PatientTruth truth;
};

PatientGen generate_patient(const SynthConfig& cfg, int index) {
  Rng rng(derive_seed(cfg.seed, 0xa11ce, static_cast<uint64_t>(index)));
  PatientGen out;
  std::string pid = "synth-" + std::to_string(index);
  out.raw.skeleton.patient_id = pid;
  out.truth.patient_id = pid;

  // demographics
  out.raw.skeleton.profile.age = std::clamp(rng.normal(62.0, 11.0), 25.0, 90.0);
  out.raw.skeleton.profile.gender = rng.bernoulli(0.5) ? 1.0 : 0.0;
  out.raw.skeleton.profile.bmi = std::clamp(rng.normal(26.5, 4.5), 16.0, 45.0);

  // monitoring span
  double raw_span = std::exp(std::log(cfg.span_median_days) + cfg.span_log_sigma * rng.normal());
  int span_days = static_cast<int>(
      std::lround(std::clamp(raw_span, cfg.span_min_days, cfg.span_max_days)));
  out.raw.skeleton.monitoring_start_days = 0.0;
  out.raw.skeleton.monitoring_end_days = span_days;

  // treatment schedule: every ~interval days, one regimen per patient
  const char* regimen = kTreatmentKinds[rng.below(4)];
  std::vector<int> treatment_days;
  double next = rng.uniform(0.0, 3.0);
  while (next < span_days) {
    treatment_days.push_back(static_cast<int>(next));
    next += cfg.treatment_interval_days +
            rng.uniform(-cfg.treatment_jitter_days, cfg.treatment_jitter_days);
  }

  const double baseline = rng.normal(0.0, cfg.baseline_health_sd);
  double health = baseline + rng.normal(0.0, 0.3);
  bool died = false;
  for (int day = 0; day < span_days && !died; ++day) {
    if (std::find(treatment_days.begin(), treatment_days.end(), day) !=
        treatment_days.end()) {
      double shock =
          cfg.treatment_shock * (1.0 + cfg.treatment_shock_jitter * rng.normal());
      health -= std::max(0.0, shock);
      out.raw.event_rows.emplace_back(day + rng.uniform(0.2, 0.5), regimen);
    }
    double hazard = sigmoid(cfg.hazard_alpha + cfg.hazard_beta * std::max(0.0, -health));
    out.truth.health.push_back(health);
    out.truth.hazard.push_back(hazard);

    if (rng.bernoulli(hazard)) {
      double u = rng.uniform();
      double t_event = day + rng.uniform(0.3, 0.9);
      std::string kind;
      if (u < cfg.p_dose_reduction_delay) {
        kind = "dose_reduction_delay";
      } else if (u < cfg.p_dose_reduction_delay + cfg.p_ae_visit) {
        kind = "ae_visit";
      } else if (u < cfg.p_dose_reduction_delay + cfg.p_ae_visit + cfg.p_gp_visit) {
        kind = "gp_visit_treatment_related";
      } else if (u <
                 cfg.p_dose_reduction_delay + cfg.p_ae_visit + cfg.p_gp_visit + cfg.p_readmission) {
        kind = "readmission";
      } else {
        kind = "death";
      }
      out.raw.event_rows.emplace_back(t_event, kind);
      if (kind == "death") {
        // death truncates the stream; the span ends at the event
        out.raw.skeleton.monitoring_end_days = t_event;
        died = true;
      }
    }

    const double poor = std::max(0.0, -health);

    // wearable epochs for this day (MNAR wear draw)
    bool worn = !died && rng.bernoulli(sigmoid(cfg.wear_base_logit +
                                               cfg.wear_health_slope * health));
    out.truth.worn.push_back(worn ? 1 : 0);
    if (worn) {
      double frac = std::clamp(rng.normal(cfg.wear_frac_mean, cfg.wear_frac_sd), 0.2, 0.98);
      int n_slots = static_cast<int>(frac * kEpochsPerDay);
      int start_slot = static_cast<int>(rng.below(static_cast<uint64_t>(
          std::max(1, kEpochsPerDay - n_slots))));
      double hr_day = cfg.hr_base_bpm + cfg.hr_poor_health_slope * poor +
                      cfg.hr_daily_noise * rng.normal();
      double step_rate =
          std::max(0.0, cfg.steps_per_epoch * (1.0 - cfg.steps_poor_health_frac * poor));
      for (int s = start_slot; s < start_slot + n_slots && s < kEpochsPerDay; ++s) {
        double t = day + s * kSlotDays;
        double circadian =
            cfg.hr_circadian_amp * std::sin(2.0 * M_PI * (s / 288.0 - 0.25));
        double hr = hr_day + circadian + cfg.hr_epoch_noise * rng.normal();
        out.raw.epochs.push_back({pid, t, SensorKind::heart_rate, hr});
        if (rng.bernoulli(cfg.step_epoch_prob)) {
          double daytime = 0.5 + 0.5 * std::sin(2.0 * M_PI * (s / 288.0 - 0.25));
          int steps = rng.poisson(std::max(1e-9, step_rate * daytime));
          out.raw.epochs.push_back({pid, t, SensorKind::steps, static_cast<double>(steps)});
        }
      }
    }

    // daily surveys (MNAR response draw)
    if (!died) {
      double survey_logit = cfg.survey_base_logit + cfg.survey_health_slope * health;
      if (rng.bernoulli(sigmoid(survey_logit))) {
        double t = day + rng.uniform(0.3, 0.8);
        double total = 0.0;
        for (int item = 1; item <= kQor15Items; ++item) {
          // two anchor items track health a little more tightly
          double loading = (item == 3 || item == 12) ? 1.3 : 1.0;
          double v = cfg.qor_item_base + cfg.qor_item_health_slope * loading * health +
                     cfg.qor_item_noise * rng.normal();
          double score = std::clamp(std::round(v), 0.0, 10.0);
          total += score;
          out.raw.direct.push_back(
              {t, VariableCatalog::defaults().id("qor15_item_" + std::to_string(item)),
               score});
        }
        out.raw.direct.push_back({t, VariableCatalog::defaults().id("qor15_total"), total});
      }
      if (rng.bernoulli(sigmoid(survey_logit + cfg.wellness_response_offset))) {
        double t = day + rng.uniform(0.3, 0.8);
        double feel_well =
            rng.bernoulli(sigmoid(cfg.wellness_value_slope * health + 0.6)) ? 1.0 : 0.0;
        out.raw.direct.push_back(
            {t, VariableCatalog::defaults().id("wellness_checkin"), feel_well});
      }
      if (poor > cfg.complication_threshold && rng.bernoulli(cfg.complication_prob)) {
        double t = day + rng.uniform(0.3, 0.8);
        double seriousness = std::clamp(std::round(1.0 + poor + 0.5 * rng.normal()), 1.0, 5.0);
        out.raw.direct.push_back(
            {t, VariableCatalog::defaults().id("complication_seriousness"), seriousness});
      }
    }

    health += cfg.health_reversion * (baseline - health) + cfg.health_noise * rng.normal();
  }

  // death may leave events/epochs past the truncated end; drop them
  const double end = out.raw.skeleton.monitoring_end_days;
  std::erase_if(out.raw.epochs, [end](const RawSensorEpoch& e) { return e.t_days > end; });
  std::erase_if(out.raw.direct, [end](const Observation& o) { return o.t_days > end; });
  std::erase_if(out.raw.event_rows,
                [end](const std::pair<double, std::string>& e) { return e.first > end; });
  out.truth.health.resize(std::min<size_t>(out.truth.health.size(),
                                           static_cast<size_t>(std::ceil(end))));
  out.truth.hazard.resize(out.truth.health.size());
  out.truth.worn.resize(out.truth.health.size());
  return out;
}

}  // namespace

void for_each_synth_patient(
    const SynthConfig& cfg,
    const std::function<void(RawPatientData&&, PatientTruth&&)>& sink) {
  cfg.validate();
  for (int i = 0; i < cfg.n_patients; ++i) {
    auto gen = generate_patient(cfg, i);
    sink(std::move(gen.raw), std::move(gen.truth));
  }
}

SynthOutput synthesize(const SynthConfig& cfg) {
  SynthOutput out;
  out.raw.reserve(static_cast<size_t>(cfg.n_patients));
  out.truth.patients.reserve(static_cast<size_t>(cfg.n_patients));
  for_each_synth_patient(cfg, [&](RawPatientData&& raw, PatientTruth&& truth) {
    out.raw.push_back(std::move(raw));
    out.truth.patients.push_back(std::move(truth));
  });
  return out;
}

std::pair<std::vector<PatientRecord>, GroundTruth> generate_cohort(const SynthConfig& cfg) {
  std::vector<PatientRecord> records;
  GroundTruth truth;
  records.reserve(static_cast<size_t>(cfg.n_patients));
  truth.patients.reserve(static_cast<size_t>(cfg.n_patients));
  for_each_synth_patient(cfg, [&](RawPatientData&& raw, PatientTruth&& pt) {
    records.push_back(assemble_record(std::move(raw), VariableCatalog::defaults()));
    truth.patients.push_back(std::move(pt));
  });
  return {std::move(records), std::move(truth)};
}

std::vector<double> oracle_scores(const GroundTruth& truth,
                                  std::span<const WindowSample> windows,
                                  double horizon_days) {
  std::vector<double> scores;
  scores.reserve(windows.size());
  for (const auto& w : windows) {
    const PatientTruth* pt = truth.find(w.patient_id);
    if (!pt) throw ArgumentError("oracle_scores: no ground truth for " + w.patient_id);
    // probability of at least one event in (cutoff, cutoff + horizon]
    double survival = 1.0;
    int first = static_cast<int>(std::floor(w.cutoff_days));
    int last = static_cast<int>(std::floor(w.cutoff_days + horizon_days)) - 1;
    for (int d = first; d <= last; ++d) {
      if (d < 0 || d >= static_cast<int>(pt->hazard.size())) continue;
      survival *= 1.0 - pt->hazard[static_cast<size_t>(d)];
    }
    scores.push_back(1.0 - survival);
  }
  return scores;
}

double oracle_auroc(const GroundTruth& truth, std::span<const WindowSample> windows,
                    double horizon_days) {
  auto scores = oracle_scores(truth, windows, horizon_days);
  std::vector<int> labels;
  labels.reserve(windows.size());
  for (const auto& w : windows) labels.push_back(w.label);
  return auroc(scores, labels);
}

void write_synth_files(const std::string& dir, const SynthConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::ofstream obs(fs::path(dir) / "observations.jsonl");
  std::ofstream stat(fs::path(dir) / "static.csv");
  std::ofstream events(fs::path(dir) / "events.jsonl");
  std::ofstream truth(fs::path(dir) / "ground_truth.jsonl");
  if (!obs || !stat || !events || !truth) {
    throw DataError("cannot create synth output files in " + dir);
  }

  stat << "patient_id,age,gender,bmi,monitoring_start_days,monitoring_end_days\n";
  const auto& catalog = VariableCatalog::defaults();
  for_each_synth_patient(cfg, [&](RawPatientData&& raw, PatientTruth&& pt) {
    const PatientRecord& sk = raw.skeleton;
    stat << sk.patient_id << "," << json(sk.profile.age).dump() << ","
         << (sk.profile.gender == 0.0 ? "F" : "M") << "," << json(sk.profile.bmi).dump()
         << "," << json(sk.monitoring_start_days).dump() << ","
         << json(sk.monitoring_end_days).dump() << "\n";

    for (const auto& e : raw.epochs) {
      obs << json{{"patient_id", sk.patient_id},
                  {"t_days", e.t_days},
                  {"kind", std::string(to_string(e.kind))},
                  {"value", e.value}}
                 .dump()
          << "\n";
    }
    for (const auto& o : raw.direct) {
      obs << json{{"patient_id", sk.patient_id},
                  {"t_days", o.t_days},
                  {"variable", catalog.by_id(o.variable).name},
                  {"value", o.value}}
                 .dump()
          << "\n";
    }
    for (const auto& [t, kind] : raw.event_rows) {
      events << json{{"patient_id", sk.patient_id}, {"t_days", t}, {"kind", kind}}.dump()
             << "\n";
    }
    truth << json{{"patient_id", pt.patient_id},
                  {"health", pt.health},
                  {"hazard", pt.hazard},
                  {"worn", pt.worn}}
                 .dump()
          << "\n";
  });
  if (!obs || !stat || !events || !truth) {
    throw DataError("write failed in " + dir);
  }
}

}  // namespace rpmf
