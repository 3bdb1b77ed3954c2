#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rpmf/domain.hpp"
#include "rpmf/errors.hpp"
#include "rpmf/ingest.hpp"
#include "rpmf/sampling.hpp"

// Synthetic MNAR cohort generator. One latent daily health scalar per
// patient drives every modality: treatment cycles shock it downward, it
// mean-reverts back, adverse events fire from a logistic daily hazard on
// poor health, and wear/survey compliance degrades as health drops (the
// missingness is not at random by construction).

namespace rpmf {

struct SynthConfig {
  int n_patients = 50;
  uint64_t seed = 7;

  // monitoring spans, lognormal days clipped to [min, max]
  double span_median_days = 76.0;
  double span_log_sigma = 0.35;
  double span_min_days = 42.0;
  double span_max_days = 298.0;

  // treatment cycle
  double treatment_interval_days = 21.0;
  double treatment_jitter_days = 2.0;

  // latent health: AR(1) reverting to a per-patient baseline, with
  // treatment shocks. The baseline spread concentrates events in the
  // persistently frail patients.
  double health_reversion = 0.12;
  double health_noise = 0.16;
  double baseline_health_sd = 0.55;
  double treatment_shock = 1.0;
  double treatment_shock_jitter = 0.25;

  // daily hazard = sigmoid(alpha + beta * max(0, -health))
  double hazard_alpha = -8.5;
  double hazard_beta = 4.5;

  // event kind mix (dose reduction/delay carries 48% of adverse events)
  double p_dose_reduction_delay = 0.48;
  double p_ae_visit = 0.17;
  double p_gp_visit = 0.16;
  double p_readmission = 0.14;
  double p_death = 0.05;

  // wearable observation model
  double hr_base_bpm = 74.0;
  double hr_poor_health_slope = 11.0;  // bpm per unit of poor health
  double hr_daily_noise = 2.5;
  double hr_epoch_noise = 3.5;
  double hr_circadian_amp = 7.0;
  double steps_per_epoch = 16.0;
  double steps_poor_health_frac = 0.45;
  double step_epoch_prob = 0.35;

  // MNAR wear model: p(worn day) = sigmoid(base + slope * health)
  double wear_base_logit = 1.1;
  double wear_health_slope = 0.9;
  double wear_frac_mean = 0.72;
  double wear_frac_sd = 0.12;

  // MNAR survey model: p(response) = sigmoid(base + slope * health)
  double survey_base_logit = -0.4;
  double survey_health_slope = 0.8;
  double qor_item_base = 6.8;
  double qor_item_health_slope = 1.4;
  double qor_item_noise = 1.1;
  double wellness_response_offset = 0.5;  // added to the survey logit
  double wellness_value_slope = 1.6;
  double complication_threshold = 0.6;  // poor-health level that can raise one
  double complication_prob = 0.12;

  static SynthConfig defaults() { return {}; }
  /// Stronger, cleaner health signal for learnability experiments.
  static SynthConfig high_signal(int n_patients = 200);
  /// beta = 0: observations carry no information about events.
  static SynthConfig null_signal(int n_patients = 200);
  /// Only daily max heart rate tracks the hazard; every other stream is
  /// noise and treatments do not shock health.
  static SynthConfig planted_hr(int n_patients = 120);

  void validate() const;  // throws ArgumentError on bad rates
};

struct PatientTruth {
  std::string patient_id;
  std::vector<double> health;   // one entry per day, post-shock
  std::vector<double> hazard;   // daily event probability
  std::vector<uint8_t> worn;    // 1 if the device was worn that day
};

struct GroundTruth {
  std::vector<PatientTruth> patients;
  const PatientTruth* find(const std::string& patient_id) const;
};

struct SynthOutput {
  std::vector<RawPatientData> raw;  // per patient, ingest-ready
  GroundTruth truth;
};

/// Streams one patient at a time (raw epochs dominate memory otherwise).
void for_each_synth_patient(
    const SynthConfig& cfg,
    const std::function<void(RawPatientData&&, PatientTruth&&)>& sink);

/// Raw streams plus ground truth; deterministic in (config, seed). Holds
/// everything in memory, so intended for small test cohorts.
SynthOutput synthesize(const SynthConfig& cfg);

/// Runs the raw streams through the standard ingest aggregation.
std::pair<std::vector<PatientRecord>, GroundTruth> generate_cohort(const SynthConfig& cfg);

/// AUROC of the generator's own horizon-aggregated hazard against realized
/// labels: the ceiling any model can approach on this cohort.
double oracle_auroc(const GroundTruth& truth, std::span<const WindowSample> windows,
                    double horizon_days = 28.0);

std::vector<double> oracle_scores(const GroundTruth& truth,
                                  std::span<const WindowSample> windows,
                                  double horizon_days = 28.0);

/// Writes observations.jsonl (raw epochs + survey rows), static.csv,
/// events.jsonl, and ground_truth.jsonl into dir.
void write_synth_files(const std::string& dir, const SynthConfig& cfg);

}  // namespace rpmf
