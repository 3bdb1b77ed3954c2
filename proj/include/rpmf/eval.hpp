#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "rpmf/domain.hpp"
#include "rpmf/errors.hpp"
#include "rpmf/model.hpp"
#include "rpmf/sampling.hpp"

namespace rpmf {

/// Fraction of predictions on the right side of the threshold; >= counts as
/// positive.
double accuracy(std::span<const double> preds, std::span<const int> labels,
                double threshold = 0.5);

/// Mann-Whitney AUROC via average ranks (ties counted half). Requires both
/// classes.
double auroc(std::span<const double> preds, std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

/// Points at every distinct score (descending) plus the (0,0) sentinel; the
/// trapezoid over these points equals auroc to ~1e-12.
std::vector<RocPoint> roc_curve(std::span<const double> preds, std::span<const int> labels);

double trapezoid_area(std::span<const RocPoint> points);

enum class BootstrapMode { train_resample, test_resample };

std::string_view to_string(BootstrapMode m);
BootstrapMode bootstrap_mode_from_string(std::string_view s);

struct EvalReport {
  double accuracy_point = 0.0, accuracy_lo = 0.0, accuracy_hi = 0.0;
  double auroc_point = 0.0, auroc_lo = 0.0, auroc_hi = 0.0;
  std::vector<RocPoint> roc;  // reference model on the fixed test windows
  long n_windows = 0;
  double positive_rate = 0.0;
  std::vector<double> boot_accuracy;
  std::vector<double> boot_auroc;
  BootstrapMode mode = BootstrapMode::test_resample;
  int n_boot = 0;
  uint64_t seed = 0;
  std::vector<std::string> warnings;
};

/// Bootstrap evaluation over a fixed patient-level test split. Mode
/// train_resample retrains per iteration on training patients drawn with
/// replacement; test_resample keeps one model (the given checkpoint, or one
/// trained here) and resamples test windows. Iteration i derives its
/// randomness from seed + i.
EvalReport bootstrap_eval(std::span<const PatientRecord> cohort, const WindowSpec& wspec,
                          const ModelConfig& mconfig, int n_boot, BootstrapMode mode,
                          uint64_t seed, const ModelParams* pretrained = nullptr,
                          int threads = 1, double split_ratio = 0.8,
                          double threshold = 0.5);

struct ImportanceReport {
  std::vector<double> scores;       // by variable id, sums to 1
  std::vector<int> ranking;         // variable ids, best first
  std::map<std::string, double> category_scores;
  std::vector<std::string> variable_names;
};

/// Mean per-window fusion-attention mass per variable, window-normalized
/// before averaging so long windows do not dominate.
ImportanceReport feature_importance(const ModelParams& params,
                                    std::span<const WindowSample> test_samples,
                                    int threads = 1);

struct RiskTrajectory {
  std::string patient_id;
  std::vector<std::pair<double, double>> points;  // (cutoff_days, risk)
  std::vector<std::pair<double, std::string>> annotations;  // (t_days, kind)
};

/// Daily risk curve from start + min_history to monitoring end; the label
/// horizon is waived, clinical events are annotated.
RiskTrajectory risk_trajectory(const ModelParams& params, const PatientRecord& rec,
                               const NormStats& stats, const WindowSpec& spec);

// Plot-ready artifacts.
void write_eval_report(const std::string& dir, const EvalReport& report);
void write_importance_csv(const std::string& path, const ImportanceReport& report);
void write_trajectory(const std::string& dir, const RiskTrajectory& traj);

}  // namespace rpmf
