#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rpmf/domain.hpp"
#include "rpmf/errors.hpp"

namespace rpmf {

struct WindowSpec {
  double min_history_days = 14.0;
  double horizon_days = 28.0;
  double stride_days = 1.0;
  int max_tokens = 1000;
};

/// One observation as the model sees it: cutoff-relative scaled time,
/// variable id, z-normalized value.
struct Token {
  double t_rel = 0.0;
  int var = -1;
  double v_norm = 0.0;
};

struct WindowSample {
  std::string patient_id;
  double cutoff_days = 0.0;
  std::vector<Token> tokens;            // at most spec.max_tokens, most recent kept
  std::array<double, 3> static_vec{};   // normalized age, gender, bmi
  int label = 0;
};

/// Normalization constants computed from training-split observations only.
/// Binary variables pass through as (mean 0, std 1).
struct NormStats {
  std::vector<std::pair<double, double>> per_variable;   // (mean, std), by id
  std::array<std::pair<double, double>, 3> per_static{{{0, 1}, {0, 1}, {0, 1}}};
  double time_scale_days = 28.0;
};

/// Cutoffs start + min_history, + stride, ... such that cutoff + horizon
/// fits inside the monitoring span; empty when the span is too short.
std::vector<double> generate_cutoffs(const PatientRecord& rec, const WindowSpec& spec);

/// 1 iff an event falls in (cutoff, cutoff + horizon]. An event at the
/// cutoff instant is input, not label.
int label_window(std::span<const AdverseEvent> events, double cutoff, double horizon);

NormStats compute_norm_stats(std::span<const PatientRecord> training,
                             const VariableCatalog& catalog,
                             std::vector<std::string>* warnings = nullptr);

/// Full history up to the cutoff, truncated to the most recent max_tokens
/// (ties broken by variable id).
WindowSample tokenize_window(const PatientRecord& rec, double cutoff,
                             const NormStats& stats, const WindowSpec& spec);

/// Patient-level split stratified on "has any adverse event"; train size is
/// round(ratio * n) within each stratum. Deterministic given seed.
std::pair<std::vector<std::string>, std::vector<std::string>> split_patients(
    std::span<const PatientRecord> cohort, double ratio, uint64_t seed,
    std::vector<std::string>* warnings = nullptr);

struct Dataset {
  std::vector<WindowSample> train;
  std::vector<WindowSample> test;
  NormStats stats;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  double train_positive_rate = 0.0;
  double test_positive_rate = 0.0;
  std::vector<std::string> warnings;
};

Dataset build_dataset(std::span<const PatientRecord> cohort, const WindowSpec& spec,
                      double ratio, uint64_t seed);

// Optional tokenized-dataset cache (JSONL with a header object).
void write_dataset_cache(const std::string& path, const Dataset& ds, const WindowSpec& spec);
Dataset read_dataset_cache(const std::string& path, WindowSpec* spec_out = nullptr);

}  // namespace rpmf
