#include "rpmf/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include "rpmf/rng.hpp"

namespace rpmf {

using nlohmann::json;

double accuracy(std::span<const double> preds, std::span<const int> labels,
                double threshold) {
  if (preds.empty() || preds.size() != labels.size()) {
    throw ArgumentError("accuracy: need equal non-empty prediction/label vectors");
  }
  long hits = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    int call = preds[i] >= threshold ? 1 : 0;
    if (call == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double auroc(std::span<const double> preds, std::span<const int> labels) {
  if (preds.empty() || preds.size() != labels.size()) {
    throw ArgumentError("auroc: need equal non-empty prediction/label vectors");
  }
  long n_pos = 0;
  for (int y : labels) n_pos += y;
  long n_neg = static_cast<long>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw ArgumentError("AUROC undefined: both classes must be present");
  }
  std::vector<size_t> idx(preds.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return preds[a] < preds[b]; });

  // average ranks over tie groups; rank sums stay exact (multiples of 1/2)
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j + 1 < idx.size() && preds[idx[j + 1]] == preds[idx[i]]) ++j;
    double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k) {
      if (labels[idx[k]] == 1) pos_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  double u = pos_rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> preds, std::span<const int> labels) {
  if (preds.empty() || preds.size() != labels.size()) {
    throw ArgumentError("roc_curve: need equal non-empty prediction/label vectors");
  }
  long n_pos = 0;
  for (int y : labels) n_pos += y;
  long n_neg = static_cast<long>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw ArgumentError("AUROC undefined: both classes must be present");
  }
  std::vector<size_t> idx(preds.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return preds[a] > preds[b]; });

  std::vector<RocPoint> out;
  out.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  long tp = 0, fp = 0;
  size_t i = 0;
  while (i < idx.size()) {
    double score = preds[idx[i]];
    while (i < idx.size() && preds[idx[i]] == score) {
      if (labels[idx[i]] == 1) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    out.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                   static_cast<double>(tp) / static_cast<double>(n_pos), score});
  }
  return out;
}

double trapezoid_area(std::span<const RocPoint> points) {
  double area = 0.0;
  for (size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return area;
}

std::string_view to_string(BootstrapMode m) {
  return m == BootstrapMode::train_resample ? "train-resample" : "test-resample";
}

BootstrapMode bootstrap_mode_from_string(std::string_view s) {
  if (s == "train-resample") return BootstrapMode::train_resample;
  if (s == "test-resample") return BootstrapMode::test_resample;
  throw ArgumentError("unknown bootstrap mode '" + std::string(s) +
                      "' (expected train-resample or test-resample)");
}

namespace {

double percentile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  if (values.empty()) return 0.0;
  double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  auto lo = static_cast<size_t>(std::floor(pos));
  auto hi = static_cast<size_t>(std::ceil(pos));
  double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<double> predict_batch(const ModelParams& params,
                                  std::span<const WindowSample> samples, int threads) {
  std::vector<double> preds(samples.size(), 0.0);
  auto run = [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) preds[i] = predict(samples[i], params).risk;
  };
  const int n_threads = std::max(1, threads);
  if (n_threads == 1 || samples.size() < 2) {
    run(0, samples.size());
  } else {
    std::vector<std::thread> pool;
    size_t chunk = (samples.size() + static_cast<size_t>(n_threads) - 1) /
                   static_cast<size_t>(n_threads);
    for (int t = 0; t < n_threads; ++t) {
      size_t lo = static_cast<size_t>(t) * chunk;
      size_t hi = std::min(samples.size(), lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(run, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  return preds;
}

bool single_class(std::span<const int> labels) {
  long pos = 0;
  for (int y : labels) pos += y;
  return pos == 0 || pos == static_cast<long>(labels.size());
}

}  // namespace

EvalReport bootstrap_eval(std::span<const PatientRecord> cohort, const WindowSpec& wspec,
                          const ModelConfig& mconfig, int n_boot, BootstrapMode mode,
                          uint64_t seed, const ModelParams* pretrained, int threads,
                          double split_ratio, double threshold) {
  if (n_boot <= 0) throw ArgumentError("bootstrap_eval: n_boot must be positive");
  EvalReport report;
  report.mode = mode;
  report.n_boot = n_boot;
  report.seed = seed;

  Dataset ds = build_dataset(cohort, wspec, split_ratio, seed);
  report.warnings = ds.warnings;
  if (ds.test.empty()) throw DataError("bootstrap_eval: test split has no windows");
  std::vector<int> test_labels;
  test_labels.reserve(ds.test.size());
  for (const auto& s : ds.test) test_labels.push_back(s.label);
  report.n_windows = static_cast<long>(ds.test.size());
  long pos = 0;
  for (int y : test_labels) pos += y;
  report.positive_rate = static_cast<double>(pos) / static_cast<double>(test_labels.size());

  std::vector<std::string> names;
  for (const auto& e : VariableCatalog::defaults().entries()) names.push_back(e.name);

  // reference model: the provided checkpoint, or one trained on the full
  // training split. Its predictions give the exported ROC curve.
  ModelParams reference = [&] {
    if (pretrained) return *pretrained;
    auto r = train<float>(ds.train, mconfig, ds.stats, names, threads);
    return std::move(r.params);
  }();
  std::vector<double> ref_preds = predict_batch(reference, ds.test, threads);
  report.roc = roc_curve(ref_preds, test_labels);

  if (mode == BootstrapMode::train_resample) {
    // group training windows by patient for patient-level resampling
    std::map<std::string, std::vector<size_t>> by_patient;
    for (size_t i = 0; i < ds.train.size(); ++i) {
      by_patient[ds.train[i].patient_id].push_back(i);
    }
    std::vector<std::string> ids;
    for (const auto& [id, _] : by_patient) ids.push_back(id);

    for (int it = 0; it < n_boot; ++it) {
      Rng rng(derive_seed(seed + static_cast<uint64_t>(it), 0xb00));
      std::vector<WindowSample> resampled;
      int attempts = 0;
      for (;;) {
        resampled.clear();
        for (size_t k = 0; k < ids.size(); ++k) {
          const auto& id = ids[rng.below(ids.size())];
          for (size_t wi : by_patient[id]) resampled.push_back(ds.train[wi]);
        }
        std::vector<int> ls;
        ls.reserve(resampled.size());
        for (const auto& s : resampled) ls.push_back(s.label);
        if (!resampled.empty() && !single_class(ls)) break;
        if (++attempts >= 100) {
          throw DataError("bootstrap_eval: could not draw a two-class training resample");
        }
      }
      if (attempts > 0) {
        report.warnings.push_back("iteration " + std::to_string(it) + ": redrew resample " +
                                  std::to_string(attempts) + " time(s)");
      }
      ModelConfig itcfg = mconfig;
      itcfg.seed = seed + static_cast<uint64_t>(it);
      auto r = train<float>(resampled, itcfg, ds.stats, names, threads);
      auto preds = predict_batch(r.params, ds.test, threads);
      report.boot_accuracy.push_back(accuracy(preds, test_labels, threshold));
      report.boot_auroc.push_back(auroc(preds, test_labels));
    }
  } else {
    for (int it = 0; it < n_boot; ++it) {
      Rng rng(derive_seed(seed + static_cast<uint64_t>(it), 0xb17));
      std::vector<double> preds;
      std::vector<int> labels;
      int attempts = 0;
      for (;;) {
        preds.clear();
        labels.clear();
        for (size_t k = 0; k < ds.test.size(); ++k) {
          size_t j = static_cast<size_t>(rng.below(ds.test.size()));
          preds.push_back(ref_preds[j]);
          labels.push_back(test_labels[j]);
        }
        if (!single_class(labels)) break;
        if (++attempts >= 100) {
          throw DataError("bootstrap_eval: could not draw a two-class test resample");
        }
      }
      if (attempts > 0) {
        report.warnings.push_back("iteration " + std::to_string(it) + ": redrew resample " +
                                  std::to_string(attempts) + " time(s)");
      }
      report.boot_accuracy.push_back(accuracy(preds, labels, threshold));
      report.boot_auroc.push_back(auroc(preds, labels));
    }
  }

  report.accuracy_point = mean_of(report.boot_accuracy);
  report.accuracy_lo = percentile(report.boot_accuracy, 2.5);
  report.accuracy_hi = percentile(report.boot_accuracy, 97.5);
  report.auroc_point = mean_of(report.boot_auroc);
  report.auroc_lo = percentile(report.boot_auroc, 2.5);
  report.auroc_hi = percentile(report.boot_auroc, 97.5);
  return report;
}

ImportanceReport feature_importance(const ModelParams& params,
                                    std::span<const WindowSample> test_samples,
                                    int threads) {
  if (test_samples.empty()) throw ArgumentError("feature_importance: no test samples");
  const auto n_vars = params.variable_names.size();

  std::vector<std::vector<double>> per_window(test_samples.size());
  auto run = [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      auto pred = predict(test_samples[i], params);
      std::vector<double> mass(n_vars, 0.0);
      for (size_t k = 0; k < test_samples[i].tokens.size(); ++k) {
        mass[static_cast<size_t>(test_samples[i].tokens[k].var)] += pred.fusion_weights[k];
      }
      double total = 0.0;
      for (double m : mass) total += m;
      if (total > 0) {
        for (double& m : mass) m /= total;
      }
      per_window[i] = std::move(mass);
    }
  };
  const int n_threads = std::max(1, threads);
  if (n_threads == 1 || test_samples.size() < 2) {
    run(0, test_samples.size());
  } else {
    std::vector<std::thread> pool;
    size_t chunk = (test_samples.size() + static_cast<size_t>(n_threads) - 1) /
                   static_cast<size_t>(n_threads);
    for (int t = 0; t < n_threads; ++t) {
      size_t lo = static_cast<size_t>(t) * chunk;
      size_t hi = std::min(test_samples.size(), lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(run, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  ImportanceReport report;
  report.variable_names = params.variable_names;
  report.scores.assign(n_vars, 0.0);
  for (const auto& mass : per_window) {
    for (size_t v = 0; v < n_vars; ++v) report.scores[v] += mass[v];
  }
  double total = 0.0;
  for (double s : report.scores) total += s;
  if (total > 0) {
    for (double& s : report.scores) s /= total;
  }
  report.ranking.resize(n_vars);
  std::iota(report.ranking.begin(), report.ranking.end(), 0);
  std::stable_sort(report.ranking.begin(), report.ranking.end(),
                   [&](int a, int b) { return report.scores[static_cast<size_t>(a)] >
                                              report.scores[static_cast<size_t>(b)]; });
  const auto& catalog = VariableCatalog::defaults();
  for (size_t v = 0; v < n_vars; ++v) {
    std::string cat = v < static_cast<size_t>(catalog.size())
                          ? std::string(to_string(catalog.by_id(static_cast<int>(v)).category))
                          : "unknown";
    report.category_scores[cat] += report.scores[v];
  }
  return report;
}

RiskTrajectory risk_trajectory(const ModelParams& params, const PatientRecord& rec,
                               const NormStats& stats, const WindowSpec& spec) {
  const double span = rec.monitoring_end_days - rec.monitoring_start_days;
  if (span < spec.min_history_days) {
    throw DataError("risk_trajectory: patient " + rec.patient_id + " span " +
                    std::to_string(span) + " d is shorter than min history " +
                    std::to_string(spec.min_history_days) + " d");
  }
  RiskTrajectory traj;
  traj.patient_id = rec.patient_id;
  // trajectory stride is one day regardless of the training stride; the
  // label horizon is waived because no label is needed here
  for (double cutoff = rec.monitoring_start_days + spec.min_history_days;
       cutoff <= rec.monitoring_end_days + 1e-9; cutoff += 1.0) {
    WindowSample s = tokenize_window(rec, cutoff, stats, spec);
    if (s.tokens.empty()) continue;
    traj.points.emplace_back(cutoff, predict(s, params).risk);
  }
  const auto& catalog = VariableCatalog::defaults();
  std::vector<int> treatment_vars;
  for (auto name : treatment_variable_names()) treatment_vars.push_back(catalog.id(name));
  for (const auto& o : rec.observations) {
    for (int tv : treatment_vars) {
      if (o.variable == tv) {
        traj.annotations.emplace_back(o.t_days, catalog.by_id(o.variable).name);
      }
    }
  }
  for (const auto& e : rec.adverse_events) {
    traj.annotations.emplace_back(e.t_days, std::string(to_string(e.kind)));
  }
  std::sort(traj.annotations.begin(), traj.annotations.end());
  return traj;
}

// ---------------------------------------------------------------------------
// Artifact writers

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void write_eval_report(const std::string& dir, const EvalReport& report) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json doc = {
      {"accuracy", {{"point", report.accuracy_point},
                    {"ci95", json::array({report.accuracy_lo, report.accuracy_hi})}}},
      {"auroc", {{"point", report.auroc_point},
                 {"ci95", json::array({report.auroc_lo, report.auroc_hi})}}},
      {"n_windows", report.n_windows},
      {"positive_rate", report.positive_rate},
      {"n_boot", report.n_boot},
      {"mode", std::string(to_string(report.mode))},
      {"seed", report.seed},
      {"bootstrap", {{"accuracy", report.boot_accuracy}, {"auroc", report.boot_auroc}}},
      {"warnings", report.warnings},
  };
  std::ofstream f(fs::path(dir) / "report.json");
  if (!f) throw DataError("cannot write eval report in " + dir);
  f << doc.dump(2) << "\n";

  std::ofstream roc(fs::path(dir) / "roc.csv");
  roc << "fpr,tpr,threshold\n";
  for (const auto& p : report.roc) {
    roc << fmt(p.fpr) << "," << fmt(p.tpr) << ","
        << (std::isinf(p.threshold) ? "inf" : fmt(p.threshold)) << "\n";
  }
}

void write_importance_csv(const std::string& path, const ImportanceReport& report) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path);
  const auto& catalog = VariableCatalog::defaults();
  f << "variable,category,score,rank\n";
  for (size_t rank = 0; rank < report.ranking.size(); ++rank) {
    int v = report.ranking[rank];
    std::string cat = v < catalog.size()
                          ? std::string(to_string(catalog.by_id(v).category))
                          : "unknown";
    f << report.variable_names[static_cast<size_t>(v)] << "," << cat << ","
      << fmt(report.scores[static_cast<size_t>(v)]) << "," << rank + 1 << "\n";
  }
}

void write_trajectory(const std::string& dir, const RiskTrajectory& traj) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream f(fs::path(dir) / ("trajectory_" + traj.patient_id + ".csv"));
  if (!f) throw DataError("cannot write trajectory in " + dir);
  f << "cutoff_days,risk\n";
  for (const auto& [c, r] : traj.points) f << fmt(c) << "," << fmt(r) << "\n";

  std::ofstream ev(fs::path(dir) / ("events_" + traj.patient_id + ".csv"));
  ev << "t_days,kind\n";
  for (const auto& [t, kind] : traj.annotations) ev << fmt(t) << "," << kind << "\n";
}

}  // namespace rpmf
