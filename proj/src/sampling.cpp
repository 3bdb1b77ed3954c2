#include "rpmf/sampling.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "rpmf/json_convert.hpp"
#include "rpmf/rng.hpp"

namespace rpmf {

using nlohmann::json;

namespace {

constexpr double kStdFloor = 1e-6;

}  // namespace

std::vector<double> generate_cutoffs(const PatientRecord& rec, const WindowSpec& spec) {
  const double span = rec.monitoring_end_days - rec.monitoring_start_days;
  const double usable = span - spec.min_history_days - spec.horizon_days;
  std::vector<double> cutoffs;
  if (usable < 0) return cutoffs;
  const auto count = static_cast<long>(std::floor(usable / spec.stride_days + 1e-9)) + 1;
  cutoffs.reserve(static_cast<size_t>(count));
  for (long k = 0; k < count; ++k) {
    cutoffs.push_back(rec.monitoring_start_days + spec.min_history_days +
                      static_cast<double>(k) * spec.stride_days);
  }
  return cutoffs;
}

int label_window(std::span<const AdverseEvent> events, double cutoff, double horizon) {
  for (const auto& e : events) {
    if (e.t_days > cutoff && e.t_days <= cutoff + horizon) return 1;
    if (e.t_days > cutoff + horizon) break;  // sorted
  }
  return 0;
}

NormStats compute_norm_stats(std::span<const PatientRecord> training,
                             const VariableCatalog& catalog,
                             std::vector<std::string>* warnings) {
  if (training.empty()) throw ArgumentError("compute_norm_stats: empty training set");
  NormStats stats;
  stats.per_variable.assign(static_cast<size_t>(catalog.size()), {0.0, 1.0});

  std::vector<double> sum(static_cast<size_t>(catalog.size()), 0.0);
  std::vector<double> sumsq(static_cast<size_t>(catalog.size()), 0.0);
  std::vector<long> count(static_cast<size_t>(catalog.size()), 0);
  for (const auto& rec : training) {
    for (const auto& o : rec.observations) {
      auto v = static_cast<size_t>(o.variable);
      sum[v] += o.value;
      sumsq[v] += o.value * o.value;
      ++count[v];
    }
  }
  for (int id = 0; id < catalog.size(); ++id) {
    const auto& def = catalog.by_id(id);
    auto i = static_cast<size_t>(id);
    if (def.kind == ValueKind::binary) continue;  // passthrough
    if (count[i] == 0) {
      if (warnings) {
        warnings->push_back("variable " + def.name +
                            " never observed in training; using (0, 1)");
      }
      continue;
    }
    double mean = sum[i] / static_cast<double>(count[i]);
    double var = std::max(0.0, sumsq[i] / static_cast<double>(count[i]) - mean * mean);
    stats.per_variable[i] = {mean, std::max(kStdFloor, std::sqrt(var))};
  }

  // statics: age and bmi z-normalized, gender is binary passthrough
  double asum = 0, asq = 0, bsum = 0, bsq = 0;
  for (const auto& rec : training) {
    asum += rec.profile.age;
    asq += rec.profile.age * rec.profile.age;
    bsum += rec.profile.bmi;
    bsq += rec.profile.bmi * rec.profile.bmi;
  }
  const auto n = static_cast<double>(training.size());
  double amean = asum / n, bmean = bsum / n;
  stats.per_static[0] = {amean, std::max(kStdFloor, std::sqrt(std::max(0.0, asq / n - amean * amean)))};
  stats.per_static[1] = {0.0, 1.0};
  stats.per_static[2] = {bmean, std::max(kStdFloor, std::sqrt(std::max(0.0, bsq / n - bmean * bmean)))};
  return stats;
}

WindowSample tokenize_window(const PatientRecord& rec, double cutoff,
                             const NormStats& stats, const WindowSpec& spec) {
  WindowSample s;
  s.patient_id = rec.patient_id;
  s.cutoff_days = cutoff;
  // observations are sorted by (t, variable); the eligible prefix keeps that
  // order, so truncation to the most recent max_tokens is a suffix take.
  size_t end = 0;
  while (end < rec.observations.size() && rec.observations[end].t_days <= cutoff) ++end;
  size_t begin = 0;
  if (end > static_cast<size_t>(spec.max_tokens)) {
    begin = end - static_cast<size_t>(spec.max_tokens);
  }
  s.tokens.reserve(end - begin);
  for (size_t i = begin; i < end; ++i) {
    const Observation& o = rec.observations[i];
    const auto& [mean, sd] = stats.per_variable[static_cast<size_t>(o.variable)];
    s.tokens.push_back(Token{(o.t_days - cutoff) / stats.time_scale_days, o.variable,
                             (o.value - mean) / sd});
  }
  const double raw_static[3] = {rec.profile.age, rec.profile.gender, rec.profile.bmi};
  for (int i = 0; i < 3; ++i) {
    const auto& [mean, sd] = stats.per_static[static_cast<size_t>(i)];
    s.static_vec[static_cast<size_t>(i)] = (raw_static[i] - mean) / sd;
  }
  s.label = label_window(rec.adverse_events, cutoff, spec.horizon_days);
  return s;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_patients(
    std::span<const PatientRecord> cohort, double ratio, uint64_t seed,
    std::vector<std::string>* warnings) {
  if (cohort.empty()) throw ArgumentError("split_patients: empty cohort");
  if (ratio < 0.0 || ratio > 1.0) {
    throw ArgumentError("split_patients: ratio must be in [0, 1]");
  }
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };

  std::array<std::vector<std::string>, 2> strata;  // [0]=no event, [1]=has event
  for (const auto& rec : cohort) {
    bool has_event = false;
    for (const auto& e : rec.adverse_events) {
      if (e.t_days >= rec.monitoring_start_days && e.t_days <= rec.monitoring_end_days) {
        has_event = true;
        break;
      }
    }
    strata[has_event ? 1 : 0].push_back(rec.patient_id);
  }

  std::vector<std::string> train, test;
  for (size_t si = 0; si < strata.size(); ++si) {
    auto& ids = strata[si];
    if (ids.empty()) continue;
    Rng rng(derive_seed(seed, 0x5917, si));
    if (ids.size() < 2) {
      warn("stratum " + std::to_string(si) +
           " has fewer than 2 patients; assigning at random");
      for (auto& id : ids) {
        (rng.uniform() < ratio ? train : test).push_back(std::move(id));
      }
      continue;
    }
    shuffle(ids, rng);
    auto n_train = static_cast<size_t>(std::lround(ratio * static_cast<double>(ids.size())));
    for (size_t i = 0; i < ids.size(); ++i) {
      (i < n_train ? train : test).push_back(std::move(ids[i]));
    }
  }
  if (test.empty()) warn("test split is empty at ratio " + std::to_string(ratio));
  return {std::move(train), std::move(test)};
}

Dataset build_dataset(std::span<const PatientRecord> cohort, const WindowSpec& spec,
                      double ratio, uint64_t seed) {
  Dataset ds;
  auto [train_ids, test_ids] = split_patients(cohort, ratio, seed, &ds.warnings);
  ds.train_ids = train_ids;
  ds.test_ids = test_ids;

  std::vector<const PatientRecord*> train_recs;
  auto in = [](const std::vector<std::string>& ids, const std::string& id) {
    return std::find(ids.begin(), ids.end(), id) != ids.end();
  };
  std::vector<PatientRecord> train_copy;
  for (const auto& rec : cohort) {
    if (in(train_ids, rec.patient_id)) train_copy.push_back(rec);
  }
  ds.stats = compute_norm_stats(train_copy, VariableCatalog::defaults(), &ds.warnings);

  long train_pos = 0, test_pos = 0;
  for (const auto& rec : cohort) {
    const bool is_train = in(train_ids, rec.patient_id);
    for (double cutoff : generate_cutoffs(rec, spec)) {
      WindowSample s = tokenize_window(rec, cutoff, ds.stats, spec);
      if (is_train) {
        train_pos += s.label;
        ds.train.push_back(std::move(s));
      } else {
        test_pos += s.label;
        ds.test.push_back(std::move(s));
      }
    }
  }
  if (!ds.train.empty()) {
    ds.train_positive_rate = static_cast<double>(train_pos) / static_cast<double>(ds.train.size());
  }
  if (!ds.test.empty()) {
    ds.test_positive_rate = static_cast<double>(test_pos) / static_cast<double>(ds.test.size());
  }
  if (train_pos + test_pos == 0) {
    ds.warnings.push_back("no positive labels anywhere: cohort has no in-horizon events");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset cache

namespace {

json sample_to_json(const WindowSample& s, bool is_train) {
  json toks = json::array();
  for (const auto& t : s.tokens) toks.push_back(json::array({t.t_rel, t.var, t.v_norm}));
  return json{{"patient_id", s.patient_id},
              {"cutoff_days", s.cutoff_days},
              {"label", s.label},
              {"split", is_train ? "train" : "test"},
              {"static_vec", json::array({s.static_vec[0], s.static_vec[1], s.static_vec[2]})},
              {"tokens", std::move(toks)}};
}

WindowSample sample_from_json(const json& j) {
  WindowSample s;
  s.patient_id = j.at("patient_id").get<std::string>();
  s.cutoff_days = j.at("cutoff_days").get<double>();
  s.label = j.at("label").get<int>();
  const auto& sv = j.at("static_vec");
  for (size_t i = 0; i < 3; ++i) s.static_vec[i] = sv.at(i).get<double>();
  for (const auto& row : j.at("tokens")) {
    s.tokens.push_back(Token{row.at(0).get<double>(), row.at(1).get<int>(),
                             row.at(2).get<double>()});
  }
  return s;
}

}  // namespace

void write_dataset_cache(const std::string& path, const Dataset& ds, const WindowSpec& spec) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path);
  json header{{"format", "rpmf-dataset-cache"},
              {"version", 1},
              {"norm_stats", to_json(ds.stats)},
              {"spec", to_json(spec)},
              {"train_ids", ds.train_ids},
              {"test_ids", ds.test_ids}};
  f << header.dump() << "\n";
  for (const auto& s : ds.train) f << sample_to_json(s, true).dump() << "\n";
  for (const auto& s : ds.test) f << sample_to_json(s, false).dump() << "\n";
  if (!f) throw DataError("write failed: " + path);
}

Dataset read_dataset_cache(const std::string& path, WindowSpec* spec_out) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open dataset cache: " + path);
  std::string line;
  if (!std::getline(f, line)) throw DataError(path + ": empty cache file");
  Dataset ds;
  try {
    json header = json::parse(line);
    if (header.at("format").get<std::string>() != "rpmf-dataset-cache") {
      throw DataError(path + ": not a dataset cache");
    }
    ds.stats = norm_stats_from_json(header.at("norm_stats"));
    ds.train_ids = header.at("train_ids").get<std::vector<std::string>>();
    ds.test_ids = header.at("test_ids").get<std::vector<std::string>>();
    if (spec_out) *spec_out = window_spec_from_json(header.at("spec"));
    int line_no = 1;
    long train_pos = 0, test_pos = 0;
    while (std::getline(f, line)) {
      ++line_no;
      if (line.empty()) continue;
      json j = json::parse(line);
      bool is_train = j.at("split").get<std::string>() == "train";
      WindowSample s = sample_from_json(j);
      if (is_train) {
        train_pos += s.label;
        ds.train.push_back(std::move(s));
      } else {
        test_pos += s.label;
        ds.test.push_back(std::move(s));
      }
    }
    if (!ds.train.empty()) {
      ds.train_positive_rate =
          static_cast<double>(train_pos) / static_cast<double>(ds.train.size());
    }
    if (!ds.test.empty()) {
      ds.test_positive_rate =
          static_cast<double>(test_pos) / static_cast<double>(ds.test.size());
    }
  } catch (const json::exception& e) {
    throw DataError(path + ": bad dataset cache: " + e.what());
  }
  return ds;
}

}  // namespace rpmf
