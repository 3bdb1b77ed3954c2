#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "rpmf/rng.hpp"
#include "rpmf/sampling.hpp"

using namespace rpmf;

namespace {

const VariableCatalog& cat() { return VariableCatalog::defaults(); }

// Hand-built record: daily survey token plus optional adverse events.
PatientRecord make_record(const std::string& id, double span,
                          std::vector<double> event_days = {},
                          double obs_value = 5.0) {
  PatientRecord rec;
  rec.patient_id = id;
  rec.profile = {60.0, 0.0, 25.0};
  rec.monitoring_start_days = 0.0;
  rec.monitoring_end_days = span;
  const int var = cat().id("qor15_item_1");
  for (int d = 0; d + 1 <= span; ++d) {
    rec.observations.push_back({d + 0.25, var, obs_value});
  }
  std::sort(event_days.begin(), event_days.end());
  for (double t : event_days) rec.adverse_events.push_back({t, EventKind::ae_visit});
  return rec;
}

// Independent brute-force relabeling used as the oracle for window labels.
int oracle_label(const PatientRecord& rec, double cutoff, double horizon) {
  int label = 0;
  for (const auto& e : rec.adverse_events) {
    if (e.t_days > cutoff && e.t_days <= cutoff + horizon) label = 1;
  }
  return label;
}

}  // namespace

TEST_CASE("generate_cutoffs arithmetic") {
  WindowSpec spec;
  auto r70 = make_record("a", 70.0);
  auto c = generate_cutoffs(r70, spec);
  REQUIRE(c.size() == 29);
  CHECK(c.front() == 14.0);
  CHECK(c.back() == 42.0);

  auto r41 = make_record("b", 41.0);
  CHECK(generate_cutoffs(r41, spec).empty());

  auto r42 = make_record("c", 42.0);
  auto c42 = generate_cutoffs(r42, spec);
  REQUIRE(c42.size() == 1);
  CHECK(c42[0] == 14.0);
}

TEST_CASE("generate_cutoffs count formula property") {
  Rng rng(41);
  for (int i = 0; i < 200; ++i) {
    WindowSpec spec;
    spec.stride_days = rng.uniform(0.5, 3.0);
    double span = rng.uniform(30.0, 150.0);
    auto rec = make_record("p", span);
    auto cutoffs = generate_cutoffs(rec, spec);
    double usable = span - spec.min_history_days - spec.horizon_days;
    size_t expected =
        usable < 0 ? 0
                   : static_cast<size_t>(std::floor(usable / spec.stride_days + 1e-9)) + 1;
    CHECK(cutoffs.size() == expected);
    for (double c : cutoffs) CHECK(c + spec.horizon_days <= span + 1e-9);
  }
}

TEST_CASE("label_window boundary rules") {
  std::vector<AdverseEvent> events = {{40.0, EventKind::ae_visit}};
  CHECK(label_window(events, 30.0, 28.0) == 1);
  std::vector<AdverseEvent> far = {{59.0, EventKind::ae_visit}};
  CHECK(label_window(far, 30.0, 28.0) == 0);
  std::vector<AdverseEvent> at_cutoff = {{30.0, EventKind::ae_visit}};
  CHECK(label_window(at_cutoff, 30.0, 28.0) == 0);  // strict lower bound
  std::vector<AdverseEvent> at_edge = {{58.0, EventKind::ae_visit}};
  CHECK(label_window(at_edge, 30.0, 28.0) == 1);  // inclusive upper bound
}

TEST_CASE("compute_norm_stats rules") {
  auto a = make_record("a", 50.0, {}, 0.0);
  auto b = make_record("b", 50.0, {}, 10.0);
  std::vector<PatientRecord> recs{a, b};
  std::vector<std::string> warnings;
  auto stats = compute_norm_stats(recs, cat(), &warnings);

  auto [mean, sd] = stats.per_variable[static_cast<size_t>(cat().id("qor15_item_1"))];
  CHECK(mean == doctest::Approx(5.0));
  CHECK(sd == doctest::Approx(5.0));  // population std of {0,10}

  // binary passthrough
  auto [wm, ws] = stats.per_variable[static_cast<size_t>(cat().id("wellness_checkin"))];
  CHECK(wm == 0.0);
  CHECK(ws == 1.0);

  // unobserved variables warned, (0,1)
  CHECK(!warnings.empty());
  auto [hm, hs] = stats.per_variable[static_cast<size_t>(cat().id("daily_max_hr"))];
  CHECK(hm == 0.0);
  CHECK(hs == 1.0);

  // degenerate variance floors at 1e-6 -> normalized values are 0
  auto c = make_record("c", 50.0, {}, 5.0);
  std::vector<PatientRecord> constant{c};
  auto stats2 = compute_norm_stats(constant, cat());
  auto [cm, cs] = stats2.per_variable[static_cast<size_t>(cat().id("qor15_item_1"))];
  CHECK(cm == doctest::Approx(5.0));
  CHECK(cs == 1e-6);
  WindowSpec spec;
  auto sample = tokenize_window(c, 20.0, stats2, spec);
  for (const auto& t : sample.tokens) CHECK(t.v_norm == 0.0);
}

TEST_CASE("tokenize_window centering and truncation") {
  WindowSpec spec;
  auto rec = make_record("a", 60.0, {50.0});
  std::vector<PatientRecord> recs{rec};
  auto stats = compute_norm_stats(recs, cat());

  auto s = tokenize_window(rec, 20.25, stats, spec);
  // the observation exactly at the cutoff has t_rel == 0; value == mean -> 0
  bool found = false;
  for (const auto& t : s.tokens) {
    if (t.t_rel == 0.0) {
      CHECK(t.v_norm == 0.0);
      found = true;
    }
  }
  CHECK(found);
  CHECK(s.label == 0);
  auto s2 = tokenize_window(rec, 30.0, stats, spec);
  CHECK(s2.label == 1);  // event at 50 inside (30, 58]
}

TEST_CASE("truncation monotonicity") {
  WindowSpec spec;
  spec.max_tokens = 25;
  auto rec = make_record("a", 80.0);
  std::vector<PatientRecord> recs{rec};
  auto stats = compute_norm_stats(recs, cat());
  auto s = tokenize_window(rec, 60.0, stats, spec);
  REQUIRE(s.tokens.size() == 25);
  // with 59 eligible observations, exactly the newest 25 survive
  double oldest_kept = s.tokens.front().t_rel;
  for (const auto& t : s.tokens) CHECK(t.t_rel >= oldest_kept - 1e-12);
  // every kept token is newer than every dropped one: the eligible set had
  // tokens at 0.25 + d for d = 0..59; the newest 25 start at day 35.25
  CHECK(s.tokens.front().t_rel == doctest::Approx((35.25 - 60.0) / 28.0));
}

TEST_CASE("split_patients stratified counts and determinism") {
  std::vector<PatientRecord> cohort;
  for (int i = 0; i < 50; ++i) {
    bool eventful = i < 17;
    cohort.push_back(make_record("p" + std::to_string(i), 70.0,
                                 eventful ? std::vector<double>{30.0} : std::vector<double>{}));
  }
  auto [train, test] = split_patients(cohort, 0.8, 123);
  auto [train2, test2] = split_patients(cohort, 0.8, 123);
  CHECK(train == train2);
  CHECK(test == test2);

  int train_event = 0, test_event = 0;
  for (const auto& id : train) {
    int idx = std::stoi(id.substr(1));
    if (idx < 17) ++train_event;
  }
  for (const auto& id : test) {
    int idx = std::stoi(id.substr(1));
    if (idx < 17) ++test_event;
  }
  CHECK(train_event + test_event == 17);
  CHECK(train_event >= 13);
  CHECK(train_event <= 14);
  CHECK(train.size() + test.size() == 50);
  CHECK(train.size() >= 39);
  CHECK(train.size() <= 41);

  // patient disjointness across seeds
  for (uint64_t seed = 0; seed < 50; ++seed) {
    auto [tr, te] = split_patients(cohort, 0.8, seed);
    std::set<std::string> tr_set(tr.begin(), tr.end());
    for (const auto& id : te) CHECK(tr_set.count(id) == 0);
    CHECK(tr.size() + te.size() == 50);
  }

  std::vector<std::string> warnings;
  auto [all_train, empty_test] = split_patients(cohort, 1.0, 7, &warnings);
  CHECK(all_train.size() == 50);
  CHECK(empty_test.empty());
  CHECK(!warnings.empty());

  CHECK_THROWS_AS(split_patients({}, 0.8, 1), ArgumentError);
}

TEST_CASE("build_dataset leakage audit against the oracle") {
  Rng rng(77);
  std::vector<PatientRecord> cohort;
  for (int i = 0; i < 12; ++i) {
    double span = rng.uniform(45.0, 120.0);
    std::vector<double> events;
    int n_events = static_cast<int>(rng.below(4));
    for (int e = 0; e < n_events; ++e) events.push_back(rng.uniform(1.0, span));
    cohort.push_back(make_record("p" + std::to_string(i), span, events,
                                 rng.uniform(0.0, 10.0)));
  }
  WindowSpec spec;
  auto ds = build_dataset(cohort, spec, 0.8, 99);

  auto find_rec = [&](const std::string& id) -> const PatientRecord& {
    for (const auto& r : cohort) {
      if (r.patient_id == id) return r;
    }
    FAIL("record not found");
    return cohort[0];
  };
  auto audit = [&](const std::vector<WindowSample>& samples) {
    for (const auto& s : samples) {
      for (const auto& t : s.tokens) CHECK(t.t_rel <= 1e-12);  // inputs predate cutoff
      const auto& rec = find_rec(s.patient_id);
      CHECK(s.label == oracle_label(rec, s.cutoff_days, spec.horizon_days));
    }
  };
  audit(ds.train);
  audit(ds.test);

  // NormStats depend only on the train side: perturbing a test patient
  // leaves them bit-identical
  REQUIRE(!ds.test_ids.empty());
  auto cohort2 = cohort;
  for (auto& rec : cohort2) {
    if (rec.patient_id == ds.test_ids[0]) {
      for (auto& o : rec.observations) o.value += 3.14;
    }
  }
  auto ds2 = build_dataset(cohort2, spec, 0.8, 99);
  for (size_t i = 0; i < ds.stats.per_variable.size(); ++i) {
    CHECK(ds.stats.per_variable[i].first == ds2.stats.per_variable[i].first);
    CHECK(ds.stats.per_variable[i].second == ds2.stats.per_variable[i].second);
  }
}

TEST_CASE("dataset cache round trip") {
  std::vector<PatientRecord> cohort;
  cohort.push_back(make_record("p0", 60.0, {40.0}));
  cohort.push_back(make_record("p1", 55.0));
  cohort.push_back(make_record("p2", 70.0, {20.0, 50.0}));
  cohort.push_back(make_record("p3", 50.0));
  WindowSpec spec;
  auto ds = build_dataset(cohort, spec, 0.5, 3);

  auto path = (std::filesystem::temp_directory_path() / "rpmf_cache_test.jsonl").string();
  write_dataset_cache(path, ds, spec);
  WindowSpec spec2;
  auto back = read_dataset_cache(path, &spec2);
  CHECK(spec2.max_tokens == spec.max_tokens);
  REQUIRE(back.train.size() == ds.train.size());
  REQUIRE(back.test.size() == ds.test.size());
  for (size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(back.train[i].patient_id == ds.train[i].patient_id);
    CHECK(back.train[i].cutoff_days == ds.train[i].cutoff_days);
    CHECK(back.train[i].label == ds.train[i].label);
    REQUIRE(back.train[i].tokens.size() == ds.train[i].tokens.size());
    for (size_t k = 0; k < ds.train[i].tokens.size(); ++k) {
      CHECK(back.train[i].tokens[k].t_rel == ds.train[i].tokens[k].t_rel);
      CHECK(back.train[i].tokens[k].v_norm == ds.train[i].tokens[k].v_norm);
    }
  }
  CHECK(back.train_positive_rate == doctest::Approx(ds.train_positive_rate));
}
