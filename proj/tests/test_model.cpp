#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rpmf/model.hpp"
#include "rpmf/model_io.hpp"
#include "support.hpp"

using namespace rpmf;
using namespace rpmf::testsupport;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_blocks = 1;
  cfg.n_heads = 2;
  cfg.dropout = 0.0;
  cfg.seed = 11;
  return cfg;
}

// Analytic-vs-numeric check of every parameter tensor on one sample.
double full_model_grad_check(const ModelConfig& cfg, const WindowSample& sample,
                             uint64_t seed) {
  auto params = ModelParamsT<double>::init(cfg, identity_stats(), catalog_names(), seed);
  randomize_for_gradcheck(params, derive_seed(seed, 0xbc));
  Mat<double> label(1, 1);
  label(0, 0) = sample.label;
  auto input = WindowInput<double>::from_sample(sample);

  auto loss_value = [&]() {
    Tape<double> tape;
    tape.set_recording(false);
    auto mv = ModelVars<double>::register_on(tape, params);
    auto out = forward_window(tape, mv, params, input, false, 0);
    double p = out.risk.value()(0, 0);
    double ph = std::clamp(p, ad::kBceClamp, 1.0 - ad::kBceClamp);
    return -(label(0, 0) * std::log(ph) + (1.0 - label(0, 0)) * std::log(1.0 - ph));
  };

  // analytic gradients
  Tape<double> tape;
  auto mv = ModelVars<double>::register_on(tape, params);
  auto out = forward_window(tape, mv, params, input, false, 0);
  auto loss = ad::bce_loss(out.risk, label);
  ad::backward(loss);

  auto named = params.named_tensors();
  std::vector<Mat<double>> analytic;
  for (const auto& v : mv.vars) analytic.push_back(v.grad());

  std::vector<ad::GradCheckParam<double>> entries;
  for (size_t i = 0; i < named.size(); ++i) {
    entries.push_back({named[i].second, &analytic[i], named[i].first});
  }
  std::string worst;
  double err = ad::grad_check<double>(loss_value, entries, 1e-5, 500, 42, &worst);
  INFO("worst coordinate: ", worst);
  return err;
}

}  // namespace

TEST_CASE("full-model gradients match finite differences") {
  Rng rng(3);
  auto sample = random_sample(rng, 2);
  double err = full_model_grad_check(tiny_config(), sample, 5);
  CHECK(err <= 1e-4);
}

TEST_CASE("embed_tokens determinism and catalog bounds") {
  auto cfg = tiny_config();
  auto params = ModelParamsT<double>::init(cfg, identity_stats(), catalog_names(), 1);

  WindowSample s;
  s.patient_id = "p";
  s.tokens = {{-0.5, 3, 1.2}, {-0.5, 3, 1.2}, {-0.5, 3, 0.0}};
  s.static_vec = {0, 0, 0};

  Tape<double> tape;
  auto mv = ModelVars<double>::register_on(tape, params);
  auto input = WindowInput<double>::from_sample(s);
  auto emb = embed_tokens(tape, mv, params, input);
  // identical tokens embed identically; different value embeds differently
  CHECK((emb.value().row(0) - emb.value().row(1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((emb.value().row(0) - emb.value().row(2)).cwiseAbs().maxCoeff() > 0.0);

  WindowSample empty;
  empty.patient_id = "p";
  CHECK_THROWS_AS(WindowInput<double>::from_sample(empty), DataError);

  WindowSample bad = s;
  bad.tokens[0].var = 99;
  auto bad_input = WindowInput<double>::from_sample(bad);
  Tape<double> tape2;
  auto mv2 = ModelVars<double>::register_on(tape2, params);
  CHECK_THROWS_AS((void)embed_tokens(tape2, mv2, params, bad_input), DataError);
}

TEST_CASE("single token gets fusion weight 1") {
  auto cfg = tiny_config();
  auto params = ModelParamsT<double>::init(cfg, identity_stats(), catalog_names(), 2);
  Rng rng(9);
  auto s = random_sample(rng, 1);
  auto pred = predict(s, params);
  REQUIRE(pred.fusion_weights.size() == 1);
  CHECK(pred.fusion_weights[0] == 1.0);
  CHECK(pred.risk >= 0.0);
  CHECK(pred.risk <= 1.0);
}

TEST_CASE("fusion weights sum to one, risk in range") {
  auto cfg = tiny_config();
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    auto params = ModelParamsT<double>::init(cfg, identity_stats(), catalog_names(),
                                             static_cast<uint64_t>(trial));
    auto s = random_sample(rng, 1 + static_cast<int>(rng.below(40)));
    auto pred = predict(s, params);
    double sum = 0;
    for (double w : pred.fusion_weights) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    CHECK(pred.risk >= 0.0);
    CHECK(pred.risk <= 1.0);
  }
}

TEST_CASE("duplicating every token leaves risk unchanged") {
  auto cfg = tiny_config();
  auto params = ModelParamsT<double>::init(cfg, identity_stats(), catalog_names(), 4);
  Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    auto s = random_sample(rng, 5 + static_cast<int>(rng.below(20)));
    WindowSample doubled = s;
    doubled.tokens.insert(doubled.tokens.end(), s.tokens.begin(), s.tokens.end());
    auto a = predict(s, params);
    auto b = predict(doubled, params);
    CHECK(std::abs(a.risk - b.risk) <= 1e-9);
  }
}

TEST_CASE("prediction is pure and permutation invariant") {
  auto cfg = tiny_config();
  auto params = ModelParamsT<double>::init(cfg, identity_stats(), catalog_names(), 6);
  Rng rng(51);
  auto s = random_sample(rng, 30);
  auto a = predict(s, params);
  auto b = predict(s, params);
  CHECK(a.risk == b.risk);

  WindowSample shuffled = s;
  Rng perm_rng(99);
  shuffle(shuffled.tokens, perm_rng);
  auto c = predict(shuffled, params);
  CHECK(std::abs(a.risk - c.risk) <= 1e-9);
}

TEST_CASE("padding invariance") {
  auto cfg = tiny_config();
  Rng rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    auto params = ModelParamsT<double>::init(cfg, identity_stats(), catalog_names(),
                                             static_cast<uint64_t>(100 + trial));
    auto s = random_sample(rng, 10 + static_cast<int>(rng.below(30)));
    auto plain = predict(s, params);
    auto padded = predict(s, params, /*n_padding=*/17);
    CHECK(std::abs(plain.risk - padded.risk) <= 1e-9);
  }
}

TEST_CASE("zero output head gives risk one half") {
  auto cfg = tiny_config();
  auto params = ModelParamsT<double>::init(cfg, identity_stats(), catalog_names(), 8);
  params.head_w.setZero();
  params.head_b.setZero();
  Rng rng(71);
  auto s = random_sample(rng, 12);
  CHECK(predict(s, params).risk == 0.5);
}

TEST_CASE("initialization does not saturate") {
  ModelConfig cfg;  // full-size defaults
  cfg.dropout = 0.0;
  Rng rng(81);
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    auto params = ModelParamsT<double>::init(cfg, identity_stats(), catalog_names(), seed);
    double mean = 0;
    const int n = 30;
    for (int i = 0; i < n; ++i) {
      auto s = random_sample(rng, 20 + static_cast<int>(rng.below(80)));
      mean += predict(s, params).risk;
    }
    mean /= n;
    CHECK(mean > 0.3);
    CHECK(mean < 0.7);
  }
}

TEST_CASE("parameter count is a pure function of config") {
  auto cfg = tiny_config();
  auto a = ModelParamsT<double>::init(cfg, identity_stats(), catalog_names(), 1);
  auto b = ModelParamsT<double>::init(cfg, identity_stats(), catalog_names(), 999);
  CHECK(a.param_count() == b.param_count());
  CHECK(a.param_count() > 0);

  ModelConfig big = cfg;
  big.n_blocks = 2;
  auto c = ModelParamsT<double>::init(big, identity_stats(), catalog_names(), 1);
  CHECK(c.param_count() > a.param_count());
}

TEST_CASE("training is deterministic and thread-count invariant") {
  auto cfg = tiny_config();
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.dropout = 0.2;
  cfg.seed = 17;

  Rng rng(91);
  std::vector<WindowSample> samples;
  for (int i = 0; i < 10; ++i) {
    auto s = random_sample(rng, 6 + static_cast<int>(rng.below(10)));
    s.label = i % 2;
    samples.push_back(std::move(s));
  }

  auto r1 = train<float>(samples, cfg, identity_stats(), catalog_names(), 1);
  auto r2 = train<float>(samples, cfg, identity_stats(), catalog_names(), 1);
  auto r4 = train<float>(samples, cfg, identity_stats(), catalog_names(), 2);

  auto t1 = r1.params.named_tensors();
  auto t2 = r2.params.named_tensors();
  auto t4 = r4.params.named_tensors();
  for (size_t i = 0; i < t1.size(); ++i) {
    CHECK((*t1[i].second - *t2[i].second).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((*t1[i].second - *t4[i].second).cwiseAbs().maxCoeff() == 0.0f);
  }
  REQUIRE(r1.history.size() == 3);
  CHECK(r1.history[0].mean_loss == r2.history[0].mean_loss);
}

TEST_CASE("training loss decreases on a learnable toy problem") {
  // variable 0 present with positive value => label 1
  auto cfg = tiny_config();
  cfg.epochs = 40;
  cfg.batch_size = 8;
  cfg.lr = 3e-3;
  cfg.seed = 5;

  Rng rng(101);
  std::vector<WindowSample> samples;
  for (int i = 0; i < 32; ++i) {
    WindowSample s;
    s.patient_id = "p";
    s.label = i % 2;
    int n = 5 + static_cast<int>(rng.below(6));
    for (int k = 0; k < n; ++k) {
      s.tokens.push_back(Token{-rng.uniform(0.0, 1.0), 1 + static_cast<int>(rng.below(29)),
                               rng.normal()});
    }
    s.tokens.push_back(Token{-0.1, 0, s.label ? 2.0 : -2.0});
    s.static_vec = {0, 0, 0};
    samples.push_back(std::move(s));
  }
  auto result = train<float>(samples, cfg, identity_stats(), catalog_names(), 2);
  CHECK(result.history.back().mean_loss < result.history.front().mean_loss);
  CHECK(result.history.back().mean_loss < 0.3);
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto cfg = tiny_config();
  cfg.epochs = 1;
  cfg.batch_size = 4;
  Rng rng(111);
  std::vector<WindowSample> samples;
  for (int i = 0; i < 6; ++i) {
    auto s = random_sample(rng, 8);
    s.label = i % 2;
    samples.push_back(std::move(s));
  }
  auto result = train<float>(samples, cfg, identity_stats(), catalog_names(), 1);

  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "rpmf_model_test";
  fs::create_directories(dir);
  auto path1 = (dir / "a.ckpt").string();
  auto path2 = (dir / "b.ckpt").string();
  save_checkpoint(path1, result.params);
  auto loaded = load_checkpoint(path1);
  save_checkpoint(path2, loaded);

  std::ifstream f1(path1), f2(path2);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());
  CHECK(!s1.str().empty());

  // predictions identical pre/post save
  auto probe = random_sample(rng, 14);
  auto before = predict(probe, result.params);
  auto after = predict(probe, loaded);
  CHECK(before.risk == after.risk);

  // config and stats survive
  CHECK(loaded.config.d_model == cfg.d_model);
  CHECK(loaded.variable_names == catalog_names());
}

TEST_CASE("base64 round trip") {
  Rng rng(121);
  for (int len = 0; len < 40; ++len) {
    std::vector<uint8_t> bytes;
    for (int i = 0; i < len; ++i) bytes.push_back(static_cast<uint8_t>(rng.below(256)));
    auto text = base64_encode(bytes);
    auto back = base64_decode(text);
    CHECK(back == bytes);
  }
}
