#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rpmf/tensor.hpp"

using namespace rpmf;
using namespace rpmf::ad;

using MatD = Mat<double>;

namespace {

MatD random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  MatD m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-scale, scale);
  }
  return m;
}

// Finite-difference oracle for a scalar-valued graph over leaf inputs. The
// builder must call backward() on its loss; the graph is rebuilt for every
// probe so the tape sees fresh values.
double fd_check(const std::function<double(Tape<double>&, std::vector<Var<double>>&)>& build,
                std::vector<MatD>& inputs, double h = 1e-6) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  auto eval = [&]() {
    tape.reset();
    leaves.clear();
    for (auto& m : inputs) leaves.push_back(tape.leaf(m));
    return build(tape, leaves);
  };
  eval();
  std::vector<MatD> analytic;
  for (auto& v : leaves) analytic.push_back(v.grad());

  double worst = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      double* cell = inputs[k].data() + i;
      double orig = *cell;
      *cell = orig + h;
      double up = eval();
      *cell = orig - h;
      double dn = eval();
      *cell = orig;
      double num = (up - dn) / (2 * h);
      double ana = *(analytic[k].data() + i);
      double rel = std::abs(ana - num) / std::max(1e-8, std::abs(ana) + std::abs(num));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("bce_loss closed forms") {
  Tape<double> tape;
  MatD p(1, 1), y(1, 1);
  p << 0.5;
  y << 1.0;
  auto v = tape.leaf(p);
  auto loss = bce_loss(v, y);
  CHECK(loss.value()(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("softmax_masked examples and normalization") {
  Tape<double> tape;
  MatD x(1, 3);
  x << 0, 0, 0;
  Mask all(1, 3);
  all << 1, 1, 1;
  auto v = softmax_masked(tape.leaf(x), all);
  CHECK(v.value()(0, 0) == doctest::Approx(1.0 / 3));
  CHECK(v.value()(0, 1) == doctest::Approx(1.0 / 3));

  MatD x2(1, 3);
  x2 << 5, 5, -9;
  Mask m2(1, 3);
  m2 << 1, 1, 0;
  auto v2 = softmax_masked(tape.leaf(x2), m2);
  CHECK(v2.value()(0, 0) == doctest::Approx(0.5));
  CHECK(v2.value()(0, 2) == 0.0);  // exactly zero

  Rng rng(11);
  MatD x3 = random_mat(7, 9, rng, 4.0);
  Mask m3(7, 9);
  for (Eigen::Index r = 0; r < 7; ++r) {
    for (Eigen::Index c = 0; c < 9; ++c) m3(r, c) = rng.bernoulli(0.7) ? 1 : 0;
    m3(r, 0) = 1;  // keep at least one unmasked
  }
  auto v3 = softmax_masked(tape.leaf(x3), m3);
  for (Eigen::Index r = 0; r < 7; ++r) {
    CHECK(std::abs(v3.value().row(r).sum() - 1.0) <= 1e-12);
  }

  Mask none(1, 3);
  none << 0, 0, 0;
  CHECK_THROWS_AS((void)softmax_masked(tape.leaf(x2), none), TensorError);
}

TEST_CASE("analytic single-op gradients") {
  // f(x) = x^2 at x = 3 -> df/dx = 6
  {
    Tape<double> tape;
    MatD x(1, 1);
    x << 3.0;
    auto v = tape.leaf(x);
    auto y = matmul(v, v);
    backward(y);
    CHECK(v.grad()(0, 0) == doctest::Approx(6.0));
  }
  // f(x) = sigmoid(x) at 0 -> 0.25
  {
    Tape<double> tape;
    MatD x(1, 1);
    x << 0.0;
    auto v = tape.leaf(x);
    auto y = sigmoid(v);
    backward(y);
    CHECK(v.grad()(0, 0) == doctest::Approx(0.25));
  }
}

TEST_CASE("layer_norm row statistics") {
  Rng rng(5);
  Tape<double> tape;
  MatD x = random_mat(6, 16, rng, 2.0);
  MatD gamma = MatD::Ones(1, 16), beta = MatD::Zero(1, 16);
  auto y = layer_norm(tape.leaf(x), tape.leaf(gamma), tape.leaf(beta));
  for (Eigen::Index r = 0; r < 6; ++r) {
    double mean = y.value().row(r).mean();
    double var = (y.value().row(r).array() - mean).square().sum() / 16.0;
    CHECK(std::abs(mean) <= 1e-10);
    CHECK(std::abs(var - 1.0) <= 1e-6);
  }
}

TEST_CASE("dropout identity and expectation") {
  Rng rng(3);
  MatD x = random_mat(4, 8, rng, 1.0).array() + 2.0;  // keep away from zero
  {
    Tape<double> tape;
    auto v = tape.leaf(x);
    auto y = dropout(v, 0.0, true, 1);
    CHECK(y.id == v.id);  // exact identity, no new node
    auto z = dropout(v, 0.5, false, 1);
    CHECK(z.id == v.id);
  }
  {
    // inverted scaling: mean over many draws within 2% of input
    Tape<double> tape;
    MatD one = MatD::Ones(1, 1) * 3.0;
    double acc = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      tape.reset();
      auto v = tape.leaf(one);
      acc += dropout(v, 0.3, true, derive_seed(99, 1, static_cast<uint64_t>(i))).value()(0, 0);
    }
    CHECK(acc / n == doctest::Approx(3.0).epsilon(0.02));
  }
  {
    // deterministic given seed
    Tape<double> tape;
    auto a = dropout(tape.leaf(x), 0.4, true, 42).value();
    auto b = dropout(tape.leaf(x), 0.4, true, 42).value();
    CHECK(a == b);
  }
}

TEST_CASE("composite graph matches finite differences") {
  Rng rng(17);
  std::vector<MatD> inputs;
  inputs.push_back(random_mat(5, 4, rng));        // x
  inputs.push_back(random_mat(4, 6, rng, 0.5));   // w1
  inputs.push_back(random_mat(1, 6, rng, 0.2));   // b1
  inputs.push_back(random_mat(6, 6, rng, 0.5));   // w2
  inputs.push_back(random_mat(1, 6, rng, 0.5));   // gamma (nonzero-ish)
  inputs.push_back(random_mat(1, 6, rng, 0.2));   // beta
  inputs.push_back(random_mat(3, 6, rng, 0.5));   // table

  Mask mask(5, 5);
  mask.setOnes();
  mask(0, 3) = 0;
  mask(2, 1) = 0;

  auto build = [&](Tape<double>&, std::vector<Var<double>>& in) {
    auto x = in[0], w1 = in[1], b1 = in[2], w2 = in[3], gamma = in[4], beta = in[5],
         table = in[6];
    auto h = tanh(add(matmul(x, w1), b1));                     // 5x6
    auto hn = layer_norm(h, gamma, beta);                      // 5x6
    auto q = relu(matmul(hn, w2));                             // 5x6
    auto att = softmax_masked(scalar_mul(matmul_nt(q, q), 0.3), mask);  // 5x5
    auto mixed = matmul(att, q);                               // 5x6
    auto emb = embedding_lookup(table, {0, 2, 1, 2, 0});       // 5x6
    auto cat = concat_cols(mixed + emb, sigmoid(block_cols(hn, 1, 3)));  // 5x9
    auto pooled = mean_axis(transpose(sum_axis(cat, 0)), 0);   // 1x1-ish chain
    auto probs = sigmoid(mean_axis(cat, 1));                   // 5x1
    MatD labels(5, 1);
    labels << 1, 0, 1, 0, 1;
    auto loss = add(bce_loss(probs, labels), mean_all(pooled));
    backward(loss);
    return loss.value()(0, 0);
  };
  CHECK(fd_check(build, inputs) <= 1e-6);
}

TEST_CASE("linear model gradients are exact to rounding") {
  Rng rng(23);
  std::vector<MatD> inputs;
  inputs.push_back(random_mat(1, 8, rng));   // x
  inputs.push_back(random_mat(8, 1, rng));   // w
  auto build = [&](Tape<double>&, std::vector<Var<double>>& in) {
    auto y = matmul(in[0], in[1]);
    backward(y);
    return y.value()(0, 0);
  };
  CHECK(fd_check(build, inputs, 1e-4) <= 1e-9);
}

TEST_CASE("corrupted tanh backward is caught") {
  Rng rng(29);
  std::vector<MatD> inputs;
  inputs.push_back(random_mat(3, 3, rng));
  auto build = [&](Tape<double>&, std::vector<Var<double>>& in) {
    // wrong derivative on purpose: 1 - y^2 replaced with 0.5
    auto y = map_unary(in[0], "bad_tanh", [](double x) { return std::tanh(x); },
                       [](double) { return 0.5; });
    auto loss = mean_all(y);
    backward(loss);
    return loss.value()(0, 0);
  };
  CHECK(fd_check(build, inputs) > 1e-2);
}

TEST_CASE("backward linearity") {
  Rng rng(31);
  MatD x = random_mat(4, 4, rng);
  MatD w = random_mat(4, 4, rng);
  auto grads_of = [&](double ca, double cb) {
    Tape<double> tape;
    auto xv = tape.leaf(x);
    auto wv = tape.leaf(w);
    auto f = mean_all(tanh(matmul(xv, wv)));
    auto g = mean_all(sigmoid(matmul_nt(xv, wv)));
    auto loss = add(scalar_mul(f, ca), scalar_mul(g, cb));
    backward(loss);
    return MatD(xv.grad());
  };
  MatD both = grads_of(1.0, 1.0);
  MatD fa = grads_of(1.0, 0.0);
  MatD fb = grads_of(0.0, 1.0);
  CHECK((both - fa - fb).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape<double> tape;
  auto v = tape.leaf(MatD::Ones(2, 2));
  CHECK_THROWS_AS(backward(v), TensorError);
}

TEST_CASE("shape errors name the op") {
  Tape<double> tape;
  auto a = tape.leaf(MatD::Ones(2, 3));
  auto b = tape.leaf(MatD::Ones(4, 2));
  CHECK_THROWS_WITH_AS((void)add(a, b), doctest::Contains("add"), TensorError);
  CHECK_THROWS_WITH_AS((void)matmul(a, b), doctest::Contains("matmul"), TensorError);
}

TEST_CASE("checked mode flags non-finite values") {
  Tape<double> tape(true);
  MatD x(1, 1);
  x << 800.0;
  auto v = tape.leaf(x);
  // exp overflow inside sigmoid(-x) path is fine; force Inf via scalar_mul
  CHECK_THROWS_AS((void)scalar_mul(v, std::numeric_limits<double>::infinity()), TensorError);
}

TEST_CASE("adam closed-form first step and zero grad") {
  {
    MatD p(1, 1);
    p << 1.0;
    MatD g = MatD::Zero(1, 1);
    std::vector<Mat<double>*> params{&p};
    std::vector<const Mat<double>*> grads{&g};
    AdamState<double> st;
    st.init(params);
    adam_step<double>(params, grads, st);
    CHECK(p(0, 0) == doctest::Approx(1.0));  // zero grad -> unchanged
  }
  {
    MatD p(1, 1);
    p << 1.0;
    MatD g = MatD::Ones(1, 1);
    std::vector<Mat<double>*> params{&p};
    std::vector<const Mat<double>*> grads{&g};
    AdamState<double> st;
    st.init(params);
    adam_step<double>(params, grads, st);
    // bias correction makes m_hat / sqrt(v_hat) = 1 at step 1
    CHECK(p(0, 0) == doctest::Approx(1.0 - 5e-4).epsilon(1e-6));
  }
}

TEST_CASE("adam descends x^2") {
  MatD x(1, 1);
  x << 1.0;
  std::vector<Mat<double>*> params{&x};
  AdamState<double> st;
  st.hyper.lr = 5e-3;  // 500 steps at the default would barely move; spec wants descent
  st.init(params);
  for (int i = 0; i < 500; ++i) {
    MatD g(1, 1);
    g << 2.0 * x(0, 0);
    std::vector<const Mat<double>*> grads{&g};
    adam_step<double>(params, grads, st);
  }
  CHECK(std::abs(x(0, 0)) < 0.5);
}

TEST_CASE("adam shape mismatch raises") {
  MatD p = MatD::Zero(2, 2), g = MatD::Zero(1, 2);
  std::vector<Mat<double>*> params{&p};
  std::vector<const Mat<double>*> grads{&g};
  AdamState<double> st;
  st.init(params);
  CHECK_THROWS_AS((adam_step<double>(params, grads, st)), TensorError);
}

TEST_CASE("grad_check helper against its own tape") {
  Rng rng(37);
  MatD w = random_mat(6, 6, rng);
  MatD x = random_mat(2, 6, rng);
  MatD analytic;
  auto loss_fn = [&]() {
    Tape<double> tape;
    auto wv = tape.leaf(w);
    auto xv = tape.leaf(x);
    auto loss = mean_all(tanh(matmul(xv, wv)));
    backward(loss);
    analytic = wv.grad();
    return loss.value()(0, 0);
  };
  loss_fn();
  MatD frozen = analytic;
  GradCheckParam<double> entry{&w, &frozen, "w"};
  double err = grad_check<double>(loss_fn, std::span(&entry, 1));
  CHECK(err <= 1e-8);
}
