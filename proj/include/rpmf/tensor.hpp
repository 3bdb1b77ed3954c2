#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rpmf/rng.hpp"

// Reverse-mode differentiation over dense row-major matrices. Ops record
// onto a Tape; backward() replays the recorded graph once in reverse
// creation order (creation order is already topological). Everything is
// templated on the scalar so the same graph code runs in double for
// gradient checks and float for training.

namespace rpmf::ad {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  std::ostringstream os;
  os << "[" << r << "x" << c << "]";
  return os.str();
}

template <class S>
class Tape;

template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Mat<S>& value() const;
  const Mat<S>& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

template <class S>
class Tape {
 public:
  struct Node {
    Mat<S> value;
    Mat<S> grad;                              // allocated lazily by backward()
    std::function<void(Tape&)> backprop;      // empty for leaves
  };

  explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}

  /// Drops all nodes but keeps vector capacity; reused across samples.
  void reset() { nodes_.clear(); }

  int size() const { return static_cast<int>(nodes_.size()); }
  bool check_finite() const { return check_finite_; }
  void set_check_finite(bool on) { check_finite_ = on; }

  /// When recording is off, ops still compute values but store no backprop
  /// closures; backward() is then unavailable. Used for inference.
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  Var<S> leaf(Mat<S> v) {
    nodes_.push_back(Node{std::move(v), {}, {}});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<S> leaf_scalar(S v) {
    Mat<S> m(1, 1);
    m(0, 0) = v;
    return leaf(std::move(m));
  }

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  Var<S> emit(const char* op, Mat<S> value, std::function<void(Tape&)> backprop) {
    if (check_finite_ && !value.allFinite()) {
      throw TensorError(std::string(op) + ": non-finite value produced " +
                        shape_str(value.rows(), value.cols()));
    }
    nodes_.push_back(Node{std::move(value), {}, recording_ ? std::move(backprop)
                                                           : std::function<void(Tape&)>{}});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Mat<S>& grad_of(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

 private:
  std::vector<Node> nodes_;
  bool check_finite_ = false;
  bool recording_ = true;
};

template <class S>
const Mat<S>& Var<S>::value() const {
  return tape->node(id).value;
}

template <class S>
const Mat<S>& Var<S>::grad() const {
  return tape->node(id).grad;
}

namespace detail {

template <class S>
void require_same_tape(const char* op, Var<S> a, Var<S> b) {
  if (a.tape != b.tape) throw TensorError(std::string(op) + ": operands on different tapes");
}

template <class S>
[[noreturn]] void shape_error(const char* op, Var<S> a, Var<S> b) {
  throw TensorError(std::string(op) + ": incompatible shapes " +
                    shape_str(a.rows(), a.cols()) + " and " + shape_str(b.rows(), b.cols()));
}

}  // namespace detail

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::require_same_tape("matmul", a, b);
  if (a.cols() != b.rows()) detail::shape_error("matmul", a, b);
  Mat<S> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  int ai = a.id, bi = b.id, oi = a.tape->size();
  return a.tape->emit("matmul", std::move(out), [ai, bi, oi](Tape<S>& t) {
    const Mat<S>& g = t.node(oi).grad;
    t.grad_of(ai).noalias() += g * t.node(bi).value.transpose();
    t.grad_of(bi).noalias() += t.node(ai).value.transpose() * g;
  });
}

/// a * b^T without materializing the transpose.
template <class S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  detail::require_same_tape("matmul_nt", a, b);
  if (a.cols() != b.cols()) detail::shape_error("matmul_nt", a, b);
  Mat<S> out(a.rows(), b.rows());
  out.noalias() = a.value() * b.value().transpose();
  int ai = a.id, bi = b.id, oi = a.tape->size();
  return a.tape->emit("matmul_nt", std::move(out), [ai, bi, oi](Tape<S>& t) {
    const Mat<S>& g = t.node(oi).grad;
    t.grad_of(ai).noalias() += g * t.node(bi).value;
    t.grad_of(bi).noalias() += g.transpose() * t.node(ai).value;
  });
}

template <class S>
Var<S> transpose(Var<S> a) {
  Mat<S> out = a.value().transpose();
  int ai = a.id, oi = a.tape->size();
  return a.tape->emit("transpose", std::move(out), [ai, oi](Tape<S>& t) {
    t.grad_of(ai) += t.node(oi).grad.transpose();
  });
}

/// Elementwise add; b may also be a 1 x cols row vector broadcast over the
/// leading dimension.
template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::require_same_tape("add", a, b);
  const bool broadcast = (b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols());
  if (!broadcast && (a.rows() != b.rows() || a.cols() != b.cols())) {
    detail::shape_error("add", a, b);
  }
  Mat<S> out;
  if (broadcast) {
    out = a.value().rowwise() + b.value().row(0);
  } else {
    out = a.value() + b.value();
  }
  int ai = a.id, bi = b.id, oi = a.tape->size();
  return a.tape->emit("add", std::move(out), [ai, bi, oi, broadcast](Tape<S>& t) {
    const Mat<S>& g = t.node(oi).grad;
    t.grad_of(ai) += g;
    if (broadcast) {
      t.grad_of(bi).row(0) += g.colwise().sum();
    } else {
      t.grad_of(bi) += g;
    }
  });
}

template <class S>
Var<S> operator+(Var<S> a, Var<S> b) {
  return add(a, b);
}

template <class S>
Var<S> scalar_mul(Var<S> a, S c) {
  Mat<S> out = a.value() * c;
  int ai = a.id, oi = a.tape->size();
  return a.tape->emit("scalar_mul", std::move(out), [ai, oi, c](Tape<S>& t) {
    t.grad_of(ai) += t.node(oi).grad * c;
  });
}

template <class S>
Var<S> tanh(Var<S> a) {
  Mat<S> out = a.value().array().tanh();
  int ai = a.id, oi = a.tape->size();
  return a.tape->emit("tanh", std::move(out), [ai, oi](Tape<S>& t) {
    const Mat<S>& y = t.node(oi).value;
    t.grad_of(ai).array() += t.node(oi).grad.array() * (S(1) - y.array().square());
  });
}

template <class S>
Var<S> relu(Var<S> a) {
  Mat<S> out = a.value().array().max(S(0));
  int ai = a.id, oi = a.tape->size();
  return a.tape->emit("relu", std::move(out), [ai, oi](Tape<S>& t) {
    const Mat<S>& x = t.node(ai).value;
    t.grad_of(ai).array() +=
        t.node(oi).grad.array() * (x.array() > S(0)).template cast<S>();
  });
}

template <class S>
Var<S> sigmoid(Var<S> a) {
  Mat<S> out = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
  int ai = a.id, oi = a.tape->size();
  return a.tape->emit("sigmoid", std::move(out), [ai, oi](Tape<S>& t) {
    const Mat<S>& y = t.node(oi).value;
    t.grad_of(ai).array() += t.node(oi).grad.array() * y.array() * (S(1) - y.array());
  });
}

/// Generic elementwise unary op from value/derivative callables. The named
/// activations above are the fast path; this exists for extensions and for
/// wiring deliberately wrong derivatives in gradient-check tests.
template <class S, class F, class G>
Var<S> map_unary(Var<S> a, const char* name, F&& f, G&& dfdx) {
  Mat<S> out = a.value().unaryExpr([&](S x) { return f(x); });
  int ai = a.id, oi = a.tape->size();
  return a.tape->emit(name, std::move(out), [ai, oi, dfdx](Tape<S>& t) {
    const Mat<S>& x = t.node(ai).value;
    t.grad_of(ai).array() +=
        t.node(oi).grad.array() * x.unaryExpr([&](S v) { return dfdx(v); }).array();
  });
}

/// Row-wise softmax over unmasked positions; masked positions get exactly
/// zero probability. Throws if any row is fully masked.
template <class S>
Var<S> softmax_masked(Var<S> logits, const Mask& mask) {
  if (mask.rows() != logits.rows() || mask.cols() != logits.cols()) {
    throw TensorError("softmax_masked: mask shape " + shape_str(mask.rows(), mask.cols()) +
                      " does not match logits " + shape_str(logits.rows(), logits.cols()));
  }
  const Mat<S>& x = logits.value();
  Mat<S> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    S max_v = std::numeric_limits<S>::lowest();
    bool any = false;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c)) {
        any = true;
        max_v = std::max(max_v, x(r, c));
      }
    }
    if (!any) {
      throw TensorError("softmax_masked: row " + std::to_string(r) + " is fully masked");
    }
    S denom = S(0);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      S e = mask(r, c) ? std::exp(x(r, c) - max_v) : S(0);
      out(r, c) = e;
      denom += e;
    }
    out.row(r) /= denom;
  }
  int ai = logits.id, oi = logits.tape->size();
  return logits.tape->emit("softmax_masked", std::move(out), [ai, oi](Tape<S>& t) {
    const Mat<S>& p = t.node(oi).value;
    const Mat<S>& g = t.node(oi).grad;
    Mat<S>& dx = t.grad_of(ai);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      S dot = p.row(r).dot(g.row(r));
      dx.row(r).array() += p.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

/// Per-row standardization followed by a learned affine map; gamma and beta
/// are 1 x cols row vectors.
template <class S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-8)) {
  detail::require_same_tape("layer_norm", x, gamma);
  detail::require_same_tape("layer_norm", x, beta);
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols()) {
    throw TensorError("layer_norm: affine shapes " + shape_str(gamma.rows(), gamma.cols()) +
                      "," + shape_str(beta.rows(), beta.cols()) + " do not match input " +
                      shape_str(x.rows(), x.cols()));
  }
  const Mat<S>& v = x.value();
  const auto d = static_cast<S>(v.cols());
  Mat<S> xhat(v.rows(), v.cols());
  Mat<S> inv_sd(v.rows(), 1);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    S mu = v.row(r).mean();
    S var = (v.row(r).array() - mu).square().sum() / d;
    S inv = S(1) / std::sqrt(var + eps);
    inv_sd(r, 0) = inv;
    xhat.row(r) = (v.row(r).array() - mu) * inv;
  }
  Mat<S> out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  // xhat and inv_sd are needed by the pullback; keep them as tape leaves so
  // the closure stays small.
  Var<S> saved_xhat = x.tape->leaf(std::move(xhat));
  Var<S> saved_inv = x.tape->leaf(std::move(inv_sd));
  int xh = saved_xhat.id, iv = saved_inv.id;
  int xi = x.id, gi = gamma.id, bi = beta.id, oi = x.tape->size();
  return x.tape->emit("layer_norm", std::move(out), [xi, gi, bi, oi, xh, iv, d](Tape<S>& t) {
    const Mat<S>& g = t.node(oi).grad;
    const Mat<S>& xhat_v = t.node(xh).value;
    const Mat<S>& inv_v = t.node(iv).value;
    const Mat<S>& gamma_v = t.node(gi).value;
    t.grad_of(bi).row(0) += g.colwise().sum();
    t.grad_of(gi).row(0) += (g.array() * xhat_v.array()).colwise().sum().matrix();
    Mat<S>& dx = t.grad_of(xi);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      auto dxhat = (g.row(r).array() * gamma_v.row(0).array()).eval();
      S sum_dxhat = dxhat.sum();
      S sum_dxhat_xhat = (dxhat * xhat_v.row(r).array()).sum();
      dx.row(r).array() += (inv_v(r, 0) / d) * (d * dxhat - sum_dxhat -
                                                xhat_v.row(r).array() * sum_dxhat_xhat);
    }
  });
}

/// Inverted-scaling dropout. Identity when train is false or p == 0, so the
/// inference path never touches the RNG.
template <class S>
Var<S> dropout(Var<S> x, double p, bool train, uint64_t seed) {
  if (p < 0.0 || p >= 1.0) {
    throw TensorError("dropout: p must be in [0, 1), got " + std::to_string(p));
  }
  if (!train || p == 0.0) return x;
  Rng rng(seed);
  const S keep_scale = S(1.0 / (1.0 - p));
  Mat<S> mask(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.cols(); ++c) {
      mask(r, c) = rng.uniform() < p ? S(0) : keep_scale;
    }
  }
  Mat<S> out = x.value().cwiseProduct(mask);
  Var<S> saved = x.tape->leaf(std::move(mask));
  int xi = x.id, mi = saved.id, oi = x.tape->size();
  return x.tape->emit("dropout", std::move(out), [xi, mi, oi](Tape<S>& t) {
    t.grad_of(xi) += t.node(oi).grad.cwiseProduct(t.node(mi).value);
  });
}

/// Gathers rows of `table` by index; the pullback scatter-adds.
template <class S>
Var<S> embedding_lookup(Var<S> table, std::vector<int> ids) {
  const Mat<S>& tv = table.value();
  Mat<S> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw TensorError("embedding_lookup: id " + std::to_string(ids[i]) +
                        " outside table " + shape_str(tv.rows(), tv.cols()));
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  int ti = table.id, oi = table.tape->size();
  return table.tape->emit("embedding_lookup", std::move(out),
                          [ti, oi, ids = std::move(ids)](Tape<S>& t) {
                            const Mat<S>& g = t.node(oi).grad;
                            Mat<S>& dt = t.grad_of(ti);
                            for (size_t i = 0; i < ids.size(); ++i) {
                              dt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
                            }
                          });
}

/// Concatenation along the last (column) dimension.
template <class S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  detail::require_same_tape("concat_cols", a, b);
  if (a.rows() != b.rows()) detail::shape_error("concat_cols", a, b);
  Mat<S> out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.value();
  out.rightCols(b.cols()) = b.value();
  int ai = a.id, bi = b.id, oi = a.tape->size();
  Eigen::Index ac = a.cols(), bc = b.cols();
  return a.tape->emit("concat_cols", std::move(out), [ai, bi, oi, ac, bc](Tape<S>& t) {
    const Mat<S>& g = t.node(oi).grad;
    t.grad_of(ai) += g.leftCols(ac);
    t.grad_of(bi) += g.rightCols(bc);
  });
}

/// Column slice [j0, j0 + w).
template <class S>
Var<S> block_cols(Var<S> a, Eigen::Index j0, Eigen::Index w) {
  if (j0 < 0 || w <= 0 || j0 + w > a.cols()) {
    throw TensorError("block_cols: slice [" + std::to_string(j0) + ", " +
                      std::to_string(j0 + w) + ") outside " + shape_str(a.rows(), a.cols()));
  }
  Mat<S> out = a.value().middleCols(j0, w);
  int ai = a.id, oi = a.tape->size();
  return a.tape->emit("block_cols", std::move(out), [ai, oi, j0, w](Tape<S>& t) {
    t.grad_of(ai).middleCols(j0, w) += t.node(oi).grad;
  });
}

template <class S>
Var<S> sum_all(Var<S> a) {
  Mat<S> out(1, 1);
  out(0, 0) = a.value().sum();
  int ai = a.id, oi = a.tape->size();
  return a.tape->emit("sum_all", std::move(out), [ai, oi](Tape<S>& t) {
    t.grad_of(ai).array() += t.node(oi).grad(0, 0);
  });
}

template <class S>
Var<S> mean_all(Var<S> a) {
  return scalar_mul(sum_all(a), S(1) / static_cast<S>(a.value().size()));
}

/// axis 0 collapses rows (result 1 x cols); axis 1 collapses columns.
template <class S>
Var<S> sum_axis(Var<S> a, int axis) {
  if (axis != 0 && axis != 1) throw TensorError("sum_axis: axis must be 0 or 1");
  Mat<S> out;
  if (axis == 0) {
    out = a.value().colwise().sum();
  } else {
    out = a.value().rowwise().sum();
  }
  int ai = a.id, oi = a.tape->size();
  return a.tape->emit("sum_axis", std::move(out), [ai, oi, axis](Tape<S>& t) {
    const Mat<S>& g = t.node(oi).grad;
    Mat<S>& da = t.grad_of(ai);
    if (axis == 0) {
      da.rowwise() += g.row(0);
    } else {
      da.colwise() += g.col(0);
    }
  });
}

template <class S>
Var<S> mean_axis(Var<S> a, int axis) {
  const S n = static_cast<S>(axis == 0 ? a.rows() : a.cols());
  return scalar_mul(sum_axis(a, axis), S(1) / n);
}

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy over all elements; probabilities are clamped
/// into [1e-7, 1 - 1e-7] before the logs. pos_weight scales the positive
/// term (1 = plain BCE).
template <class S>
Var<S> bce_loss(Var<S> prob, const Mat<S>& labels, S pos_weight = S(1)) {
  if (prob.rows() != labels.rows() || prob.cols() != labels.cols()) {
    throw TensorError("bce_loss: labels shape " + shape_str(labels.rows(), labels.cols()) +
                      " does not match predictions " + shape_str(prob.rows(), prob.cols()));
  }
  const Mat<S>& p = prob.value();
  const S lo = S(kBceClamp), hi = S(1) - S(kBceClamp);
  const S n = static_cast<S>(p.size());
  S total = S(0);
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      S ph = std::min(hi, std::max(lo, p(r, c)));
      S y = labels(r, c);
      total -= pos_weight * y * std::log(ph) + (S(1) - y) * std::log(S(1) - ph);
    }
  }
  Mat<S> out(1, 1);
  out(0, 0) = total / n;
  Var<S> saved = prob.tape->leaf(labels);
  int li = saved.id;
  int pi = prob.id, oi = prob.tape->size();
  return prob.tape->emit("bce_loss", std::move(out),
                         [pi, li, oi, n, lo, hi, pos_weight](Tape<S>& t) {
                           const S g = t.node(oi).grad(0, 0);
                           const Mat<S>& p = t.node(pi).value;
                           const Mat<S>& y = t.node(li).value;
                           Mat<S>& dp = t.grad_of(pi);
                           for (Eigen::Index r = 0; r < p.rows(); ++r) {
                             for (Eigen::Index c = 0; c < p.cols(); ++c) {
                               if (p(r, c) < lo || p(r, c) > hi) continue;  // clamped flat
                               S ph = p(r, c);
                               dp(r, c) += g / n *
                                           (-pos_weight * y(r, c) / ph +
                                            (S(1) - y(r, c)) / (S(1) - ph));
                             }
                           }
                         });
}

/// Reverse accumulation from a scalar loss. Gradients of every node with
/// id <= loss.id are available afterwards via Var::grad().
template <class S>
void backward(Var<S> loss) {
  Tape<S>& t = *loss.tape;
  if (!t.recording()) throw TensorError("backward: tape is not recording");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw TensorError("backward: loss must be scalar, got " +
                      shape_str(loss.rows(), loss.cols()));
  }
  for (int id = 0; id <= loss.id; ++id) t.grad_of(id);
  t.grad_of(loss.id)(0, 0) = S(1);
  for (int id = loss.id; id >= 0; --id) {
    auto& fn = t.node(id).backprop;
    if (fn) fn(t);
  }
}

// ---------------------------------------------------------------------------
// Adam

template <class S>
struct AdamHyper {
  S lr = S(5e-4);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

template <class S>
struct AdamState {
  AdamHyper<S> hyper;
  int64_t step = 0;
  std::vector<Mat<S>> m;
  std::vector<Mat<S>> v;

  void init(std::span<Mat<S>* const> params) {
    m.clear();
    v.clear();
    for (const Mat<S>* p : params) {
      m.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      v.push_back(Mat<S>::Zero(p->rows(), p->cols()));
    }
    step = 0;
  }
};

/// Bias-corrected Adam update, in place.
template <class S>
void adam_step(std::span<Mat<S>* const> params, std::span<const Mat<S>* const> grads,
               AdamState<S>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw TensorError("adam_step: parameter/gradient/state count mismatch");
  }
  state.step += 1;
  const auto& h = state.hyper;
  const S bc1 = S(1) - std::pow(h.beta1, static_cast<S>(state.step));
  const S bc2 = S(1) - std::pow(h.beta2, static_cast<S>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Mat<S>& p = *params[i];
    const Mat<S>& g = *grads[i];
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw TensorError("adam_step: shape mismatch at parameter " + std::to_string(i) +
                        ": " + shape_str(p.rows(), p.cols()) + " vs " +
                        shape_str(g.rows(), g.cols()));
    }
    Mat<S>& m = state.m[i];
    Mat<S>& v = state.v[i];
    m = h.beta1 * m + (S(1) - h.beta1) * g;
    v.array() = h.beta2 * v.array() + (S(1) - h.beta2) * g.array().square();
    p.array() -= h.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + h.eps);
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

template <class S>
struct GradCheckParam {
  Mat<S>* param = nullptr;
  const Mat<S>* analytic = nullptr;
  std::string name;
};

/// Central finite differences against analytic gradients. Tensors larger
/// than max_coords are subsampled with a fixed-seed pick. Returns the worst
/// relative error |a - n| / max(1e-8, |a| + |n|).
template <class S>
double grad_check(const std::function<double()>& loss_fn,
                  std::span<const GradCheckParam<S>> params, double h = 1e-5,
                  int max_coords = 500, uint64_t seed = 0,
                  std::string* worst_name = nullptr) {
  double worst = 0.0;
  for (const auto& entry : params) {
    Mat<S>& p = *entry.param;
    const Eigen::Index size = p.size();
    std::vector<Eigen::Index> coords;
    if (size <= max_coords) {
      coords.resize(static_cast<size_t>(size));
      for (Eigen::Index i = 0; i < size; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      Rng rng(derive_seed(seed, 0x67c0de, static_cast<uint64_t>(size)));
      for (int i = 0; i < max_coords; ++i) {
        coords.push_back(static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(size))));
      }
    }
    for (Eigen::Index flat : coords) {
      S* cell = p.data() + flat;
      const S orig = *cell;
      *cell = orig + static_cast<S>(h);
      double up = loss_fn();
      *cell = orig - static_cast<S>(h);
      double down = loss_fn();
      *cell = orig;
      double numeric = (up - down) / (2.0 * h);
      double analytic = static_cast<double>(*(entry.analytic->data() + flat));
      double rel = std::abs(analytic - numeric) /
                   std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      if (rel > worst) {
        worst = rel;
        if (worst_name) *worst_name = entry.name + "[" + std::to_string(flat) + "]";
      }
    }
  }
  return worst;
}

}  // namespace rpmf::ad
