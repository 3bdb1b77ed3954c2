#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rpmf/domain.hpp"
#include "rpmf/errors.hpp"
#include "rpmf/rng.hpp"
#include "rpmf/sampling.hpp"
#include "rpmf/tensor.hpp"

// Adapted STraTS forecaster: continuous value/time encoders plus a type
// embedding feed a pre-norm transformer encoder; fusion attention pools the
// contextual tokens; a static-feature FFN joins before the sigmoid head.

namespace rpmf {

struct ModelConfig {
  int d_model = 50;
  int n_blocks = 2;
  int n_heads = 4;
  int ffn_mult = 2;
  double dropout = 0.2;
  int cve_hidden = 0;     // 0 = ceil(sqrt(d_model))
  int static_hidden = 0;  // 0 = d_model
  int batch_size = 128;
  int epochs = 80;
  double lr = 5e-4;
  double pos_weight = 1.0;
  uint64_t seed = 0;

  // d_model need not divide n_heads evenly; heads use floor(d/h) and the
  // output projection restores d_model.
  int head_dim() const { return d_model / n_heads; }
  int cve_hidden_eff() const {
    return cve_hidden > 0 ? cve_hidden
                          : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d_model))));
  }
  int static_hidden_eff() const { return static_hidden > 0 ? static_hidden : d_model; }
};

struct Prediction {
  double risk = 0.0;
  std::vector<double> fusion_weights;  // one per real token, sums to 1
};

template <class S>
struct BlockParamsT {
  ad::Mat<S> ln1_gamma, ln1_beta;
  ad::Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Mat<S> ln2_gamma, ln2_beta;
  ad::Mat<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

/// All learnable arrays plus the normalization statistics and variable
/// catalog they were trained with (together: the checkpoint).
template <class S>
struct ModelParamsT {
  ModelConfig config;
  NormStats norm_stats;
  std::vector<std::string> variable_names;

  ad::Mat<S> cve_val_w1, cve_val_b1, cve_val_w2, cve_val_b2;
  ad::Mat<S> cve_time_w1, cve_time_b1, cve_time_w2, cve_time_b2;
  ad::Mat<S> type_embedding;
  std::vector<BlockParamsT<S>> blocks;
  ad::Mat<S> fusion_w, fusion_u;
  ad::Mat<S> static_w1, static_b1, static_w2, static_b2;
  ad::Mat<S> head_w, head_b;

  static ModelParamsT init(const ModelConfig& cfg, NormStats stats,
                           std::vector<std::string> names, uint64_t seed);

  /// Stable name -> tensor ordering shared by Adam, checkpoints and grads.
  std::vector<std::pair<std::string, ad::Mat<S>*>> named_tensors();
  std::vector<std::pair<std::string, const ad::Mat<S>*>> named_tensors() const;

  long param_count() const;

  template <class T>
  ModelParamsT<T> cast() const;
};

using ModelParams = ModelParamsT<float>;

namespace detail_model {

template <class S>
void fill_uniform(ad::Mat<S>& m, Rng& rng, double lo = -0.05, double hi = 0.05) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    *(m.data() + i) = static_cast<S>(rng.uniform(lo, hi));
  }
}

}  // namespace detail_model

template <class S>
ModelParamsT<S> ModelParamsT<S>::init(const ModelConfig& cfg, NormStats stats,
                                      std::vector<std::string> names, uint64_t seed) {
  if (cfg.d_model <= 0 || cfg.n_blocks <= 0 || cfg.n_heads <= 0 || cfg.ffn_mult <= 0 ||
      cfg.head_dim() <= 0) {
    throw ArgumentError("ModelParams::init: config dimensions must be positive");
  }
  ModelParamsT<S> p;
  p.config = cfg;
  p.norm_stats = std::move(stats);
  p.variable_names = std::move(names);
  const int d = cfg.d_model;
  const int h = cfg.cve_hidden_eff();
  const int hd = cfg.head_dim();
  const int proj = cfg.n_heads * hd;
  const int ffn = cfg.ffn_mult * d;
  const int sh = cfg.static_hidden_eff();
  const auto n_vars = static_cast<Eigen::Index>(p.variable_names.size());

  auto zeros = [](int r, int c) { return ad::Mat<S>::Zero(r, c); };
  p.cve_val_w1 = zeros(1, h);
  p.cve_val_b1 = zeros(1, h);
  p.cve_val_w2 = zeros(h, d);
  p.cve_val_b2 = zeros(1, d);
  p.cve_time_w1 = zeros(1, h);
  p.cve_time_b1 = zeros(1, h);
  p.cve_time_w2 = zeros(h, d);
  p.cve_time_b2 = zeros(1, d);
  p.type_embedding = zeros(static_cast<int>(n_vars), d);
  p.blocks.resize(static_cast<size_t>(cfg.n_blocks));
  for (auto& b : p.blocks) {
    b.ln1_gamma = ad::Mat<S>::Ones(1, d);
    b.ln1_beta = zeros(1, d);
    b.wq = zeros(d, proj);
    b.bq = zeros(1, proj);
    b.wk = zeros(d, proj);
    b.bk = zeros(1, proj);
    b.wv = zeros(d, proj);
    b.bv = zeros(1, proj);
    b.wo = zeros(proj, d);
    b.bo = zeros(1, d);
    b.ln2_gamma = ad::Mat<S>::Ones(1, d);
    b.ln2_beta = zeros(1, d);
    b.ffn_w1 = zeros(d, ffn);
    b.ffn_b1 = zeros(1, ffn);
    b.ffn_w2 = zeros(ffn, d);
    b.ffn_b2 = zeros(1, d);
  }
  p.fusion_w = zeros(d, d);
  p.fusion_u = zeros(d, 1);
  p.static_w1 = zeros(3, sh);
  p.static_b1 = zeros(1, sh);
  p.static_w2 = zeros(sh, d);
  p.static_b2 = zeros(1, d);
  p.head_w = zeros(2 * d, 1);
  p.head_b = zeros(1, 1);

  // seeded uniform [-0.05, 0.05] on weights and embeddings; biases stay 0,
  // layer-norm affines stay (1, 0). Draw order follows the tensor list.
  Rng rng(derive_seed(seed, 0x1417));
  for (auto& [name, mat] : p.named_tensors()) {
    bool is_weight = name.find("gamma") == std::string::npos &&
                     name.find("beta") == std::string::npos &&
                     name.find(".b") == std::string::npos && name != "head_b";
    if (is_weight) detail_model::fill_uniform(*mat, rng);
  }
  return p;
}

template <class S>
std::vector<std::pair<std::string, ad::Mat<S>*>> ModelParamsT<S>::named_tensors() {
  std::vector<std::pair<std::string, ad::Mat<S>*>> out;
  out.reserve(18 + 16 * blocks.size());
  out.emplace_back("cve_val.w1", &cve_val_w1);
  out.emplace_back("cve_val.b1", &cve_val_b1);
  out.emplace_back("cve_val.w2", &cve_val_w2);
  out.emplace_back("cve_val.b2", &cve_val_b2);
  out.emplace_back("cve_time.w1", &cve_time_w1);
  out.emplace_back("cve_time.b1", &cve_time_b1);
  out.emplace_back("cve_time.w2", &cve_time_w2);
  out.emplace_back("cve_time.b2", &cve_time_b2);
  out.emplace_back("type_embedding", &type_embedding);
  for (size_t i = 0; i < blocks.size(); ++i) {
    auto& b = blocks[i];
    std::string pre = "block" + std::to_string(i) + ".";
    out.emplace_back(pre + "ln1.gamma", &b.ln1_gamma);
    out.emplace_back(pre + "ln1.beta", &b.ln1_beta);
    out.emplace_back(pre + "attn.wq", &b.wq);
    out.emplace_back(pre + "attn.bq", &b.bq);
    out.emplace_back(pre + "attn.wk", &b.wk);
    out.emplace_back(pre + "attn.bk", &b.bk);
    out.emplace_back(pre + "attn.wv", &b.wv);
    out.emplace_back(pre + "attn.bv", &b.bv);
    out.emplace_back(pre + "attn.wo", &b.wo);
    out.emplace_back(pre + "attn.bo", &b.bo);
    out.emplace_back(pre + "ln2.gamma", &b.ln2_gamma);
    out.emplace_back(pre + "ln2.beta", &b.ln2_beta);
    out.emplace_back(pre + "ffn.w1", &b.ffn_w1);
    out.emplace_back(pre + "ffn.b1", &b.ffn_b1);
    out.emplace_back(pre + "ffn.w2", &b.ffn_w2);
    out.emplace_back(pre + "ffn.b2", &b.ffn_b2);
  }
  out.emplace_back("fusion.w", &fusion_w);
  out.emplace_back("fusion.u", &fusion_u);
  out.emplace_back("static.w1", &static_w1);
  out.emplace_back("static.b1", &static_b1);
  out.emplace_back("static.w2", &static_w2);
  out.emplace_back("static.b2", &static_b2);
  out.emplace_back("head_w", &head_w);
  out.emplace_back("head_b", &head_b);
  return out;
}

template <class S>
std::vector<std::pair<std::string, const ad::Mat<S>*>> ModelParamsT<S>::named_tensors() const {
  std::vector<std::pair<std::string, const ad::Mat<S>*>> out;
  for (auto& [name, mat] : const_cast<ModelParamsT<S>*>(this)->named_tensors()) {
    out.emplace_back(name, mat);
  }
  return out;
}

template <class S>
long ModelParamsT<S>::param_count() const {
  long n = 0;
  for (const auto& [name, mat] : named_tensors()) n += static_cast<long>(mat->size());
  return n;
}

template <class S>
template <class T>
ModelParamsT<T> ModelParamsT<S>::cast() const {
  ModelParamsT<T> out = ModelParamsT<T>::init(config, norm_stats, variable_names, 0);
  auto src = named_tensors();
  auto dst = out.named_tensors();
  for (size_t i = 0; i < src.size(); ++i) {
    *dst[i].second = src[i].first == dst[i].first
                         ? src[i].second->template cast<T>()
                         : throw ArgumentError("cast: tensor order mismatch");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward graph

/// Tape-registered mirror of the parameter struct.
template <class S>
struct ModelVars {
  std::vector<ad::Var<S>> vars;  // same order as named_tensors()

  static ModelVars register_on(ad::Tape<S>& tape, const ModelParamsT<S>& params) {
    ModelVars mv;
    for (const auto& [name, mat] : params.named_tensors()) {
      mv.vars.push_back(tape.leaf(*mat));
    }
    return mv;
  }
};

/// One window's tensors: time/value columns, variable ids, and the validity
/// mask (padding rows are 0).
template <class S>
struct WindowInput {
  ad::Mat<S> t_rel;  // n x 1
  ad::Mat<S> v_norm;
  std::vector<int> var_ids;
  std::vector<uint8_t> mask;  // 1 = real token
  ad::Mat<S> static_vec;      // 1 x 3

  static WindowInput from_sample(const WindowSample& s, int n_padding = 0) {
    if (s.tokens.empty()) {
      throw DataError("window has no tokens (patient " + s.patient_id + ", cutoff " +
                      std::to_string(s.cutoff_days) + ")");
    }
    const auto n = static_cast<Eigen::Index>(s.tokens.size()) + n_padding;
    WindowInput in;
    in.t_rel = ad::Mat<S>::Zero(n, 1);
    in.v_norm = ad::Mat<S>::Zero(n, 1);
    in.var_ids.assign(static_cast<size_t>(n), 0);
    in.mask.assign(static_cast<size_t>(n), 0);
    for (size_t i = 0; i < s.tokens.size(); ++i) {
      in.t_rel(static_cast<Eigen::Index>(i), 0) = static_cast<S>(s.tokens[i].t_rel);
      in.v_norm(static_cast<Eigen::Index>(i), 0) = static_cast<S>(s.tokens[i].v_norm);
      in.var_ids[i] = s.tokens[i].var;
      in.mask[i] = 1;
    }
    in.static_vec = ad::Mat<S>(1, 3);
    for (int i = 0; i < 3; ++i) in.static_vec(0, i) = static_cast<S>(s.static_vec[static_cast<size_t>(i)]);
    return in;
  }
};

template <class S>
struct ForwardOutput {
  ad::Var<S> risk;            // 1x1
  ad::Var<S> fusion_weights;  // 1xn over all rows; padding gets exact 0
};

namespace detail_model {

template <class S>
ad::Var<S> cve(ad::Var<S> x, ad::Var<S> w1, ad::Var<S> b1, ad::Var<S> w2, ad::Var<S> b2) {
  using namespace ad;
  return add(matmul(tanh(add(matmul(x, w1), b1)), w2), b2);
}

}  // namespace detail_model

/// Token embeddings: CVE(value) + CVE(time) + type_embedding[var].
template <class S>
ad::Var<S> embed_tokens(ad::Tape<S>& tape, const ModelVars<S>& mv,
                        const ModelParamsT<S>& params, const WindowInput<S>& input) {
  using namespace ad;
  const auto& v = mv.vars;
  for (int id : input.var_ids) {
    if (id < 0 || id >= static_cast<int>(params.variable_names.size())) {
      throw DataError("variable id " + std::to_string(id) +
                      " outside the checkpoint catalog (" +
                      std::to_string(params.variable_names.size()) + " variables)");
    }
  }
  Var<S> val_col = tape.leaf(input.v_norm);
  Var<S> time_col = tape.leaf(input.t_rel);
  Var<S> val_emb = detail_model::cve(val_col, v[0], v[1], v[2], v[3]);
  Var<S> time_emb = detail_model::cve(time_col, v[4], v[5], v[6], v[7]);
  Var<S> type_emb = embedding_lookup(v[8], input.var_ids);
  return add(add(val_emb, time_emb), type_emb);
}

/// Pre-norm transformer encoder over the real (unmasked) tokens.
template <class S>
ad::Var<S> encode(const ModelVars<S>& mv, const ModelParamsT<S>& params, ad::Var<S> x,
                  const std::vector<uint8_t>& mask, bool train, uint64_t dropout_seed) {
  using namespace ad;
  const ModelConfig& cfg = params.config;
  const int hd = cfg.head_dim();
  const auto n = x.rows();

  ad::Mask key_mask(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) key_mask(r, c) = mask[static_cast<size_t>(c)];
  }

  const S scale = S(1) / std::sqrt(static_cast<S>(hd));
  int site = 0;
  size_t base = 9;  // vars[9..] are block tensors, 16 per block
  for (int b = 0; b < cfg.n_blocks; ++b, base += 16) {
    const auto& v = mv.vars;
    Var<S> h = layer_norm(x, v[base + 0], v[base + 1]);
    Var<S> q = add(matmul(h, v[base + 2]), v[base + 3]);
    Var<S> k = add(matmul(h, v[base + 4]), v[base + 5]);
    Var<S> val = add(matmul(h, v[base + 6]), v[base + 7]);
    Var<S> ctx;
    for (int head = 0; head < cfg.n_heads; ++head) {
      Var<S> qh = block_cols(q, head * hd, hd);
      Var<S> kh = block_cols(k, head * hd, hd);
      Var<S> vh = block_cols(val, head * hd, hd);
      Var<S> probs = softmax_masked(scalar_mul(matmul_nt(qh, kh), scale), key_mask);
      Var<S> ctx_h = matmul(probs, vh);
      ctx = head == 0 ? ctx_h : concat_cols(ctx, ctx_h);
    }
    Var<S> attn_out = add(matmul(ctx, v[base + 8]), v[base + 9]);
    x = add(x, dropout(attn_out, cfg.dropout, train, derive_seed(dropout_seed, 0xd0, static_cast<uint64_t>(site++))));
    Var<S> h2 = layer_norm(x, v[base + 10], v[base + 11]);
    Var<S> ffn = add(matmul(relu(add(matmul(h2, v[base + 12]), v[base + 13])), v[base + 14]),
                     v[base + 15]);
    x = add(x, dropout(ffn, cfg.dropout, train, derive_seed(dropout_seed, 0xd0, static_cast<uint64_t>(site++))));
  }
  return x;
}

/// Fusion attention pooling, static-feature FFN, sigmoid head.
template <class S>
ForwardOutput<S> fuse_and_predict(ad::Tape<S>& tape, const ModelVars<S>& mv,
                                  const ModelParamsT<S>& params, ad::Var<S> ctx,
                                  const std::vector<uint8_t>& mask,
                                  const ad::Mat<S>& static_vec) {
  using namespace ad;
  const auto& v = mv.vars;
  const size_t base = 9 + 16 * params.blocks.size();
  Var<S> scores = matmul(tanh(matmul(ctx, v[base + 0])), v[base + 1]);  // n x 1
  ad::Mask row_mask(1, ctx.rows());
  for (Eigen::Index i = 0; i < ctx.rows(); ++i) row_mask(0, i) = mask[static_cast<size_t>(i)];
  Var<S> alpha = softmax_masked(transpose(scores), row_mask);  // 1 x n
  Var<S> pooled = matmul(alpha, ctx);                          // 1 x d

  Var<S> sv = tape.leaf(static_vec);
  Var<S> s_hidden = tanh(add(matmul(sv, v[base + 2]), v[base + 3]));
  Var<S> s_emb = add(matmul(s_hidden, v[base + 4]), v[base + 5]);

  Var<S> logit = add(matmul(concat_cols(pooled, s_emb), v[base + 6]), v[base + 7]);
  return ForwardOutput<S>{sigmoid(logit), alpha};
}

/// Full eval/train forward for one window.
template <class S>
ForwardOutput<S> forward_window(ad::Tape<S>& tape, const ModelVars<S>& mv,
                                const ModelParamsT<S>& params, const WindowInput<S>& input,
                                bool train, uint64_t dropout_seed) {
  ad::Var<S> emb = embed_tokens(tape, mv, params, input);
  ad::Var<S> ctx = encode(mv, params, emb, input.mask, train, dropout_seed);
  return fuse_and_predict(tape, mv, params, ctx, input.mask, input.static_vec);
}

/// Deterministic eval-mode prediction (dropout off, nothing recorded).
template <class S>
Prediction predict(const WindowSample& sample, const ModelParamsT<S>& params,
                   int n_padding = 0) {
  ad::Tape<S> tape;
  tape.set_recording(false);
  ModelVars<S> mv = ModelVars<S>::register_on(tape, params);
  auto input = WindowInput<S>::from_sample(sample, n_padding);
  auto out = forward_window(tape, mv, params, input, false, 0);
  Prediction pred;
  pred.risk = static_cast<double>(out.risk.value()(0, 0));
  pred.fusion_weights.reserve(sample.tokens.size());
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(sample.tokens.size()); ++i) {
    pred.fusion_weights.push_back(static_cast<double>(out.fusion_weights.value()(0, i)));
  }
  return pred;
}

// ---------------------------------------------------------------------------
// Training

struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
};

template <class S>
struct TrainResult {
  ModelParamsT<S> params;
  std::vector<EpochStats> history;
  std::vector<std::string> warnings;
};

template <class S>
TrainResult<S> train(std::span<const WindowSample> samples, const ModelConfig& cfg,
                     const NormStats& stats, std::vector<std::string> variable_names,
                     int threads = 1,
                     const std::function<void(const EpochStats&)>& on_epoch = {}) {
  if (samples.empty()) throw ArgumentError("train: empty training set");
  TrainResult<S> result;
  long positives = 0;
  for (const auto& s : samples) positives += s.label;
  if (positives == 0 || positives == static_cast<long>(samples.size())) {
    result.warnings.push_back("training set has a single class (" +
                              std::to_string(positives) + "/" +
                              std::to_string(samples.size()) + " positive)");
  }

  result.params = ModelParamsT<S>::init(cfg, stats, std::move(variable_names), cfg.seed);
  auto tensors = result.params.named_tensors();
  const size_t n_tensors = tensors.size();

  ad::AdamState<S> adam;
  adam.hyper.lr = static_cast<S>(cfg.lr);
  {
    std::vector<ad::Mat<S>*> ptrs;
    for (auto& [name, mat] : tensors) ptrs.push_back(mat);
    adam.init(ptrs);
  }

  // pre-build inputs once; tokens do not change across epochs
  std::vector<WindowInput<S>> inputs;
  inputs.reserve(samples.size());
  for (const auto& s : samples) inputs.push_back(WindowInput<S>::from_sample(s));

  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  const int n_threads = std::max(1, threads);
  const auto pos_weight = static_cast<S>(cfg.pos_weight);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5381, static_cast<uint64_t>(epoch)));
    shuffle(order, shuffle_rng);

    double epoch_loss_sum = 0.0;
    long epoch_count = 0;
    for (size_t batch_lo = 0; batch_lo < order.size();
         batch_lo += static_cast<size_t>(cfg.batch_size)) {
      const size_t batch_hi =
          std::min(order.size(), batch_lo + static_cast<size_t>(cfg.batch_size));
      const size_t bsize = batch_hi - batch_lo;
      const auto step_id = static_cast<uint64_t>(epoch) * 1000003ULL +
                           static_cast<uint64_t>(batch_lo / static_cast<size_t>(cfg.batch_size));

      std::vector<std::vector<ad::Mat<S>>> per_sample(bsize);
      std::vector<double> losses(bsize, 0.0);

      auto run_range = [&](size_t lo, size_t hi) {
        ad::Tape<S> tape;
        for (size_t bi = lo; bi < hi; ++bi) {
          tape.reset();
          ModelVars<S> mv = ModelVars<S>::register_on(tape, result.params);
          const WindowSample& sample = samples[order[batch_lo + bi]];
          const WindowInput<S>& input = inputs[order[batch_lo + bi]];
          uint64_t drop_seed = derive_seed(cfg.seed, step_id, static_cast<uint64_t>(bi));
          auto out = forward_window(tape, mv, result.params, input, true, drop_seed);
          ad::Mat<S> label(1, 1);
          label(0, 0) = static_cast<S>(sample.label);
          auto loss = ad::bce_loss(out.risk, label, pos_weight);
          losses[bi] = static_cast<double>(loss.value()(0, 0));
          ad::backward(loss);
          per_sample[bi].reserve(n_tensors);
          for (const auto& v : mv.vars) per_sample[bi].push_back(v.grad());
        }
      };

      if (n_threads == 1 || bsize == 1) {
        run_range(0, bsize);
      } else {
        std::vector<std::thread> pool;
        const size_t chunk = (bsize + static_cast<size_t>(n_threads) - 1) /
                             static_cast<size_t>(n_threads);
        for (int t = 0; t < n_threads; ++t) {
          size_t lo = static_cast<size_t>(t) * chunk;
          size_t hi = std::min(bsize, lo + chunk);
          if (lo >= hi) break;
          pool.emplace_back(run_range, lo, hi);
        }
        for (auto& th : pool) th.join();
      }

      for (double l : losses) {
        if (!std::isfinite(l)) {
          throw TrainError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step_id) +
                           "; try a smaller learning rate (current " + std::to_string(cfg.lr) +
                           ")");
        }
        epoch_loss_sum += l;
        ++epoch_count;
      }

      // fold per-sample gradients in sample order: the mean-loss gradient,
      // bit-identical for every thread count
      std::vector<ad::Mat<S>> acc(n_tensors);
      for (size_t ti = 0; ti < n_tensors; ++ti) {
        acc[ti] = ad::Mat<S>::Zero(tensors[ti].second->rows(), tensors[ti].second->cols());
      }
      const S inv_b = S(1) / static_cast<S>(bsize);
      for (size_t bi = 0; bi < bsize; ++bi) {
        for (size_t ti = 0; ti < n_tensors; ++ti) acc[ti] += per_sample[bi][ti];
      }
      for (size_t ti = 0; ti < n_tensors; ++ti) acc[ti] *= inv_b;

      std::vector<ad::Mat<S>*> ptrs;
      std::vector<const ad::Mat<S>*> gptrs;
      for (size_t ti = 0; ti < n_tensors; ++ti) {
        ptrs.push_back(tensors[ti].second);
        gptrs.push_back(&acc[ti]);
      }
      ad::adam_step<S>(ptrs, gptrs, adam);
    }

    EpochStats es{epoch, epoch_loss_sum / static_cast<double>(epoch_count)};
    result.history.push_back(es);
    if (on_epoch) on_epoch(es);
  }
  return result;
}

}  // namespace rpmf
