#pragma once

// Helpers shared by the unit suites and the acceptance runner.

#include <algorithm>
#include <string>
#include <vector>

#include "rpmf/model.hpp"
#include "rpmf/rng.hpp"

namespace rpmf::testsupport {

inline std::vector<std::string> catalog_names() {
  std::vector<std::string> names;
  for (const auto& e : VariableCatalog::defaults().entries()) names.push_back(e.name);
  return names;
}

inline NormStats identity_stats(int n_vars = 30) {
  NormStats st;
  st.per_variable.assign(static_cast<size_t>(n_vars), {0.0, 1.0});
  return st;
}

inline WindowSample random_sample(Rng& rng, int n_tokens, int n_vars = 30) {
  WindowSample s;
  s.patient_id = "p";
  s.cutoff_days = 30.0;
  for (int i = 0; i < n_tokens; ++i) {
    s.tokens.push_back(Token{-rng.uniform(0.0, 1.0),
                             static_cast<int>(rng.below(static_cast<uint64_t>(n_vars))),
                             rng.normal()});
  }
  std::sort(s.tokens.begin(), s.tokens.end(), [](const Token& a, const Token& b) {
    return std::pair{a.t_rel, a.var} < std::pair{b.t_rel, b.var};
  });
  s.static_vec = {rng.normal(), rng.bernoulli(0.5) ? 1.0 : 0.0, rng.normal()};
  s.label = rng.bernoulli(0.3) ? 1 : 0;
  return s;
}

/// Re-draws every tensor at O(1) scale so no gradient sits below
/// finite-difference noise; production init is much smaller.
template <class S>
void randomize_for_gradcheck(ModelParamsT<S>& params, uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, mat] : params.named_tensors()) {
    for (Eigen::Index i = 0; i < mat->size(); ++i) {
      *(mat->data() + i) = static_cast<S>(rng.uniform(-0.5, 0.5));
    }
    if (name.find("gamma") != std::string::npos) {
      mat->array() += S(1);  // keep layer norms near identity scale
    }
  }
}

}  // namespace rpmf::testsupport
