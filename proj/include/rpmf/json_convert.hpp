#pragma once

#include <json.hpp>

#include "rpmf/model.hpp"
#include "rpmf/sampling.hpp"

// JSON forms shared by the dataset cache, checkpoints, and run manifests.

namespace rpmf {

inline nlohmann::json to_json(const NormStats& s) {
  nlohmann::json pv = nlohmann::json::array();
  for (const auto& [m, sd] : s.per_variable) pv.push_back(nlohmann::json::array({m, sd}));
  nlohmann::json ps = nlohmann::json::array();
  for (const auto& [m, sd] : s.per_static) ps.push_back(nlohmann::json::array({m, sd}));
  return {{"per_variable", pv}, {"per_static", ps}, {"time_scale_days", s.time_scale_days}};
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats s;
  s.per_variable.clear();
  for (const auto& row : j.at("per_variable")) {
    s.per_variable.emplace_back(row.at(0).get<double>(), row.at(1).get<double>());
  }
  const auto& ps = j.at("per_static");
  for (size_t i = 0; i < 3; ++i) {
    s.per_static[i] = {ps.at(i).at(0).get<double>(), ps.at(i).at(1).get<double>()};
  }
  s.time_scale_days = j.at("time_scale_days").get<double>();
  return s;
}

inline nlohmann::json to_json(const WindowSpec& w) {
  return {{"min_history_days", w.min_history_days},
          {"horizon_days", w.horizon_days},
          {"stride_days", w.stride_days},
          {"max_tokens", w.max_tokens}};
}

inline WindowSpec window_spec_from_json(const nlohmann::json& j) {
  WindowSpec w;
  w.min_history_days = j.at("min_history_days").get<double>();
  w.horizon_days = j.at("horizon_days").get<double>();
  w.stride_days = j.at("stride_days").get<double>();
  w.max_tokens = j.at("max_tokens").get<int>();
  return w;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"n_blocks", c.n_blocks},
          {"n_heads", c.n_heads},
          {"ffn_mult", c.ffn_mult},
          {"dropout", c.dropout},
          {"cve_hidden", c.cve_hidden},
          {"static_hidden", c.static_hidden},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"pos_weight", c.pos_weight},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_blocks = j.at("n_blocks").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.cve_hidden = j.at("cve_hidden").get<int>();
  c.static_hidden = j.at("static_hidden").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.lr = j.at("lr").get<double>();
  c.pos_weight = j.at("pos_weight").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

}  // namespace rpmf
