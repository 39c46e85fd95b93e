#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedlith/core/error.hpp"
#include "fedlith/data/dataset.hpp"
#include "fedlith/data/dataset_io.hpp"
#include "fedlith/fed/types.hpp"
#include "fedlith/nn/model.hpp"

namespace fedlith::harness {

using nlohmann::json;

/// Everything one experiment needs. Defaults are the `desk` preset.
struct ExperimentConfig {
  std::string preset = "desk";
  fed::AlgorithmKind algorithm = fed::AlgorithmKind::HflLa;
  int n_clients = 10;
  int rounds = 30;
  double skew = 1.0;
  std::uint64_t seed = 1;
  fed::RoundPlan plan;
  fed::LatencyModel latency;
  double l2 = 1e-5;
  double lambda_gl = 0.0;
  std::string model = "desk";
  std::optional<json> model_spec;  // explicit layer list, overrides `model`
  data::DatasetConfig dataset;
  std::string dataset_dir;   // load instead of generating when set
  std::string feature_mask;  // mask JSON restricting input channels
  int threads = 1;
  bool diagnostics = true;
  int probe_batches = 2;
  std::vector<fed::AlgorithmKind> grid_algorithms;
  std::vector<int> grid_clients;
};

/// Desk preset: 1/10-scale data, 30 rounds, 15:45 iterations per round.
inline void apply_desk(ExperimentConfig& c) {
  c.preset = "desk";
  c.rounds = 30;
  c.plan.batch = 32;
  c.plan.e_local = 15;
  c.plan.e_global = 45;
  c.plan.eta = 0.01;
  c.plan.optimizer = fed::Optimizer::Adam;
  c.dataset = data::DatasetConfig{};
}

/// Full-size schedule and data: T=50, eta=0.001, batch 64, 500:1500.
inline void apply_paper_scale(ExperimentConfig& c) {
  c.preset = "paper-scale";
  c.rounds = 50;
  c.plan.batch = 64;
  c.plan.e_local = 500;
  c.plan.e_global = 1500;
  c.plan.eta = 0.001;
  c.plan.optimizer = fed::Optimizer::Adam;
  c.dataset = data::DatasetConfig{};
  c.dataset.train_hotspots = 1204;
  c.dataset.train_non_hotspots = 17096;
  c.dataset.test_hotspots = 2524;
  c.dataset.test_non_hotspots = 13503;
}

inline ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  if (name == "desk")
    apply_desk(c);
  else if (name == "paper-scale")
    apply_paper_scale(c);
  else
    throw ConfigError("preset: unknown value '" + name + "' (expected desk, paper-scale)");
  return c;
}

namespace detail {

template <class T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(key + ": wrong type (got " + std::string(j.type_name()) + ")");
  }
}

inline void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& prefix) {
  if (!obj.is_object()) throw ConfigError((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
  for (const auto& [key, _] : obj.items())
    if (!known.count(key)) throw ConfigError("unknown config key '" + prefix + key + "'");
}

inline fed::Mode parse_mode(const std::string& s) {
  if (s == "sync") return fed::Mode::Sync;
  if (s == "async") return fed::Mode::Async;
  throw ConfigError("mode: unknown value '" + s + "' (expected sync, async)");
}

inline fed::Selection parse_selection(const std::string& s) {
  if (s == "first_k") return fed::Selection::FirstK;
  if (s == "random_k") return fed::Selection::RandomK;
  throw ConfigError("selection: unknown value '" + s + "' (expected first_k, random_k)");
}

inline fed::Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return fed::Optimizer::Sgd;
  if (s == "adam") return fed::Optimizer::Adam;
  throw ConfigError("optimizer: unknown value '" + s + "' (expected sgd, adam)");
}

inline double parse_timeout(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  return get_as<double>(j, "latency.timeout");
}

}  // namespace detail

/// Checks ranges and cross-field constraints. Messages name the key.
inline void validate(const ExperimentConfig& c) {
  if (c.n_clients < 1) throw ConfigError("n_clients: must be >= 1");
  if (c.rounds < 0) throw ConfigError("rounds: must be >= 0");
  if (!(c.skew >= 0.0 && c.skew <= 1.0)) throw ConfigError("skew: must be in [0, 1]");
  if (!(c.plan.eta > 0.0) || !std::isfinite(c.plan.eta)) throw ConfigError("eta: must be > 0");
  if (c.plan.e_local < 0) throw ConfigError("e_local: must be >= 0");
  if (c.plan.e_global < 0) throw ConfigError("e_global: must be >= 0");
  if (c.plan.batch < 1) throw ConfigError("batch: must be >= 1");
  if (c.plan.mu_prox < 0.0) throw ConfigError("mu_prox: must be >= 0");
  if (c.l2 < 0.0) throw ConfigError("l2: must be >= 0");
  if (c.lambda_gl < 0.0) throw ConfigError("lambda_gl: must be >= 0");
  if (c.threads < 1) throw ConfigError("threads: must be >= 1");
  if (c.probe_batches < 1) throw ConfigError("probe_batches: must be >= 1");
  if (!(c.latency.sigma >= 0.0) || !std::isfinite(c.latency.mu)) throw ConfigError("latency.sigma: must be >= 0");
  if (!(c.latency.timeout > 0.0)) throw ConfigError("latency.timeout: must be > 0");
  if (c.plan.mode == fed::Mode::Async) {
    if (c.plan.k_responders < 1 || c.plan.k_responders > c.n_clients)
      throw ConfigError("k_responders: must be in [1, n_clients] in async mode");
    if (c.algorithm == fed::AlgorithmKind::Centralized || c.algorithm == fed::AlgorithmKind::LocalOnly)
      throw ConfigError("mode: async applies only to aggregating algorithms");
  }
  const auto& d = c.dataset;
  if (d.families < 1) throw ConfigError("dataset.families: must be >= 1");
  if (d.families > 255) throw ConfigError("dataset.families: must be <= 255");
  if (d.grid < 1 || d.clip_size % d.grid != 0) throw ConfigError("dataset.grid: must divide dataset.clip_size");
  if (d.clip_size / d.grid < 1) throw ConfigError("dataset.grid: too fine for the clip size");
  if (d.channels < 1 || d.channels > (d.clip_size / d.grid) * (d.clip_size / d.grid))
    throw ConfigError("dataset.channels: must be in [1, block_pixels^2]");
  if (d.train_hotspots + d.train_non_hotspots < 1) throw ConfigError("dataset: training split is empty");
  if (d.test_hotspots + d.test_non_hotspots < 1) throw ConfigError("dataset: test split is empty");
  for (int n : c.grid_clients)
    if (n < 1) throw ConfigError("grid.n_clients: entries must be >= 1");
}

/// Parses a JSON config on top of its preset (the `preset` key, default
/// desk). Unknown keys are rejected by name.
inline ExperimentConfig config_from_json(const json& j) {
  using detail::get_as;
  static const std::set<std::string> known{
      "preset",      "algorithm",     "n_clients",    "k_responders", "rounds",       "eta",
      "e_local",     "e_global",      "batch",        "skew",         "seed",         "mu_prox",
      "selection",   "mode",          "latency",      "optimizer",    "adam",         "l2",
      "lambda_gl",   "model",         "model_spec",   "dataset",      "dataset_dir",  "feature_mask",
      "threads",     "diagnostics",   "probe_batches", "fixed_batch_inner", "grid"};
  detail::reject_unknown(j, known, "");
  ExperimentConfig c = preset_config(j.contains("preset") ? get_as<std::string>(j.at("preset"), "preset") : "desk");
  bool k_given = false;
  for (const auto& [key, v] : j.items()) {
    if (key == "preset") continue;
    else if (key == "algorithm") c.algorithm = fed::parse_algorithm(get_as<std::string>(v, key));
    else if (key == "n_clients") c.n_clients = get_as<int>(v, key);
    else if (key == "k_responders") { c.plan.k_responders = get_as<int>(v, key); k_given = true; }
    else if (key == "rounds") c.rounds = get_as<int>(v, key);
    else if (key == "eta") c.plan.eta = get_as<double>(v, key);
    else if (key == "e_local") c.plan.e_local = get_as<int>(v, key);
    else if (key == "e_global") c.plan.e_global = get_as<int>(v, key);
    else if (key == "batch") {
      const auto b = get_as<long long>(v, key);
      if (b < 1) throw ConfigError("batch: must be >= 1");
      c.plan.batch = static_cast<std::size_t>(b);
    }
    else if (key == "skew") c.skew = get_as<double>(v, key);
    else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
    else if (key == "mu_prox") c.plan.mu_prox = get_as<double>(v, key);
    else if (key == "selection") c.plan.selection = detail::parse_selection(get_as<std::string>(v, key));
    else if (key == "mode") c.plan.mode = detail::parse_mode(get_as<std::string>(v, key));
    else if (key == "optimizer") c.plan.optimizer = detail::parse_optimizer(get_as<std::string>(v, key));
    else if (key == "fixed_batch_inner") c.plan.fixed_batch_inner = get_as<bool>(v, key);
    else if (key == "l2") c.l2 = get_as<double>(v, key);
    else if (key == "lambda_gl") c.lambda_gl = get_as<double>(v, key);
    else if (key == "model") c.model = get_as<std::string>(v, key);
    else if (key == "model_spec") c.model_spec = v;
    else if (key == "dataset_dir") c.dataset_dir = get_as<std::string>(v, key);
    else if (key == "feature_mask") c.feature_mask = get_as<std::string>(v, key);
    else if (key == "threads") c.threads = get_as<int>(v, key);
    else if (key == "diagnostics") c.diagnostics = get_as<bool>(v, key);
    else if (key == "probe_batches") c.probe_batches = get_as<int>(v, key);
    else if (key == "latency") {
      detail::reject_unknown(v, {"mu", "sigma", "timeout"}, "latency.");
      if (v.contains("mu")) c.latency.mu = get_as<double>(v.at("mu"), "latency.mu");
      if (v.contains("sigma")) c.latency.sigma = get_as<double>(v.at("sigma"), "latency.sigma");
      if (v.contains("timeout")) c.latency.timeout = detail::parse_timeout(v.at("timeout"));
    } else if (key == "adam") {
      detail::reject_unknown(v, {"beta1", "beta2", "epsilon"}, "adam.");
      if (v.contains("beta1")) c.plan.adam.beta1 = get_as<double>(v.at("beta1"), "adam.beta1");
      if (v.contains("beta2")) c.plan.adam.beta2 = get_as<double>(v.at("beta2"), "adam.beta2");
      if (v.contains("epsilon")) c.plan.adam.epsilon = get_as<double>(v.at("epsilon"), "adam.epsilon");
    } else if (key == "dataset") {
      detail::reject_unknown(v,
                             {"clip_size", "grid", "channels", "families", "train_hotspots", "train_non_hotspots",
                              "test_hotspots", "test_non_hotspots", "seed"},
                             "dataset.");
      auto& d = c.dataset;
      for (const auto& [dk, dv] : v.items()) {
        const std::string name = "dataset." + dk;
        if (dk == "clip_size") d.clip_size = get_as<int>(dv, name);
        else if (dk == "grid") d.grid = get_as<int>(dv, name);
        else if (dk == "channels") d.channels = get_as<int>(dv, name);
        else if (dk == "families") d.families = get_as<int>(dv, name);
        else if (dk == "train_hotspots") d.train_hotspots = get_as<int>(dv, name);
        else if (dk == "train_non_hotspots") d.train_non_hotspots = get_as<int>(dv, name);
        else if (dk == "test_hotspots") d.test_hotspots = get_as<int>(dv, name);
        else if (dk == "test_non_hotspots") d.test_non_hotspots = get_as<int>(dv, name);
        else if (dk == "seed") d.seed = get_as<std::uint64_t>(dv, name);
      }
    } else if (key == "grid") {
      detail::reject_unknown(v, {"algorithms", "n_clients"}, "grid.");
      if (v.contains("algorithms"))
        for (const auto& a : v.at("algorithms")) c.grid_algorithms.push_back(fed::parse_algorithm(get_as<std::string>(a, "grid.algorithms")));
      if (v.contains("n_clients")) c.grid_clients = get_as<std::vector<int>>(v.at("n_clients"), "grid.n_clients");
    }
  }
  if (c.plan.mode == fed::Mode::Async && !k_given) c.plan.k_responders = std::max(1, c.n_clients / 2);
  validate(c);
  return c;
}

/// FEDLITH_SEED, when set, replaces the configured seed.
inline void apply_env_overrides(ExperimentConfig& c) {
  if (const char* s = std::getenv("FEDLITH_SEED"); s && *s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (*end != '\0') throw ConfigError("FEDLITH_SEED: not an unsigned integer: '" + std::string(s) + "'");
    c.seed = v;
  }
}

/// Snapshot of the resolved config. Thread count is excluded: it never
/// changes results.
inline json to_json(const ExperimentConfig& c) {
  json j{{"preset", c.preset},
         {"algorithm", fed::to_string(c.algorithm)},
         {"n_clients", c.n_clients},
         {"k_responders", c.plan.k_responders},
         {"rounds", c.rounds},
         {"eta", c.plan.eta},
         {"e_local", c.plan.e_local},
         {"e_global", c.plan.e_global},
         {"batch", c.plan.batch},
         {"skew", c.skew},
         {"seed", c.seed},
         {"mu_prox", c.plan.mu_prox},
         {"selection", fed::to_string(c.plan.selection)},
         {"mode", fed::to_string(c.plan.mode)},
         {"optimizer", fed::to_string(c.plan.optimizer)},
         {"adam", {{"beta1", c.plan.adam.beta1}, {"beta2", c.plan.adam.beta2}, {"epsilon", c.plan.adam.epsilon}}},
         {"fixed_batch_inner", c.plan.fixed_batch_inner},
         {"latency",
          {{"mu", c.latency.mu},
           {"sigma", c.latency.sigma},
           {"timeout", std::isfinite(c.latency.timeout) ? json(c.latency.timeout) : json(nullptr)}}},
         {"l2", c.l2},
         {"lambda_gl", c.lambda_gl},
         {"model", c.model},
         {"dataset", data::to_json(c.dataset)},
         {"diagnostics", c.diagnostics},
         {"probe_batches", c.probe_batches}};
  if (c.model_spec) j["model_spec"] = *c.model_spec;
  if (!c.dataset_dir.empty()) j["dataset_dir"] = c.dataset_dir;
  if (!c.feature_mask.empty()) j["feature_mask"] = c.feature_mask;
  if (!c.grid_algorithms.empty() || !c.grid_clients.empty()) {
    json algs = json::array();
    for (auto a : c.grid_algorithms) algs.push_back(fed::to_string(a));
    j["grid"] = {{"algorithms", algs}, {"n_clients", c.grid_clients}};
  }
  return j;
}

/// The model the config describes, before any channel mask is applied.
inline nn::ModelSpec resolve_model(const ExperimentConfig& c) {
  nn::ModelSpec m = c.model_spec ? nn::model_from_json(*c.model_spec)
                                 : nn::model_preset(c.model, c.dataset.grid, c.dataset.channels);
  if (m.input.h != c.dataset.grid || m.input.w != c.dataset.grid || m.input.c != c.dataset.channels)
    throw ConfigError("model_spec.input_shape: does not match dataset grid and channels");
  // Baselines share the whole model.
  if (c.algorithm != fed::AlgorithmKind::HflLa && c.algorithm != fed::AlgorithmKind::LocalOnly)
    m = nn::with_all_global(std::move(m));
  return m;
}

}  // namespace fedlith::harness
