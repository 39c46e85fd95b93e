#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedlith/core/error.hpp"
#include "fedlith/core/rng.hpp"
#include "fedlith/data/dataset.hpp"
#include "fedlith/fed/client.hpp"
#include "fedlith/fed/objective.hpp"
#include "fedlith/fed/simulation.hpp"
#include "fedlith/metrics/metrics.hpp"
#include "fedlith/nn/model.hpp"
#include "fedlith/select/group_lasso.hpp"

namespace fedlith::select {

enum class SelectionMode { Centralized, Federated };

inline const char* to_string(SelectionMode m) { return m == SelectionMode::Centralized ? "centralized" : "federated"; }

inline SelectionMode parse_selection_mode(const std::string& s) {
  if (s == "centralized") return SelectionMode::Centralized;
  if (s == "federated") return SelectionMode::Federated;
  throw ConfigError("selection_mode: unknown value '" + s + "' (expected centralized, federated)");
}

/// Optimizer schedule of one centralized training run.
struct TrainSchedule {
  int steps = 600;
  double eta = 0.01;
  std::size_t batch = 32;
  fed::Optimizer optimizer = fed::Optimizer::Adam;
  double l2 = 1e-5;
  double prox_lambda = 0.0;  // group-lasso strength applied as a proximal step
};

/// Trains `model` from `w0` on the given sample indices. A positive
/// prox_lambda follows every step with the group soft-threshold of the first
/// convolution, which yields exact zeros for pruned channels.
inline std::vector<double> train_centralized(const nn::ModelLayout& model, const data::Dataset& data,
                                             std::vector<std::size_t> indices, std::vector<double> w0,
                                             const TrainSchedule& s, RngStream rng) {
  if (s.steps < 0) throw ConfigError("steps must be >= 0");
  if (s.prox_lambda < 0.0) throw ConfigError("lambda_gl must be >= 0");
  const fed::NeuralObjective obj(model, data, std::move(indices), s.l2);
  fed::BatchSampler sampler(obj.num_samples(), s.batch, rng.child("batches"));
  nn::AdamState adam(s.optimizer == fed::Optimizer::Adam ? w0.size() : 0);
  std::vector<double> g(w0.size());
  const auto& part = model.partition();
  const auto& conv = model.layers()[static_cast<std::size_t>(model.first_conv())];
  for (int i = 0; i < s.steps; ++i) {
    obj.loss_and_gradient(w0, sampler.next(), nn::Block::Full, g);
    if (s.optimizer == fed::Optimizer::Sgd)
      nn::sgd_step(w0, g, s.eta);
    else
      nn::adam_step(adam, w0, g, s.eta, {}, part, nn::Block::Full);
    if (s.prox_lambda > 0.0)
      group_soft_threshold(std::span<double>(w0).subspan(conv.param_offset, conv.weight_count), conv.spec.filters,
                           conv.spec.kernel_h, conv.spec.kernel_w, conv.in.c, s.eta * s.prox_lambda);
  }
  return w0;
}

struct SelectionConfig {
  SelectionMode mode = SelectionMode::Centralized;
  double lambda_gl = 1e-3;
  int k = 0;                     // 0 picks k with the knee rule
  std::vector<int> k_grid;       // candidates for the knee rule; empty means 1..C
  double knee_tolerance = 0.005; // accuracy slack against the full-channel model
  double val_fraction = 0.2;     // held-out share of the training set for the knee rule
  TrainSchedule selection{};     // group-lasso training
  TrainSchedule retrain{};       // from-scratch training of masked models
  int n_clients = 4;             // federated mode only
  int rounds = 10;               // federated mode only
  double skew = 1.0;             // federated mode only
  std::uint64_t seed = 1;
};

struct KneePoint {
  int k = 0;
  double val_accuracy = 0.0;
};

struct SelectionReport {
  SelectionMode mode = SelectionMode::Centralized;
  double lambda_gl = 0.0;
  ChannelNorms norms;
  ChannelMask mask;
  int channels = 0;
  bool k_from_knee = false;
  std::vector<KneePoint> sweep;
  double full_val_accuracy = 0.0;
  metrics::ConfusionCounts full_test;      // all channels, retrained from scratch
  metrics::ConfusionCounts selected_test;  // top-k channels, retrained from scratch
  std::size_t full_macs = 0;
  std::size_t selected_macs = 0;
  std::size_t full_first_layer_macs = 0;
  std::size_t selected_first_layer_macs = 0;
};

inline std::size_t first_layer_macs(const nn::ModelLayout& m) {
  const auto& l = m.layers()[static_cast<std::size_t>(m.first_conv())];
  return static_cast<std::size_t>(l.out.h) * l.out.w * l.out.c * l.spec.kernel_h * l.spec.kernel_w * l.in.c;
}

namespace detail {

// Deterministic split of [0, n) into a training part and a validation part.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout(std::size_t n, double fraction,
                                                                             RngStream rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  const auto nv = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nv));
  std::vector<std::size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(nv), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {tr, val};
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace detail

/// Trains a model restricted to `mask` from scratch and returns it with its
/// layout. `spec` is the full-channel model.
struct MaskedModel {
  nn::ModelLayout layout;
  std::vector<double> params;
};

inline MaskedModel retrain_masked(const nn::ModelSpec& spec, const data::Dataset& masked_train,
                                  std::vector<std::size_t> indices, const TrainSchedule& s, std::uint64_t seed) {
  nn::ModelLayout layout(nn::with_input_channels(spec, masked_train.channels));
  auto w0 = layout.init_params(RngStream(seed, "init"));
  auto w = train_centralized(layout, masked_train, std::move(indices), std::move(w0), s, RngStream(seed, "retrain"));
  return {std::move(layout), std::move(w)};
}

/// Group-lasso training on all channels. Centralized mode trains one model on
/// the pooled training split; federated mode runs FedAvg with the group-lasso
/// subgradient on a non-IID partition. Either way the result is one shared
/// first layer.
inline std::vector<double> train_with_group_lasso(const nn::ModelSpec& spec, const data::Dataset& train,
                                                  const std::vector<std::size_t>& indices, const SelectionConfig& cfg) {
  const nn::ModelLayout layout(nn::with_all_global(spec));
  auto w0 = layout.init_params(RngStream(cfg.seed, "init"));
  if (cfg.mode == SelectionMode::Centralized) {
    auto s = cfg.selection;
    s.prox_lambda = cfg.lambda_gl;
    return train_centralized(layout, train, indices, std::move(w0), s, RngStream(cfg.seed, "select-train"));
  }
  std::vector<int> fams;
  for (auto i : indices) fams.push_back(train.families[i]);
  const int n_fam = fams.empty() ? 1 : *std::max_element(fams.begin(), fams.end()) + 1;
  const auto part = data::partition_noniid(fams, n_fam, cfg.n_clients, cfg.skew, RngStream(cfg.seed, "select-partition"));
  std::vector<fed::NeuralObjective> objs;
  for (const auto& sh : part.shards) {
    std::vector<std::size_t> mapped;
    for (auto p : sh.indices) mapped.push_back(indices[p]);
    objs.emplace_back(layout, train, std::move(mapped), cfg.selection.l2, cfg.lambda_gl);
  }
  fed::SimulationOptions o;
  o.algorithm = fed::AlgorithmKind::FedAvg;
  o.seed = cfg.seed;
  o.diagnostics = false;
  o.plan.e_local = 0;
  o.plan.e_global = std::max(1, cfg.selection.steps / std::max(1, cfg.rounds));
  o.plan.eta = cfg.selection.eta;
  o.plan.batch = cfg.selection.batch;
  o.plan.optimizer = cfg.selection.optimizer;
  fed::Simulation<fed::NeuralObjective> sim(o, std::move(objs), std::move(w0));
  sim.run(cfg.rounds);
  return sim.server().w_g;
}

/// Train with the group-lasso penalty, rank first-layer channels by group
/// norm, pick k (explicit or knee rule on a held-out validation part), then
/// retrain from scratch on the top-k channels.
inline SelectionReport run_selection_pipeline(const nn::ModelSpec& spec, const data::Dataset& train,
                                              const data::Dataset& test, const SelectionConfig& cfg) {
  if (train.size() == 0 || test.size() == 0) throw ConfigError("feature selection needs nonempty train and test data");
  if (spec.input.c != train.channels) throw ConfigError("model input channels do not match the dataset");
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) throw ConfigError("val_fraction must be in (0, 1)");
  const int C = train.channels;
  if (cfg.k < 0 || cfg.k > C) throw ConfigError("k must be in [1, " + std::to_string(C) + "] or 0 for the knee rule");

  SelectionReport rep;
  rep.mode = cfg.mode;
  rep.lambda_gl = cfg.lambda_gl;
  rep.channels = C;

  const auto [fit, val] = detail::holdout(train.size(), cfg.val_fraction, RngStream(cfg.seed, "holdout"));
  const nn::ModelLayout full_layout(nn::with_all_global(spec));
  const auto w_gl = train_with_group_lasso(spec, train, fit, cfg);
  rep.norms = group_norms(first_conv_weights(full_layout, w_gl));

  const auto full = retrain_masked(nn::with_all_global(spec), train, fit, cfg.retrain, cfg.seed);
  rep.full_val_accuracy = metrics::accuracy(fed::evaluate(full.layout, full.params, train, val));

  int k = cfg.k;
  if (k == 0) {
    rep.k_from_knee = true;
    std::vector<int> grid = cfg.k_grid;
    if (grid.empty())
      for (int c = 1; c <= C; ++c) grid.push_back(c);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    for (int cand : grid)
      if (cand < 1 || cand > C) throw ConfigError("k_grid entry " + std::to_string(cand) + " out of range");
    k = C;
    for (int cand : grid) {
      const auto mask = select_topk(rep.norms, cand);
      const auto masked = data::restrict_channels(train, mask.selected);
      const auto m = retrain_masked(nn::with_all_global(spec), masked, fit, cfg.retrain, cfg.seed);
      const double acc = metrics::accuracy(fed::evaluate(m.layout, m.params, masked, val));
      rep.sweep.push_back({cand, acc});
      if (acc >= rep.full_val_accuracy - cfg.knee_tolerance) {
        k = cand;
        break;
      }
    }
  }
  rep.mask = select_topk(rep.norms, k);

  // Final models use the whole training split.
  const auto all_train = detail::all_indices(train.size());
  const auto all_test = detail::all_indices(test.size());
  const auto full_final = retrain_masked(nn::with_all_global(spec), train, all_train, cfg.retrain, cfg.seed);
  rep.full_test = fed::evaluate(full_final.layout, full_final.params, test, all_test);
  const auto masked_train = data::restrict_channels(train, rep.mask.selected);
  const auto masked_test = data::restrict_channels(test, rep.mask.selected);
  const auto sel_final = retrain_masked(nn::with_all_global(spec), masked_train, all_train, cfg.retrain, cfg.seed);
  rep.selected_test = fed::evaluate(sel_final.layout, sel_final.params, masked_test, all_test);
  rep.full_macs = full_final.layout.forward_macs();
  rep.selected_macs = sel_final.layout.forward_macs();
  rep.full_first_layer_macs = first_layer_macs(full_final.layout);
  rep.selected_first_layer_macs = first_layer_macs(sel_final.layout);
  return rep;
}

inline nlohmann::json to_json(const SelectionReport& r) {
  nlohmann::json sweep = nlohmann::json::array();
  for (const auto& p : r.sweep) sweep.push_back({{"k", p.k}, {"val_accuracy", p.val_accuracy}});
  return {{"mode", to_string(r.mode)},
          {"lambda_gl", r.lambda_gl},
          {"channels", r.channels},
          {"norms", r.norms},
          {"selected", r.mask.selected},
          {"k", r.mask.k()},
          {"k_from_knee", r.k_from_knee},
          {"knee_sweep", sweep},
          {"full_val_accuracy", r.full_val_accuracy},
          {"full", {{"counts", metrics::to_json(r.full_test)}, {"accuracy", metrics::accuracy(r.full_test)}}},
          {"selected_model",
           {{"counts", metrics::to_json(r.selected_test)}, {"accuracy", metrics::accuracy(r.selected_test)}}},
          {"macs", {{"full", r.full_macs}, {"selected", r.selected_macs}}},
          {"first_layer_macs", {{"full", r.full_first_layer_macs}, {"selected", r.selected_first_layer_macs}}}};
}

/// Synthetic check data for channel recovery: channels [0, informative) each
/// carry an independent latent z_c (plus noise) in every cell, the rest are
/// pure noise, and the label is [sum_c z_c > 0].
inline data::Dataset planted_channels_dataset(std::size_t n, int grid, int channels, int informative, double noise,
                                              RngStream rng) {
  if (informative < 1 || informative > channels) throw ConfigError("informative channels must be in [1, channels]");
  if (grid < 1 || channels < 1 || n == 0) throw ConfigError("planted dataset needs positive sizes");
  data::Dataset d;
  d.grid = grid;
  d.channels = channels;
  d.dim = static_cast<std::size_t>(grid) * grid * channels;
  d.features.resize(n * d.dim);
  std::vector<double> z(static_cast<std::size_t>(informative));
  for (std::size_t i = 0; i < n; ++i) {
    auto r = rng.child("sample", {i});
    double s = 0.0;
    for (auto& v : z) {
      v = r.normal();
      s += v;
    }
    for (int cell = 0; cell < grid * grid; ++cell)
      for (int c = 0; c < channels; ++c) {
        const double x = c < informative ? z[static_cast<std::size_t>(c)] + noise * r.normal() : r.normal();
        d.features[i * d.dim + static_cast<std::size_t>(cell) * channels + c] = x;
      }
    d.labels.push_back(s > 0.0 ? 1 : 0);
    d.families.push_back(0);
  }
  return d;
}

}  // namespace fedlith::select
