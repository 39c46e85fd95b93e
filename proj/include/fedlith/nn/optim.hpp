#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedlith/core/error.hpp"
#include "fedlith/nn/partition.hpp"

namespace fedlith::nn {

namespace detail {
inline void require_rate(double eta) {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("learning rate must be positive and finite");
}
inline void require_same_size(std::size_t a, std::size_t b) {
  if (a != b) throw ConfigError("size mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
}
}  // namespace detail

/// params -= eta * gradient, in place. Entries with zero gradient are left
/// untouched, so block-restricted gradients only move their block.
inline void sgd_step(std::span<double> params, std::span<const double> gradient, double eta) {
  detail::require_rate(eta);
  detail::require_same_size(params.size(), gradient.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (gradient[i] != 0.0) params[i] -= eta * gradient[i];
  }
  if (!all_finite(params)) throw NumericError("non-finite parameters after SGD step");
}

inline ParamVector sgd_step(ParamVector params, const ParamVector& gradient, double eta) {
  sgd_step(params.span(), gradient.span(), eta);
  return params;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates. `steps` counts updates per coordinate so a
/// block that was idle does not get a stale bias correction.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::vector<std::uint32_t> steps;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0), steps(n, 0) {}
  std::size_t size() const noexcept { return m.size(); }
};

/// One bias-corrected Adam update restricted to `block`. Coordinates outside
/// the block keep both their value and their moment state.
inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> gradient, double eta,
                      const AdamConfig& cfg, const BlockPartition& partition, Block block) {
  detail::require_rate(eta);
  detail::require_same_size(params.size(), gradient.size());
  detail::require_same_size(params.size(), state.size());
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0 || !(cfg.epsilon > 0.0))
    throw ConfigError("adam: betas must be in [0,1) and epsilon positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!partition.contains(block, i)) continue;
    const double g = gradient[i];
    const std::uint32_t t = ++state.steps[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / (1.0 - std::pow(cfg.beta1, t));
    const double vhat = state.v[i] / (1.0 - std::pow(cfg.beta2, t));
    params[i] -= eta * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
  if (!all_finite(params)) throw NumericError("non-finite parameters after Adam step");
}

inline std::pair<AdamState, ParamVector> adam_step(AdamState state, ParamVector params, const ParamVector& gradient,
                                                   double eta, const AdamConfig& cfg, Block block = Block::Full) {
  const BlockPartition full = params.partition ? *params.partition : BlockPartition::all_global(params.size());
  adam_step(state, params.span(), gradient.span(), eta, cfg, full, block);
  return {std::move(state), std::move(params)};
}

/// Adds lambda * w to `grad` on the entries of `block`: the gradient of the
/// smooth penalty (lambda / 2) * ||w||^2.
inline void add_l2_penalty_gradient(std::span<const double> params, double lambda, std::span<double> grad,
                                    const BlockPartition& partition, Block block) {
  if (lambda < 0.0) throw ConfigError("l2 penalty must be >= 0");
  if (lambda == 0.0) return;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (partition.contains(block, i)) grad[i] += lambda * params[i];
}

inline std::vector<double> l2_penalty_gradient(std::span<const double> params, double lambda) {
  if (lambda < 0.0) throw ConfigError("l2 penalty must be >= 0");
  std::vector<double> g(params.size(), 0.0);
  if (lambda == 0.0) return g;
  for (std::size_t i = 0; i < params.size(); ++i) g[i] = lambda * params[i];
  return g;
}

inline double l2_penalty(std::span<const double> params, double lambda) {
  if (lambda == 0.0) return 0.0;
  double s = 0.0;
  for (double w : params) s += w * w;
  return 0.5 * lambda * s;
}

}  // namespace fedlith::nn
