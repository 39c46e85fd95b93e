#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedlith/core/error.hpp"

namespace fedlith::diag {

struct ConsensusError {
  std::vector<double> per_k;
  double max = 0.0;
};

/// per_k[k] = || mean_j(w^j) - w^k ||^2 over the clients' global blocks.
inline ConsensusError consensus_error(std::span<const std::vector<double>> blocks) {
  if (blocks.size() < 2) throw ConfigError("consensus error needs at least 2 clients");
  const std::size_t dim = blocks.front().size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& b : blocks) {
    if (b.size() != dim) throw ConfigError("consensus error: blocks differ in size");
    for (std::size_t i = 0; i < dim; ++i) mean[i] += b[i];
  }
  for (auto& m : mean) m /= static_cast<double>(blocks.size());
  ConsensusError out;
  for (const auto& b : blocks) {
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = mean[i] - b[i];
      s += d * d;
    }
    out.per_k.push_back(s);
    out.max = std::max(out.max, s);
  }
  return out;
}

struct ConsensusBound {
  double safe = 0.0;   // eta^2 E^2 G^2, the asserted form
  double tight = 0.0;  // eta^2 (E-1)^2 G^2, reported only
};

inline ConsensusBound consensus_bound(double eta, int e, double g_hat) {
  if (eta < 0.0 || e < 0 || g_hat < 0.0) throw ConfigError("consensus bound inputs must be >= 0");
  const double eg = eta * g_hat;
  const double em1 = e > 0 ? e - 1.0 : 0.0;
  return {eg * eg * e * e, eg * eg * em1 * em1};
}

/// Estimates of the smoothness constant L, the stochastic-gradient bound G,
/// the gradient variance sigma^2, and the optimum F*.
struct TheoryConstants {
  double l_hat = 0.0;
  double g_hat = 0.0;
  double sigma2_hat = 0.0;
  double f_star_hat = std::numeric_limits<double>::infinity();

  /// Folds another estimate in: maxima for L, G, sigma^2, minimum for F*.
  void merge(const TheoryConstants& o) {
    l_hat = std::max(l_hat, o.l_hat);
    g_hat = std::max(g_hat, o.g_hat);
    sigma2_hat = std::max(sigma2_hat, o.sigma2_hat);
    f_star_hat = std::min(f_star_hat, o.f_star_hat);
  }
};

/// Gradient evidence gathered at one client's round-start parameters.
struct GradientProbe {
  int client = 0;
  int round = 0;
  std::vector<double> point;
  std::vector<double> full_grad;
  double full_loss = 0.0;
  std::vector<std::vector<double>> batch_grads;
};

namespace detail {
inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}
inline double sq_norm(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return s;
}
}  // namespace detail

/// G_hat: largest observed stochastic (or full) gradient norm.
/// sigma2_hat: largest per-probe mean of ||g_batch - g_full||^2.
/// L_hat: largest secant ratio ||grad(v) - grad(w)|| / ||v - w|| between
///   consecutive probes of the same client; coincident points are skipped.
/// F_star_hat: smallest per-round mean of the probed full losses.
inline TheoryConstants estimate_constants(std::span<const GradientProbe> probes) {
  std::size_t grads = 0;
  for (const auto& p : probes) grads += 1 + p.batch_grads.size();
  if (grads < 2) throw ConfigError("estimate_constants needs at least 2 gradient samples");

  TheoryConstants c;
  std::map<int, std::pair<double, int>> round_loss;
  std::map<int, std::vector<const GradientProbe*>> by_client;
  for (const auto& p : probes) {
    c.g_hat = std::max(c.g_hat, std::sqrt(detail::sq_norm(p.full_grad)));
    if (!p.batch_grads.empty()) {
      double dev = 0.0;
      for (const auto& g : p.batch_grads) {
        c.g_hat = std::max(c.g_hat, std::sqrt(detail::sq_norm(g)));
        dev += detail::sq_dist(g, p.full_grad);
      }
      c.sigma2_hat = std::max(c.sigma2_hat, dev / static_cast<double>(p.batch_grads.size()));
    }
    auto& rl = round_loss[p.round];
    rl.first += p.full_loss;
    rl.second += 1;
    by_client[p.client].push_back(&p);
  }
  for (const auto& [round, acc] : round_loss) c.f_star_hat = std::min(c.f_star_hat, acc.first / acc.second);
  for (auto& [client, list] : by_client) {
    std::stable_sort(list.begin(), list.end(), [](auto* a, auto* b) { return a->round < b->round; });
    for (std::size_t i = 1; i < list.size(); ++i) {
      const double dw = std::sqrt(detail::sq_dist(list[i]->point, list[i - 1]->point));
      if (dw == 0.0) continue;
      const double dg = std::sqrt(detail::sq_dist(list[i]->full_grad, list[i - 1]->full_grad));
      c.l_hat = std::max(c.l_hat, dg / dw);
    }
  }
  return c;
}

/// Per-round summary the stationarity monitor needs.
struct RoundGradientStats {
  int round = 0;
  double mean_grad_sq = 0.0;  // (1/N) sum_k ||grad F_k(w_t^k)||^2, full shard
  double mean_loss = 0.0;     // (1/N) sum_k F_k(w_t^k)
  TheoryConstants constants;  // evidence contributed by this round
};

struct MonitorParams {
  double eta = 0.0;
  int e_global = 1;
  int n_clients = 1;
};

struct StationarityEntry {
  int round = 0;
  double lhs_running = 0.0;
  double optimization_term = 0.0;  // 2 [F_0 - F*] / (T eta)
  double step_term = 0.0;          // eta L G^2, modulo an absolute constant
  double drift_term = 0.0;         // 2 sqrt(N) (E - 1) G (sigma^2 + G^2)
  double rhs = 0.0;
  bool violation = false;
};

/// Running left-hand side (1/T) sum_t (1/N) sum_k ||grad F_k(w_t^k)||^2 against
/// the stationarity bound evaluated with `constants` and T = t + 1.
inline std::vector<StationarityEntry> stationarity_monitor(std::span<const RoundGradientStats> history,
                                                  const TheoryConstants& constants, const MonitorParams& p) {
  std::vector<StationarityEntry> out;
  if (history.empty()) return out;
  const double f0 = history.front().mean_loss;
  const double f_star = std::isfinite(constants.f_star_hat) ? constants.f_star_hat : f0;
  const double g = constants.g_hat;
  double sum = 0.0;
  for (std::size_t t = 0; t < history.size(); ++t) {
    sum += history[t].mean_grad_sq;
    const double T = static_cast<double>(t + 1);
    StationarityEntry e;
    e.round = history[t].round;
    e.lhs_running = sum / T;
    e.optimization_term = p.eta > 0.0 ? 2.0 * (f0 - f_star) / (T * p.eta) : std::numeric_limits<double>::infinity();
    e.step_term = p.eta * constants.l_hat * g * g;
    e.drift_term = 2.0 * std::sqrt(static_cast<double>(p.n_clients)) * std::max(0, p.e_global - 1) * g *
                   (constants.sigma2_hat + g * g);
    e.rhs = e.optimization_term + e.step_term + e.drift_term;
    e.violation = e.lhs_running > e.rhs;
    out.push_back(e);
  }
  return out;
}

inline nlohmann::json to_json(const TheoryConstants& c) {
  return {{"l_hat", c.l_hat},
          {"g_hat", c.g_hat},
          {"sigma2_hat", c.sigma2_hat},
          {"f_star_hat", std::isfinite(c.f_star_hat) ? nlohmann::json(c.f_star_hat) : nlohmann::json(nullptr)}};
}

inline TheoryConstants constants_from_json(const nlohmann::json& j) {
  TheoryConstants c;
  c.l_hat = j.at("l_hat").get<double>();
  c.g_hat = j.at("g_hat").get<double>();
  c.sigma2_hat = j.at("sigma2_hat").get<double>();
  if (!j.at("f_star_hat").is_null()) c.f_star_hat = j.at("f_star_hat").get<double>();
  return c;
}

}  // namespace fedlith::diag
