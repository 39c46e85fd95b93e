#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "fedlith/core/rng.hpp"
#include "fedlith/fed/objective.hpp"
#include "fedlith/fed/types.hpp"
#include "fedlith/nn/optim.hpp"

namespace fedlith::fed {

/// Walks a shuffled pass over the shard in batches of B; the last batch of a
/// pass may be short. A new shuffle starts when a pass is exhausted.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, RngStream rng) : n_(n), batch_(std::min(batch, n)), rng_(rng) {
    if (n == 0) throw ConfigError("cannot sample batches from an empty shard");
    order_.resize(n);
  }

  std::vector<std::size_t> next() {
    if (pos_ == 0) {
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      if (batch_ < n_) rng_.shuffle(order_);
    }
    const std::size_t end = std::min(n_, pos_ + batch_);
    std::vector<std::size_t> b(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                               order_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end == n_ ? 0 : end;
    return b;
  }

 private:
  std::size_t n_, batch_;
  RngStream rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// Side information recorded by one client update.
struct UpdateTrace {
  double max_grad_norm = 0.0;  // over full-model stochastic gradients
  std::optional<double> local_first_loss, local_last_loss;
  std::optional<double> global_first_loss, global_last_loss;
  int steps = 0;
};

namespace detail {

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Runs `steps` optimizer iterations on `block`, optionally with a proximal
// pull toward `anchor`.
template <Objective O>
void run_phase(const O& obj, std::vector<double>& w, nn::Block block, int steps, const RoundPlan& plan,
               BatchSampler& sampler, const std::vector<std::size_t>* fixed_batch, nn::AdamState* adam,
               const std::vector<double>* anchor, UpdateTrace* trace) {
  std::vector<double> g(w.size());
  const auto& part = obj.partition();
  for (int i = 0; i < steps; ++i) {
    std::vector<std::size_t> fresh;
    if (!fixed_batch) fresh = sampler.next();
    const auto& batch = fixed_batch ? *fixed_batch : fresh;
    const double loss = obj.loss_and_gradient(w, batch, block, g);
    if (trace) {
      if (block == nn::Block::Full) {
        trace->max_grad_norm = std::max(trace->max_grad_norm, norm2(g));
        if (!trace->global_first_loss) trace->global_first_loss = loss;
        trace->global_last_loss = loss;
      } else {
        if (!trace->local_first_loss) trace->local_first_loss = loss;
        trace->local_last_loss = loss;
      }
      ++trace->steps;
    }
    const bool prox = anchor && plan.mu_prox > 0.0;
    if (plan.optimizer == Optimizer::Sgd && prox) {
      // loss term explicit, proximal term implicit: stable for any eta * mu
      const double em = plan.eta * plan.mu_prox;
      for (std::size_t j = 0; j < w.size(); ++j)
        if (part.contains(block, j)) w[j] = (w[j] - plan.eta * g[j] + em * (*anchor)[j]) / (1.0 + em);
      if (!nn::all_finite(w)) throw NumericError("non-finite parameters after proximal step");
    } else if (plan.optimizer == Optimizer::Sgd) {
      nn::sgd_step(w, g, plan.eta);
    } else {
      if (prox)
        for (std::size_t j = 0; j < w.size(); ++j)
          if (part.contains(block, j)) g[j] += plan.mu_prox * (w[j] - (*anchor)[j]);
      nn::adam_step(*adam, w, g, plan.eta, plan.adam, part, block);
    }
  }
}

template <Objective O>
std::vector<double> full_model_update(const O& obj, RngStream rng, std::vector<double> w, const RoundPlan& plan,
                                      int steps, const std::vector<double>* anchor, UpdateTrace* trace) {
  BatchSampler sampler(obj.num_samples(), plan.batch, rng.child("batches"));
  std::optional<std::vector<std::size_t>> fixed;
  if (plan.fixed_batch_inner && steps > 0) fixed = sampler.next();
  nn::AdamState adam(plan.optimizer == Optimizer::Adam ? w.size() : 0);
  run_phase(obj, w, nn::Block::Full, steps, plan, sampler, fixed ? &*fixed : nullptr, &adam, anchor, trace);
  return w;
}

}  // namespace detail

/// HFL-LA client procedure: E_l iterations on the local block at fixed w_g,
/// then E iterations on the full model. The client keeps the updated local
/// block and returns the global block.
template <Objective O>
std::vector<double> client_update_hflla(ClientState& client, const O& obj, std::span<const double> w_g,
                                        const RoundPlan& plan, int round, UpdateTrace* trace = nullptr) {
  const auto& part = obj.partition();
  if (w_g.size() != part.global_indices().size())
    throw ConfigError("w_g has " + std::to_string(w_g.size()) + " entries, global block has " +
                      std::to_string(part.global_indices().size()));
  if (client.local.size() != part.local_indices().size()) throw ConfigError("client local block has the wrong size");

  std::vector<double> w(obj.num_params());
  part.scatter(w_g, nn::Block::Global, w);
  part.scatter(client.local, nn::Block::Local, w);

  const auto rng = client.rng.child("round", {static_cast<std::uint64_t>(round)});
  BatchSampler sampler(obj.num_samples(), plan.batch, rng.child("batches"));
  std::optional<std::vector<std::size_t>> fixed;
  if (plan.fixed_batch_inner && (plan.e_local > 0 || plan.e_global > 0)) fixed = sampler.next();
  nn::AdamState adam(plan.optimizer == Optimizer::Adam ? w.size() : 0);
  const auto* fb = fixed ? &*fixed : nullptr;

  // An empty local block has nothing to adapt; skipping keeps the batch
  // stream identical to a plain full-model update.
  if (!part.local_indices().empty())
    detail::run_phase(obj, w, nn::Block::Local, plan.e_local, plan, sampler, fb, &adam, nullptr, trace);
  detail::run_phase(obj, w, nn::Block::Full, plan.e_global, plan, sampler, fb, &adam, nullptr, trace);

  client.local = part.gather(w, nn::Block::Local);
  return part.gather(w, nn::Block::Global);
}

/// FedAvg client procedure: E full-model iterations on the shared model.
template <Objective O>
std::vector<double> client_update_fedavg(const ClientState& client, const O& obj, std::span<const double> w,
                                         const RoundPlan& plan, int round, UpdateTrace* trace = nullptr) {
  if (w.size() != obj.num_params()) throw ConfigError("model size mismatch in FedAvg update");
  const auto rng = client.rng.child("round", {static_cast<std::uint64_t>(round)});
  return detail::full_model_update(obj, rng, std::vector<double>(w.begin(), w.end()), plan, plan.e_global, nullptr,
                                   trace);
}

/// FedProx client procedure: FedAvg plus the penalty
/// (mu / 2) ||w - w_round_start||^2. Under SGD the penalty enters through its
/// closed-form proximal map, under Adam through its gradient.
template <Objective O>
std::vector<double> client_update_fedprox(const ClientState& client, const O& obj, std::span<const double> w,
                                          const RoundPlan& plan, int round, UpdateTrace* trace = nullptr) {
  if (plan.mu_prox < 0.0) throw ConfigError("mu_prox: must be >= 0");
  if (w.size() != obj.num_params()) throw ConfigError("model size mismatch in FedProx update");
  const auto rng = client.rng.child("round", {static_cast<std::uint64_t>(round)});
  const std::vector<double> anchor(w.begin(), w.end());
  return detail::full_model_update(obj, rng, anchor, plan, plan.e_global, plan.mu_prox > 0.0 ? &anchor : nullptr,
                                   trace);
}

}  // namespace fedlith::fed
