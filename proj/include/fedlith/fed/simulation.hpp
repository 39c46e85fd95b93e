#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedlith/core/error.hpp"
#include "fedlith/core/parallel.hpp"
#include "fedlith/core/rng.hpp"
#include "fedlith/diag/bounds.hpp"
#include "fedlith/fed/aggregate.hpp"
#include "fedlith/fed/client.hpp"
#include "fedlith/fed/objective.hpp"
#include "fedlith/fed/types.hpp"
#include "fedlith/metrics/metrics.hpp"

namespace fedlith::fed {

struct SimulationOptions {
  AlgorithmKind algorithm = AlgorithmKind::HflLa;
  RoundPlan plan;
  LatencyModel latency;
  std::uint64_t seed = 1;
  bool diagnostics = true;  // only honoured with the SGD optimizer
  int probe_batches = 2;
  int threads = 1;
};

struct ClientRoundLog {
  int client = 0;
  std::size_t n_k = 0;
  bool computed = false;    // ran ClientUpdate this round
  bool responded = false;   // upload reached the server
  bool aggregated = false;  // member of S_t
  double latency = 0.0;
  UpdateTrace trace;
  std::optional<metrics::ConfusionCounts> test;
  std::string error;
};

struct BoundEntry {
  std::vector<double> consensus_per_k;
  double consensus_max = 0.0;
  double consensus_bound_safe = 0.0;
  double consensus_bound_tight = 0.0;
  bool consensus_violation = false;
  bool has_consensus = false;
  diag::RoundGradientStats stats;
  diag::TheoryConstants constants;  // running estimate up to this round
  diag::StationarityEntry stationarity;
};

struct RoundLog {
  int round = 0;
  AlgorithmKind algorithm = AlgorithmKind::HflLa;
  Mode mode = Mode::Sync;
  bool aggregation = true;  // false for local-only and centralized training
  bool aborted = false;
  std::string abort_reason;
  std::vector<int> participants;
  std::vector<int> aggregated;  // S_t in ascending id order
  std::vector<ClientRoundLog> clients;
  std::optional<metrics::ConfusionCounts> pooled;
  std::optional<double> mean_train_loss;
  std::optional<BoundEntry> bounds;
  std::string bounds_status;  // "ok", "disabled" or "not_applicable: ..."
};

/// Evaluates client k's full parameter vector; may return nullopt.
using Evaluator = std::function<std::optional<metrics::ConfusionCounts>(int, std::span<const double>)>;

/// The federated round state machine. One objective per client (a single
/// pooled objective for centralized training).
template <Objective O>
class Simulation {
 public:
  Simulation(SimulationOptions opt, std::vector<O> objectives, std::vector<double> w0, Evaluator eval = {})
      : opt_(std::move(opt)), objectives_(std::move(objectives)), eval_(std::move(eval)) {
    const int n = static_cast<int>(objectives_.size());
    if (n < 1) throw ConfigError("n_clients: must be >= 1");
    if (opt_.algorithm == AlgorithmKind::Centralized && n != 1)
      throw ConfigError("centralized training takes exactly one pooled objective");
    opt_.plan.validate(n);
    if (opt_.plan.mode == Mode::Async && opt_.algorithm != AlgorithmKind::LocalOnly &&
        opt_.algorithm != AlgorithmKind::Centralized && n < 2)
      throw ConfigError("mode: async aggregation needs at least 2 clients");
    const auto& part = objectives_.front().partition();
    for (const auto& o : objectives_) {
      if (o.num_params() != w0.size()) throw ConfigError("initial weights do not match the model");
      if (!(o.partition() == part)) throw ConfigError("all clients must share one parameter partition");
      if (o.num_samples() == 0) throw ConfigError("every client needs a nonempty shard");
    }
    if (!nn::all_finite(w0)) throw NumericError("initial weights are not finite");
    w0_ = w0;
    server_.total_rounds = 0;
    server_.w_g = shares_full_model() ? w0 : part.gather(w0, nn::Block::Global);
    const std::vector<double> local0 = shares_full_model() ? std::vector<double>{} : part.gather(w0, nn::Block::Local);
    for (int k = 0; k < n; ++k) {
      ClientState c;
      c.id = k;
      c.n_k = objectives_[static_cast<std::size_t>(k)].num_samples();
      c.local = local0;
      c.global_cache = server_.w_g;
      c.latency = opt_.latency;
      c.rng = RngStream(opt_.seed, "client", {static_cast<std::uint64_t>(k)});
      clients_.push_back(std::move(c));
      server_.n_k.push_back(clients_.back().n_k);
    }
    prev_probe_.resize(static_cast<std::size_t>(n));
  }

  const ServerState& server() const noexcept { return server_; }
  const std::vector<ClientState>& clients() const noexcept { return clients_; }
  const SimulationOptions& options() const noexcept { return opt_; }
  const std::vector<double>& initial_weights() const noexcept { return w0_; }
  int num_clients() const noexcept { return static_cast<int>(clients_.size()); }

  bool shares_full_model() const noexcept {
    return opt_.algorithm == AlgorithmKind::FedAvg || opt_.algorithm == AlgorithmKind::FedProx ||
           opt_.algorithm == AlgorithmKind::Centralized;
  }
  bool aggregates() const noexcept {
    return opt_.algorithm != AlgorithmKind::LocalOnly && opt_.algorithm != AlgorithmKind::Centralized;
  }
  bool monitors_bounds() const noexcept { return opt_.diagnostics && opt_.plan.optimizer == Optimizer::Sgd; }

  /// Client k's current full model (w_g or its own copy, joined with w_l^k).
  std::vector<double> client_params(int k) const {
    const auto& c = clients_[static_cast<std::size_t>(k)];
    if (shares_full_model()) return c.global_cache;
    const auto& part = objectives_.front().partition();
    std::vector<double> w(w0_.size());
    part.scatter(c.global_cache, nn::Block::Global, w);
    part.scatter(c.local, nn::Block::Local, w);
    return w;
  }

  RoundLog run_round() {
    const int t = server_.t;
    const int n = num_clients();
    RoundLog log;
    log.round = t;
    log.algorithm = opt_.algorithm;
    log.mode = opt_.plan.mode;
    log.aggregation = aggregates();
    log.clients.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      log.clients[static_cast<std::size_t>(k)].client = k;
      log.clients[static_cast<std::size_t>(k)].n_k = clients_[static_cast<std::size_t>(k)].n_k;
    }

    std::optional<diag::RoundGradientStats> stats;
    if (monitors_bounds()) stats = probe_round(t);

    // Participants.
    std::vector<int> participants;
    if (aggregates() && opt_.plan.mode == Mode::Async && opt_.plan.selection == Selection::RandomK) {
      std::vector<int> ids(static_cast<std::size_t>(n));
      for (int k = 0; k < n; ++k) ids[static_cast<std::size_t>(k)] = k;
      RngStream(opt_.seed, "select", {static_cast<std::uint64_t>(t)}).shuffle(ids);
      participants.assign(ids.begin(), ids.begin() + opt_.plan.k_responders);
      std::sort(participants.begin(), participants.end());
    } else {
      for (int k = 0; k < n; ++k) participants.push_back(k);
    }
    log.participants = participants;

    // Client updates; each writes only its own slot.
    const bool async = aggregates() && opt_.plan.mode == Mode::Async;
    std::vector<std::optional<ClientUpload>> uploads(static_cast<std::size_t>(n));
    std::vector<ClientState> next_state = clients_;
    parallel_for(participants.size(), opt_.threads, [&](std::size_t idx) {
      const int k = participants[idx];
      auto& cl = log.clients[static_cast<std::size_t>(k)];
      auto& state = next_state[static_cast<std::size_t>(k)];
      cl.computed = true;
      RngStream lat_rng(opt_.seed, "latency", {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(t)});
      cl.latency = state.latency.sample(lat_rng);
      try {
        ClientUpload up;
        up.client = k;
        up.n_k = state.n_k;
        up.latency = cl.latency;
        up.global_block = update_client(state, k, t, &cl.trace);
        uploads[static_cast<std::size_t>(k)] = std::move(up);
      } catch (const NumericError& e) {
        if (!async) throw;
        cl.error = e.what();
      }
    });

    // Consensus over every computed global block, before aggregation.
    std::optional<diag::ConsensusError> consensus;
    if (stats) {
      std::vector<std::vector<double>> blocks;
      for (const auto& u : uploads)
        if (u) blocks.push_back(u->global_block);
      if (blocks.size() >= 2) consensus = diag::consensus_error(blocks);
    }

    // Aggregation and broadcast.
    std::vector<ClientUpload> arrived;
    for (int k = 0; k < n; ++k) {
      auto& u = uploads[static_cast<std::size_t>(k)];
      if (u && u->latency <= opt_.latency.timeout) {
        log.clients[static_cast<std::size_t>(k)].responded = true;
        arrived.push_back(*u);
      }
    }
    if (aggregates()) {
      try {
        std::vector<ClientUpload> used;
        if (!async) {
          used = arrived;
          server_.w_g = aggregate_sync(used, n);
        } else if (opt_.plan.selection == Selection::FirstK) {
          used = first_k(arrived, opt_.plan.k_responders);
          server_.w_g = aggregate_async_firstK(used, opt_.plan.k_responders, n);
        } else {
          if (arrived.size() < participants.size())
            throw ProtocolError("a randomly selected client did not respond; round aborted");
          used = arrived;
          server_.w_g = weighted_mean(used);
        }
        for (const auto& u : used) {
          log.aggregated.push_back(u.client);
          log.clients[static_cast<std::size_t>(u.client)].aggregated = true;
        }
        std::sort(log.aggregated.begin(), log.aggregated.end());
      } catch (const ProtocolError& e) {
        if (!async) throw;
        log.aborted = true;
        log.abort_reason = e.what();
      }
    }

    // Commit client state. Stragglers keep their adapted local blocks.
    for (int k = 0; k < n; ++k) {
      auto& c = clients_[static_cast<std::size_t>(k)];
      const auto& nxt = next_state[static_cast<std::size_t>(k)];
      if (uploads[static_cast<std::size_t>(k)]) c.local = nxt.local;
      if (!aggregates()) {
        if (uploads[static_cast<std::size_t>(k)]) c.global_cache = uploads[static_cast<std::size_t>(k)]->global_block;
        if (opt_.algorithm == AlgorithmKind::Centralized) server_.w_g = c.global_cache;
      } else {
        c.global_cache = server_.w_g;
      }
    }

    // Metrics.
    if (eval_) {
      metrics::ConfusionCounts pooled;
      bool any = false;
      for (int k = 0; k < n; ++k) {
        const auto w = client_params(k);
        auto r = eval_(k, w);
        if (r) {
          pooled += *r;
          any = true;
        }
        log.clients[static_cast<std::size_t>(k)].test = r;
      }
      if (any) log.pooled = pooled;
    }
    double loss_sum = 0.0;
    int loss_n = 0;
    for (const auto& cl : log.clients)
      if (cl.trace.global_last_loss) {
        loss_sum += *cl.trace.global_last_loss;
        ++loss_n;
      }
    if (loss_n > 0) log.mean_train_loss = loss_sum / loss_n;

    // Bound monitors.
    if (stats) {
      for (const auto& cl : log.clients) stats->constants.g_hat = std::max(stats->constants.g_hat, cl.trace.max_grad_norm);
      running_.merge(stats->constants);
      grad_history_.push_back(*stats);
      BoundEntry b;
      b.stats = *stats;
      b.constants = running_;
      const diag::MonitorParams mp{opt_.plan.eta, opt_.plan.e_global, n};
      b.stationarity = diag::stationarity_monitor(grad_history_, running_, mp).back();
      const auto cb = diag::consensus_bound(opt_.plan.eta, opt_.plan.e_global, running_.g_hat);
      b.consensus_bound_safe = cb.safe;
      b.consensus_bound_tight = cb.tight;
      if (consensus) {
        b.has_consensus = true;
        b.consensus_per_k = consensus->per_k;
        b.consensus_max = consensus->max;
        b.consensus_violation = consensus->max > cb.safe;
      }
      log.bounds = std::move(b);
      log.bounds_status = "ok";
    } else if (!opt_.diagnostics) {
      log.bounds_status = "disabled";
    } else {
      log.bounds_status = "not_applicable: bound monitors require the sgd optimizer";
    }

    ++server_.t;
    ++server_.total_rounds;
    return log;
  }

  template <class Callback>
  std::vector<RoundLog> run(int rounds, Callback&& on_round) {
    if (rounds < 0) throw ConfigError("rounds: must be >= 0");
    std::vector<RoundLog> history;
    for (int r = 0; r < rounds; ++r) {
      history.push_back(run_round());
      on_round(history.back());
    }
    return history;
  }

  std::vector<RoundLog> run(int rounds) {
    return run(rounds, [](const RoundLog&) {});
  }

  const std::vector<diag::RoundGradientStats>& gradient_history() const noexcept { return grad_history_; }
  const diag::TheoryConstants& running_constants() const noexcept { return running_; }

 private:
  std::vector<double> update_client(ClientState& state, int k, int t, UpdateTrace* trace) const {
    const auto& obj = objectives_[static_cast<std::size_t>(k)];
    switch (opt_.algorithm) {
      case AlgorithmKind::HflLa:
        return client_update_hflla(state, obj, state.global_cache, opt_.plan, t, trace);
      case AlgorithmKind::LocalOnly:
        return client_update_hflla(state, obj, state.global_cache, opt_.plan, t, trace);
      case AlgorithmKind::FedAvg:
      case AlgorithmKind::Centralized:
        return client_update_fedavg(state, obj, state.global_cache, opt_.plan, t, trace);
      case AlgorithmKind::FedProx:
        return client_update_fedprox(state, obj, state.global_cache, opt_.plan, t, trace);
    }
    throw ConfigError("unknown algorithm");
  }

  diag::RoundGradientStats probe_round(int t) {
    const int n = num_clients();
    std::vector<diag::GradientProbe> current(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), opt_.threads, [&](std::size_t k) {
      const auto& obj = objectives_[k];
      auto& p = current[k];
      p.client = static_cast<int>(k);
      p.round = t;
      p.point = client_params(static_cast<int>(k));
      p.full_grad.assign(p.point.size(), 0.0);
      std::vector<std::size_t> all(obj.num_samples());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      p.full_loss = obj.loss_and_gradient(p.point, all, nn::Block::Full, p.full_grad);
      BatchSampler sampler(obj.num_samples(), opt_.plan.batch,
                           RngStream(opt_.seed, "probe", {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(t)}));
      for (int b = 0; b < opt_.probe_batches; ++b) {
        std::vector<double> g(p.point.size());
        obj.loss_and_gradient(p.point, sampler.next(), nn::Block::Full, g);
        p.batch_grads.push_back(std::move(g));
      }
    });
    diag::RoundGradientStats s;
    s.round = t;
    std::vector<diag::GradientProbe> pairs;
    for (int k = 0; k < n; ++k) {
      const auto& p = current[static_cast<std::size_t>(k)];
      double g2 = 0.0;
      for (double v : p.full_grad) g2 += v * v;
      s.mean_grad_sq += g2 / n;
      s.mean_loss += p.full_loss / n;
      if (prev_probe_[static_cast<std::size_t>(k)]) pairs.push_back(*prev_probe_[static_cast<std::size_t>(k)]);
    }
    pairs.insert(pairs.end(), current.begin(), current.end());
    s.constants = diag::estimate_constants(pairs);
    s.constants.f_star_hat = std::min(s.constants.f_star_hat, s.mean_loss);
    for (int k = 0; k < n; ++k) {
      auto& p = current[static_cast<std::size_t>(k)];
      p.batch_grads.clear();
      prev_probe_[static_cast<std::size_t>(k)] = std::move(p);
    }
    return s;
  }

  SimulationOptions opt_;
  std::vector<O> objectives_;
  Evaluator eval_;
  std::vector<double> w0_;
  ServerState server_;
  std::vector<ClientState> clients_;
  std::vector<std::optional<diag::GradientProbe>> prev_probe_;
  std::vector<diag::RoundGradientStats> grad_history_;
  diag::TheoryConstants running_;
};

}  // namespace fedlith::fed
