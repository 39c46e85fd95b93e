#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fedlith/core/error.hpp"
#include "fedlith/core/rng.hpp"
#include "fedlith/nn/optim.hpp"

namespace fedlith::fed {

enum class AlgorithmKind { HflLa, FedAvg, FedProx, LocalOnly, Centralized };

inline const char* to_string(AlgorithmKind a) {
  switch (a) {
    case AlgorithmKind::HflLa: return "hfl-la";
    case AlgorithmKind::FedAvg: return "fedavg";
    case AlgorithmKind::FedProx: return "fedprox";
    case AlgorithmKind::LocalOnly: return "local";
    case AlgorithmKind::Centralized: return "centralized";
  }
  return "?";
}

inline AlgorithmKind parse_algorithm(const std::string& s) {
  if (s == "hfl-la" || s == "hflla" || s == "hfl_la") return AlgorithmKind::HflLa;
  if (s == "fedavg") return AlgorithmKind::FedAvg;
  if (s == "fedprox") return AlgorithmKind::FedProx;
  if (s == "local") return AlgorithmKind::LocalOnly;
  if (s == "centralized") return AlgorithmKind::Centralized;
  throw ConfigError("algorithm: unknown value '" + s + "' (expected hfl-la, fedavg, fedprox, local, centralized)");
}

enum class Mode { Sync, Async };
enum class Selection { FirstK, RandomK };
enum class Optimizer { Sgd, Adam };

inline const char* to_string(Mode m) { return m == Mode::Sync ? "sync" : "async"; }
inline const char* to_string(Selection s) { return s == Selection::FirstK ? "first_k" : "random_k"; }
inline const char* to_string(Optimizer o) { return o == Optimizer::Sgd ? "sgd" : "adam"; }

/// Per-round schedule shared by every client.
struct RoundPlan {
  Mode mode = Mode::Sync;
  Selection selection = Selection::FirstK;
  int k_responders = 1;      // used in async mode
  int e_local = 5;           // local-block iterations per round
  int e_global = 15;         // full-model iterations per round
  double eta = 1e-3;
  std::size_t batch = 32;
  bool fixed_batch_inner = false;  // reuse one mini-batch for every inner step
  Optimizer optimizer = Optimizer::Adam;
  nn::AdamConfig adam{};
  double mu_prox = 0.01;

  void validate(int n_clients) const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta: must be > 0");
    if (e_local < 0) throw ConfigError("e_local: must be >= 0");
    if (e_global < 0) throw ConfigError("e_global: must be >= 0");
    if (batch < 1) throw ConfigError("batch: must be >= 1");
    if (mu_prox < 0.0) throw ConfigError("mu_prox: must be >= 0");
    if (mode == Mode::Async && (k_responders < 1 || k_responders > n_clients))
      throw ConfigError("k_responders: must be in [1, n_clients] for async mode");
  }
};

/// Lognormal response time: exp(mu + sigma * z).
struct LatencyModel {
  double mu = 0.0;
  double sigma = 0.5;
  double timeout = std::numeric_limits<double>::infinity();

  double sample(RngStream& rng) const { return std::exp(mu + sigma * rng.normal()); }
};

/// What a client sends to the server: its id, its sample count and the
/// global block. Shard samples and local weights have no field here.
struct ClientUpload {
  int client = 0;
  std::size_t n_k = 0;
  std::vector<double> global_block;
  double latency = 0.0;
};

/// Client-side persistent state.
struct ClientState {
  int id = 0;
  std::size_t n_k = 0;
  std::vector<double> local;         // w_l^k
  std::vector<double> global_cache;  // last received w_g (own model for local-only training)
  LatencyModel latency;
  RngStream rng;
};

/// Server-side state. p_k = n_k / n.
struct ServerState {
  std::vector<double> w_g;
  int t = 0;
  int total_rounds = 0;
  std::vector<std::size_t> n_k;

  std::size_t n() const {
    std::size_t s = 0;
    for (auto v : n_k) s += v;
    return s;
  }
  double p(int k) const { return static_cast<double>(n_k[static_cast<std::size_t>(k)]) / static_cast<double>(n()); }
};

}  // namespace fedlith::fed
