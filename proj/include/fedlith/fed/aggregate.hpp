#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedlith/core/error.hpp"
#include "fedlith/fed/types.hpp"

namespace fedlith::fed {

/// Sample-count weighted mean sum_k n_k w_k / sum_k n_k of the uploads' global
/// blocks. The numerator is accumulated in binary128, where every product
/// n_k * w_k and (for inputs of comparable magnitude) every partial sum is
/// exact, so the result is the correctly rounded weighted mean and does not
/// depend on upload order. A single upload is returned unchanged.
inline std::vector<double> weighted_mean(std::span<const ClientUpload> uploads) {
  if (uploads.empty()) throw ProtocolError("aggregation needs at least one client output");
  const std::size_t dim = uploads.front().global_block.size();
  for (const auto& u : uploads) {
    if (u.global_block.size() != dim) throw ProtocolError("client " + std::to_string(u.client) + " sent a block of the wrong size");
    if (u.n_k == 0) throw ProtocolError("client " + std::to_string(u.client) + " reported n_k = 0");
  }
  if (uploads.size() == 1) return uploads.front().global_block;

  // Ascending client-id order.
  std::vector<std::size_t> order(uploads.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return uploads[a].client < uploads[b].client; });

  __float128 total = 0;
  for (const auto& u : uploads) total += static_cast<__float128>(u.n_k);
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    __float128 acc = 0;
    for (auto k : order) acc += static_cast<__float128>(uploads[k].n_k) * static_cast<__float128>(uploads[k].global_block[i]);
    out[i] = static_cast<double>(acc / total);
  }
  return out;
}

/// Synchronous aggregation: every one of the N clients must be present.
/// w_g = sum_k p_k w_g^k with p_k = n_k / n.
inline std::vector<double> aggregate_sync(std::span<const ClientUpload> uploads, int n_clients) {
  std::vector<int> seen(static_cast<std::size_t>(n_clients), 0);
  for (const auto& u : uploads) {
    if (u.client < 0 || u.client >= n_clients) throw ProtocolError("unknown client id " + std::to_string(u.client));
    if (seen[static_cast<std::size_t>(u.client)]++) throw ProtocolError("duplicate output from client " + std::to_string(u.client));
  }
  for (int k = 0; k < n_clients; ++k)
    if (!seen[static_cast<std::size_t>(k)]) throw ProtocolError("sync aggregation: missing output of client " + std::to_string(k));
  return weighted_mean(uploads);
}

/// Renormalized weights (n / n_K) p_k = n_k / n_K of a responder set.
inline std::vector<double> firstk_weights(std::span<const std::size_t> n_k) {
  std::size_t total = 0;
  for (auto v : n_k) total += v;
  if (total == 0) throw ProtocolError("responder set has no samples");
  std::vector<double> w;
  w.reserve(n_k.size());
  for (auto v : n_k) w.push_back(static_cast<double>(v) / static_cast<double>(total));
  return w;
}

/// The first K responders by latency (ties by client id).
inline std::vector<ClientUpload> first_k(std::span<const ClientUpload> responses, int k) {
  std::vector<ClientUpload> sorted(responses.begin(), responses.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const ClientUpload& a, const ClientUpload& b) {
    return a.latency < b.latency || (a.latency == b.latency && a.client < b.client);
  });
  if (sorted.size() > static_cast<std::size_t>(k)) sorted.resize(static_cast<std::size_t>(k));
  return sorted;
}

/// Asynchronous aggregation over S_t, the first K arrivals:
/// w_g = (n / n_K) sum_{k in S_t} p_k w_g^k. `responses` is in arrival order.
/// Throws ProtocolError (caller keeps its state) when fewer than K arrived.
inline std::vector<double> aggregate_async_firstK(std::span<const ClientUpload> responses, int k, int n_clients) {
  if (k < 1 || k > n_clients) throw ConfigError("k_responders must be in [1, n_clients]");
  if (responses.size() < static_cast<std::size_t>(k))
    throw ProtocolError("only " + std::to_string(responses.size()) + " of " + std::to_string(k) +
                        " required responders arrived; round aborted");
  return weighted_mean(responses.first(static_cast<std::size_t>(k)));
}

}  // namespace fedlith::fed
