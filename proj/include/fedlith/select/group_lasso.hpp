#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedlith/core/error.hpp"
#include "fedlith/nn/model.hpp"

namespace fedlith::select {

/// View of first-convolution weights laid out [filter][ky][kx][channel].
struct ConvWeights {
  std::span<const double> w;
  int filters = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int channels = 0;

  std::size_t index(int f, int ky, int kx, int c) const {
    return static_cast<std::size_t>(((f * kernel_h + ky) * kernel_w + kx) * channels + c);
  }
};

inline ConvWeights first_conv_weights(const nn::ModelLayout& m, std::span<const double> params) {
  const int li = m.first_conv();
  if (li < 0) throw ConfigError("model has no convolution layer");
  const auto& l = m.layers()[static_cast<std::size_t>(li)];
  return {params.subspan(l.param_offset, l.weight_count), l.spec.filters, l.spec.kernel_h, l.spec.kernel_w, l.in.c};
}

using ChannelNorms = std::vector<double>;

/// Entry c is the l2 norm of every filter's channel-c slice.
inline ChannelNorms group_norms(const ConvWeights& cw) {
  ChannelNorms sq(static_cast<std::size_t>(cw.channels), 0.0);
  for (int f = 0; f < cw.filters; ++f)
    for (int ky = 0; ky < cw.kernel_h; ++ky)
      for (int kx = 0; kx < cw.kernel_w; ++kx)
        for (int c = 0; c < cw.channels; ++c) {
          const double v = cw.w[cw.index(f, ky, kx, c)];
          sq[static_cast<std::size_t>(c)] += v * v;
        }
  for (auto& s : sq) s = std::sqrt(s);
  return sq;
}

inline constexpr double kGroupEpsilon = 1e-8;

/// Subgradient of lambda * sum_c ||w_c||, laid out like the weights. Groups
/// with norm <= eps get a zero subgradient.
inline std::vector<double> group_lasso_grad(const ConvWeights& cw, double lambda, double eps = kGroupEpsilon) {
  if (lambda < 0.0) throw ConfigError("lambda_gl must be >= 0");
  std::vector<double> g(cw.w.size(), 0.0);
  if (lambda == 0.0) return g;
  const auto norms = group_norms(cw);
  for (int f = 0; f < cw.filters; ++f)
    for (int ky = 0; ky < cw.kernel_h; ++ky)
      for (int kx = 0; kx < cw.kernel_w; ++kx)
        for (int c = 0; c < cw.channels; ++c) {
          const double n = norms[static_cast<std::size_t>(c)];
          if (n <= eps) continue;
          const auto i = cw.index(f, ky, kx, c);
          g[i] = lambda * cw.w[i] / n;
        }
  return g;
}

inline double group_lasso_penalty(const ConvWeights& cw, double lambda) {
  if (lambda == 0.0) return 0.0;
  const auto norms = group_norms(cw);
  return lambda * std::accumulate(norms.begin(), norms.end(), 0.0);
}

/// Proximal map of step * lambda * sum_c ||w_c||: shrinks each channel group
/// toward zero, setting it exactly to zero when its norm is below the
/// threshold. `w` is the mutable first-conv weight block.
inline void group_soft_threshold(std::span<double> w, int filters, int kernel_h, int kernel_w, int channels,
                                 double threshold) {
  const ConvWeights cw{w, filters, kernel_h, kernel_w, channels};
  const auto norms = group_norms(cw);
  for (int f = 0; f < filters; ++f)
    for (int ky = 0; ky < kernel_h; ++ky)
      for (int kx = 0; kx < kernel_w; ++kx)
        for (int c = 0; c < channels; ++c) {
          const double n = norms[static_cast<std::size_t>(c)];
          const double scale = n > threshold ? 1.0 - threshold / n : 0.0;
          w[cw.index(f, ky, kx, c)] *= scale;
        }
}

/// Ordered, duplicate-free subset of channel indices.
struct ChannelMask {
  std::vector<int> selected;
  std::size_t k() const noexcept { return selected.size(); }
};

/// Indices of the k largest norms, ties broken toward the lower index,
/// returned in ascending channel order.
inline ChannelMask select_topk(std::span<const double> norms, int k) {
  if (k < 1 || static_cast<std::size_t>(k) > norms.size())
    throw ConfigError("k must be in [1, " + std::to_string(norms.size()) + "], got " + std::to_string(k));
  std::vector<int> order(norms.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return norms[static_cast<std::size_t>(a)] > norms[static_cast<std::size_t>(b)];
  });
  ChannelMask m;
  m.selected.assign(order.begin(), order.begin() + k);
  std::sort(m.selected.begin(), m.selected.end());
  return m;
}

inline nlohmann::json to_json(const ChannelMask& m, std::span<const double> norms) {
  return {{"selected", m.selected}, {"norms", std::vector<double>(norms.begin(), norms.end())}, {"k", m.k()}};
}

inline ChannelMask mask_from_json(const nlohmann::json& j) {
  try {
    ChannelMask m;
    m.selected = j.at("selected").get<std::vector<int>>();
    if (m.selected.empty()) throw ConfigError("mask: selected must be nonempty");
    if (!std::is_sorted(m.selected.begin(), m.selected.end()) ||
        std::adjacent_find(m.selected.begin(), m.selected.end()) != m.selected.end())
      throw ConfigError("mask: selected must be sorted without duplicates");
    if (j.contains("k") && j.at("k").get<std::size_t>() != m.k()) throw ConfigError("mask: k does not match selected");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("mask: malformed JSON: ") + e.what());
  }
}

}  // namespace fedlith::select
