#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "fedlith/core/error.hpp"

namespace fedlith::data {

/// Orthonormal DCT-II basis: row u holds alpha(u) * cos(pi * (2i + 1) * u / 2B).
class DctBasis {
 public:
  explicit DctBasis(int b) : b_(b) {
    if (b < 1) throw ConfigError("DCT block size must be >= 1");
    const auto n = static_cast<std::size_t>(b);
    m_.resize(n * n);
    for (int u = 0; u < b; ++u) {
      const double alpha = u == 0 ? std::sqrt(1.0 / b) : std::sqrt(2.0 / b);
      for (int i = 0; i < b; ++i)
        m_[static_cast<std::size_t>(u) * n + i] = alpha * std::cos(std::numbers::pi * (2.0 * i + 1.0) * u / (2.0 * b));
    }
  }

  int size() const noexcept { return b_; }

  /// out = M x M^T (row-major B x B).
  void forward(std::span<const double> x, std::span<double> out) const { apply(x, out, false); }
  /// out = M^T X M.
  void inverse(std::span<const double> x, std::span<double> out) const { apply(x, out, true); }

 private:
  double at(int r, int c, bool transpose) const {
    const auto n = static_cast<std::size_t>(b_);
    return transpose ? m_[static_cast<std::size_t>(c) * n + r] : m_[static_cast<std::size_t>(r) * n + c];
  }

  void apply(std::span<const double> x, std::span<double> out, bool inv) const {
    const auto n = static_cast<std::size_t>(b_);
    if (x.size() != n * n || out.size() != n * n) throw ConfigError("DCT input must be B x B");
    std::vector<double> tmp(n * n, 0.0);
    // tmp = A x, out = tmp A^T where A = M (forward) or M^T (inverse).
    for (int r = 0; r < b_; ++r)
      for (int c = 0; c < b_; ++c) {
        double s = 0.0;
        for (int k = 0; k < b_; ++k) s += at(r, k, inv) * x[static_cast<std::size_t>(k) * n + c];
        tmp[static_cast<std::size_t>(r) * n + c] = s;
      }
    for (int r = 0; r < b_; ++r)
      for (int c = 0; c < b_; ++c) {
        double s = 0.0;
        for (int k = 0; k < b_; ++k) s += tmp[static_cast<std::size_t>(r) * n + k] * at(c, k, inv);
        out[static_cast<std::size_t>(r) * n + c] = s;
      }
  }

  int b_;
  std::vector<double> m_;
};

inline std::vector<double> dct2(std::span<const double> block, int b) {
  std::vector<double> out(block.size());
  DctBasis(b).forward(block, out);
  return out;
}

inline std::vector<double> idct2(std::span<const double> coeffs, int b) {
  std::vector<double> out(coeffs.size());
  DctBasis(b).inverse(coeffs, out);
  return out;
}

/// JPEG zigzag traversal of a B x B block: entry k is the (row, col) of the
/// k-th coefficient from low to high frequency.
inline std::vector<std::pair<int, int>> zigzag_order(int b) {
  if (b < 1) throw ConfigError("zigzag block size must be >= 1");
  std::vector<std::pair<int, int>> order;
  order.reserve(static_cast<std::size_t>(b) * b);
  for (int s = 0; s <= 2 * (b - 1); ++s) {
    if (s % 2 == 0) {
      // up-right: row decreasing
      for (int r = std::min(s, b - 1); r >= 0 && s - r < b; --r) order.emplace_back(r, s - r);
    } else {
      for (int c = std::min(s, b - 1); c >= 0 && s - c < b; --c) order.emplace_back(s - c, c);
    }
  }
  return order;
}

}  // namespace fedlith::data
