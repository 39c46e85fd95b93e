#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedlith/core/error.hpp"

namespace fedlith::nn {

enum class Block { Global, Local, Full };

inline const char* to_string(Block b) {
  switch (b) {
    case Block::Global: return "global";
    case Block::Local: return "local";
    case Block::Full: return "full";
  }
  return "?";
}

/// Split of the parameter index range [0, P) into a shared global block and a
/// client-private local block.
class BlockPartition {
 public:
  BlockPartition() = default;

  /// `is_global[i]` decides the block of parameter i.
  explicit BlockPartition(std::vector<bool> is_global) : is_global_(std::move(is_global)) {
    for (std::size_t i = 0; i < is_global_.size(); ++i) {
      (is_global_[i] ? global_ : local_).push_back(i);
    }
  }

  static BlockPartition all_global(std::size_t p) { return BlockPartition(std::vector<bool>(p, true)); }
  static BlockPartition all_local(std::size_t p) { return BlockPartition(std::vector<bool>(p, false)); }

  /// Builds from explicit index lists; they must be disjoint and cover [0, p).
  static BlockPartition from_indices(std::size_t p, std::span<const std::size_t> global,
                                     std::span<const std::size_t> local) {
    std::vector<int> seen(p, 0);
    for (auto i : global) {
      if (i >= p) throw ConfigError("global index " + std::to_string(i) + " out of range");
      ++seen[i];
    }
    for (auto i : local) {
      if (i >= p) throw ConfigError("local index " + std::to_string(i) + " out of range");
      seen[i] += 2;
    }
    std::vector<bool> g(p, false);
    for (std::size_t i = 0; i < p; ++i) {
      if (seen[i] != 1 && seen[i] != 2)
        throw ConfigError("partition index " + std::to_string(i) + " is missing or in both blocks");
      g[i] = seen[i] == 1;
    }
    return BlockPartition(std::move(g));
  }

  std::size_t size() const noexcept { return is_global_.size(); }
  const std::vector<std::size_t>& global_indices() const noexcept { return global_; }
  const std::vector<std::size_t>& local_indices() const noexcept { return local_; }
  bool is_global(std::size_t i) const { return is_global_[i]; }

  bool contains(Block b, std::size_t i) const {
    switch (b) {
      case Block::Full: return true;
      case Block::Global: return is_global_[i];
      case Block::Local: return !is_global_[i];
    }
    return false;
  }

  const std::vector<std::size_t>& indices(Block b) const {
    if (b == Block::Global) return global_;
    if (b == Block::Local) return local_;
    throw ConfigError("indices(Full) is not an index list");
  }

  /// Gathers the values of one block, in ascending index order.
  std::vector<double> gather(std::span<const double> full, Block b) const {
    const auto& idx = indices(b);
    std::vector<double> out(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) out[j] = full[idx[j]];
    return out;
  }

  void scatter(std::span<const double> block_values, Block b, std::span<double> full) const {
    const auto& idx = indices(b);
    if (block_values.size() != idx.size())
      throw ConfigError("block size mismatch: expected " + std::to_string(idx.size()) + ", got " +
                        std::to_string(block_values.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) full[idx[j]] = block_values[j];
  }

  /// Zeroes entries of `v` outside block `b`.
  void restrict_to(Block b, std::span<double> v) const {
    if (b == Block::Full) return;
    const bool want_global = b == Block::Global;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (is_global_[i] != want_global) v[i] = 0.0;
  }

  friend bool operator==(const BlockPartition& a, const BlockPartition& b) {
    return a.is_global_ == b.is_global_;
  }

 private:
  std::vector<bool> is_global_;
  std::vector<std::size_t> global_;
  std::vector<std::size_t> local_;
};

/// Model parameters w with their global/local split.
struct ParamVector {
  std::vector<double> values;
  std::shared_ptr<const BlockPartition> partition;

  std::size_t size() const noexcept { return values.size(); }
  std::span<double> span() noexcept { return values; }
  std::span<const double> span() const noexcept { return values; }
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace fedlith::nn
