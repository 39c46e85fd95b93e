#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedlith/core/error.hpp"
#include "fedlith/data/clip.hpp"
#include "fedlith/data/dct.hpp"

namespace fedlith::data {

/// G x G x C block-DCT coefficients, channel innermost. Channel c of cell
/// (i, j) is the c-th zigzag coefficient of block (i, j).
struct FeatureTensor {
  int grid = 0;
  int channels = 0;
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double at(int i, int j, int c) const {
    return values[(static_cast<std::size_t>(i) * grid + j) * channels + c];
  }
};

/// Block-DCT feature extractor with a cached basis and zigzag table.
class FeatureExtractor {
 public:
  FeatureExtractor(int clip_size, int grid, int channels)
      : clip_size_(clip_size), grid_(grid), channels_(channels), basis_(check(clip_size, grid, channels)),
        zigzag_(zigzag_order(clip_size / grid)) {}

  int grid() const noexcept { return grid_; }
  int channels() const noexcept { return channels_; }
  int block() const noexcept { return clip_size_ / grid_; }

  FeatureTensor operator()(const LayoutClip& clip) const {
    if (clip.height != clip_size_ || clip.width != clip_size_)
      throw ConfigError("clip is " + std::to_string(clip.height) + "x" + std::to_string(clip.width) +
                        ", extractor expects " + std::to_string(clip_size_));
    FeatureTensor t;
    t.grid = grid_;
    t.channels = channels_;
    t.values.resize(static_cast<std::size_t>(grid_) * grid_ * channels_);
    const int b = block();
    const auto bb = static_cast<std::size_t>(b) * b;
    std::vector<double> blk(bb), coef(bb);
    for (int i = 0; i < grid_; ++i)
      for (int j = 0; j < grid_; ++j) {
        for (int y = 0; y < b; ++y)
          for (int x = 0; x < b; ++x) blk[static_cast<std::size_t>(y) * b + x] = clip.at(i * b + y, j * b + x);
        basis_.forward(blk, coef);
        double* out = t.values.data() + (static_cast<std::size_t>(i) * grid_ + j) * channels_;
        for (int c = 0; c < channels_; ++c) {
          const auto [r, col] = zigzag_[static_cast<std::size_t>(c)];
          out[c] = coef[static_cast<std::size_t>(r) * b + col];
        }
      }
    return t;
  }

  /// Inverse of operator() when channels == block^2: rebuilds the raster
  /// (as reals) from the full set of zigzag coefficients.
  std::vector<double> reconstruct(const FeatureTensor& t) const {
    const int b = block();
    if (t.channels != b * b) throw ConfigError("reconstruction needs all block^2 channels");
    const auto bb = static_cast<std::size_t>(b) * b;
    std::vector<double> raster(static_cast<std::size_t>(clip_size_) * clip_size_);
    std::vector<double> coef(bb), blk(bb);
    for (int i = 0; i < grid_; ++i)
      for (int j = 0; j < grid_; ++j) {
        for (int c = 0; c < t.channels; ++c) {
          const auto [r, col] = zigzag_[static_cast<std::size_t>(c)];
          coef[static_cast<std::size_t>(r) * b + col] = t.at(i, j, c);
        }
        basis_.inverse(coef, blk);
        for (int y = 0; y < b; ++y)
          for (int x = 0; x < b; ++x)
            raster[static_cast<std::size_t>(i * b + y) * clip_size_ + (j * b + x)] = blk[static_cast<std::size_t>(y) * b + x];
      }
    return raster;
  }

 private:
  static int check(int clip_size, int grid, int channels) {
    if (grid <= 0 || clip_size <= 0 || clip_size % grid != 0)
      throw ConfigError("clip size " + std::to_string(clip_size) + " is not divisible by grid " + std::to_string(grid));
    const int b = clip_size / grid;
    if (channels <= 0 || channels > b * b)
      throw ConfigError("channels must be in [1, " + std::to_string(b * b) + "]");
    return b;
  }

  int clip_size_, grid_, channels_;
  DctBasis basis_;
  std::vector<std::pair<int, int>> zigzag_;
};

inline FeatureTensor extract_features(const LayoutClip& clip, int grid, int channels) {
  if (clip.height != clip.width) throw ConfigError("clip must be square");
  return FeatureExtractor(clip.height, grid, channels)(clip);
}

/// Keeps only the listed channels, in the listed order.
inline std::vector<double> select_channels(std::span<const double> values, int channels,
                                           std::span<const int> selected) {
  const std::size_t cells = values.size() / static_cast<std::size_t>(channels);
  std::vector<double> out(cells * selected.size());
  for (std::size_t cell = 0; cell < cells; ++cell)
    for (std::size_t k = 0; k < selected.size(); ++k)
      out[cell * selected.size() + k] = values[cell * static_cast<std::size_t>(channels) + static_cast<std::size_t>(selected[k])];
  return out;
}

}  // namespace fedlith::data
