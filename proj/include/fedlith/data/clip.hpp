#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "fedlith/core/error.hpp"
#include "fedlith/core/rng.hpp"

namespace fedlith::data {

enum class Label : std::uint8_t { NonHotspot = 0, Hotspot = 1 };

inline int to_int(Label l) { return static_cast<int>(l); }

/// Axis-aligned rectangle [x0, x1) x [y0, y1) in raster pixels.
struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

/// Spacing between two disjoint rectangles along the axis that separates them.
inline int spacing(const Rect& a, const Rect& b) {
  const int dx = std::max(b.x0 - a.x1, a.x0 - b.x1);
  const int dy = std::max(b.y0 - a.y1, a.y0 - b.y1);
  return std::max(dx, dy);
}

/// Geometry of one pattern family. Families sharing a `node` share the same
/// printability rule; orientation and pitch change the background texture.
struct FamilySpec {
  bool vertical = false;
  int pitch = 8;
  int line_width = 2;
  int motif_width = 4;
  int node = 0;
  int hotspot_gap_min = 2, hotspot_gap_max = 3;
  int safe_gap_min = 6, safe_gap_max = 7;
};

/// Default family table. Even nodes fail below 4 px, odd nodes below 8 px, so
/// a 6-7 px tip-to-tip gap is safe in one node and a hotspot in the other.
inline FamilySpec default_family(int f) {
  if (f < 0) throw ConfigError("family id must be >= 0");
  FamilySpec s;
  s.node = f % 2;
  s.vertical = (f / 2) % 2 == 1;
  s.pitch = 8 + 2 * (f / 4);
  s.line_width = 2;
  if (s.node == 0) {
    s.hotspot_gap_min = 2;
    s.hotspot_gap_max = 3;
    s.safe_gap_min = 6;
    s.safe_gap_max = 7;
  } else {
    s.hotspot_gap_min = 6;
    s.hotspot_gap_max = 7;
    s.safe_gap_min = 10;
    s.safe_gap_max = 11;
  }
  return s;
}

struct ClipGeometry {
  int height = 96;
  int width = 96;
  int block = 8;
  int families = 4;
};

/// Binary raster of a layout window with its label and family.
struct LayoutClip {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> raster;  // row-major, entries in {0, 1}
  Label label = Label::NonHotspot;
  int family = 0;
  Rect motif_a, motif_b;  // the two facing line ends

  std::uint8_t at(int y, int x) const { return raster[static_cast<std::size_t>(y) * width + x]; }
  int motif_spacing() const { return spacing(motif_a, motif_b); }
};

namespace detail {
inline void fill(LayoutClip& c, const Rect& r, std::uint8_t v) {
  for (int y = std::max(0, r.y0); y < std::min(c.height, r.y1); ++y)
    for (int x = std::max(0, r.x0); x < std::min(c.width, r.x1); ++x) c.raster[static_cast<std::size_t>(y) * c.width + x] = v;
}

// Swap axes so horizontal-family code can draw vertical motifs.
inline Rect orient(const Rect& r, bool vertical) { return vertical ? Rect{r.y0, r.x0, r.y1, r.x1} : r; }
}  // namespace detail

/// Generates one clip: parallel background wires of the family's pitch and
/// orientation, with a tip-to-tip motif near the clip core. The motif
/// orientation is drawn per clip, so every family shares the same motif
/// vocabulary and differs in background texture and printability rule.
/// Hotspots use a gap below the family's safe threshold, non-hotspots a gap
/// at or above it.
inline LayoutClip gen_clip(int family, Label label, RngStream rng, const ClipGeometry& geo = {}) {
  if (family < 0 || family >= geo.families)
    throw ConfigError("unknown family id " + std::to_string(family) + " (families=" + std::to_string(geo.families) + ")");
  if (geo.height % geo.block != 0 || geo.width % geo.block != 0 || geo.height != geo.width)
    throw ConfigError("clip must be square and divisible by the block size");
  const FamilySpec fs = default_family(family);
  const int n = geo.height;
  const int b = geo.block;
  const int g = n / b;
  if (g < 5) throw ConfigError("clip needs at least a 5x5 block grid");

  LayoutClip c;
  c.height = c.width = n;
  c.raster.assign(static_cast<std::size_t>(n) * n, 0);
  c.label = label;
  c.family = family;

  // Background wires (drawn horizontally, transposed for vertical families).
  const int phase = static_cast<int>(rng.below(static_cast<std::uint64_t>(fs.pitch)));
  for (int y = -phase; y < n; y += fs.pitch) {
    if (y + fs.line_width <= 0) continue;
    if (rng.uniform() < 0.15) continue;  // missing wire
    detail::fill(c, detail::orient({0, y, n, y + fs.line_width}, fs.vertical), 1);
  }

  // Motif window: the 3x3 blocks around the motif block are cleared. The
  // motif block is the core block or one of its 8 neighbours.
  const int bi = (g - 1) / 2 + static_cast<int>(rng.below(3)) - 1;
  const int bj = (g - 1) / 2 + static_cast<int>(rng.below(3)) - 1;
  const Rect window{(bj - 1) * b, (bi - 1) * b, (bj + 2) * b, (bi + 2) * b};
  detail::fill(c, window, 0);

  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
  const int gap = label == Label::Hotspot ? pick(fs.hotspot_gap_min, fs.hotspot_gap_max)
                                          : pick(fs.safe_gap_min, fs.safe_gap_max);
  const int wire_y = bi * b + (b - fs.motif_width) / 2 + pick(-1, 1);
  const int centre = bj * b + b / 2 + pick(-1, 1);
  const int left_end = centre - gap / 2;
  const Rect a{window.x0, wire_y, left_end, wire_y + fs.motif_width};
  const Rect r{left_end + gap, wire_y, window.x1, wire_y + fs.motif_width};
  // The window is symmetric under transposition, so either orientation fits.
  const bool vertical = rng.uniform() < 0.5;
  c.motif_a = detail::orient(a, vertical);
  c.motif_b = detail::orient(r, vertical);
  detail::fill(c, c.motif_a, 1);
  detail::fill(c, c.motif_b, 1);
  return c;
}

/// Threshold below which a motif gap is a hotspot in `family`.
inline int safe_threshold(int family) { return default_family(family).safe_gap_min; }

}  // namespace fedlith::data
