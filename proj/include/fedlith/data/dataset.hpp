#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedlith/core/error.hpp"
#include "fedlith/core/rng.hpp"
#include "fedlith/data/clip.hpp"
#include "fedlith/data/features.hpp"

namespace fedlith::data {

/// Synthetic benchmark shape. Defaults are a 1/10-scale copy of the ICCAD
/// split sizes with their class imbalance.
struct DatasetConfig {
  int clip_size = 96;
  int grid = 12;
  int channels = 32;
  int families = 4;
  int train_hotspots = 120;
  int train_non_hotspots = 1710;
  int test_hotspots = 252;
  int test_non_hotspots = 1350;
  std::uint64_t seed = 1;
};

enum class Split : std::uint8_t { Train = 0, Test = 1 };

inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

/// Labels and families of every sample in a split, in generation order.
/// Hotspots come first; families are assigned round-robin within a class.
struct SplitPlan {
  std::vector<Label> labels;
  std::vector<int> families;
};

inline SplitPlan plan_split(int hotspots, int non_hotspots, int families) {
  if (hotspots < 0 || non_hotspots < 0) throw ConfigError("dataset: sample counts must be >= 0");
  if (families < 1) throw ConfigError("dataset.families: must be >= 1");
  SplitPlan p;
  for (int i = 0; i < hotspots; ++i) {
    p.labels.push_back(Label::Hotspot);
    p.families.push_back(i % families);
  }
  for (int i = 0; i < non_hotspots; ++i) {
    p.labels.push_back(Label::NonHotspot);
    p.families.push_back(i % families);
  }
  return p;
}

/// Per-sample stream: clip i of a split depends only on (seed, split, i).
inline RngStream clip_stream(std::uint64_t seed, Split split, std::size_t index) {
  return RngStream(seed, "clip", {static_cast<std::uint64_t>(split), index});
}

inline std::vector<LayoutClip> generate_clips(const DatasetConfig& cfg, Split split) {
  const bool train = split == Split::Train;
  const auto plan = plan_split(train ? cfg.train_hotspots : cfg.test_hotspots,
                               train ? cfg.train_non_hotspots : cfg.test_non_hotspots, cfg.families);
  ClipGeometry geo{cfg.clip_size, cfg.clip_size, cfg.clip_size / cfg.grid, cfg.families};
  std::vector<LayoutClip> clips;
  clips.reserve(plan.labels.size());
  for (std::size_t i = 0; i < plan.labels.size(); ++i)
    clips.push_back(gen_clip(plan.families[i], plan.labels[i], clip_stream(cfg.seed, split, i), geo));
  return clips;
}

/// Feature tensors of a split as one contiguous n x dim array.
struct Dataset {
  std::size_t dim = 0;
  int grid = 0;
  int channels = 0;
  std::vector<double> features;
  std::vector<int> labels;
  std::vector<int> families;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> sample(std::size_t i) const { return {features.data() + i * dim, dim}; }

  std::size_t count_label(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }
};

inline Dataset featurize(std::span<const LayoutClip> clips, int grid, int channels) {
  Dataset d;
  d.grid = grid;
  d.channels = channels;
  d.dim = static_cast<std::size_t>(grid) * grid * channels;
  if (clips.empty()) return d;
  const FeatureExtractor fx(clips.front().height, grid, channels);
  d.features.reserve(clips.size() * d.dim);
  for (const auto& c : clips) {
    const auto t = fx(c);
    d.features.insert(d.features.end(), t.values.begin(), t.values.end());
    d.labels.push_back(to_int(c.label));
    d.families.push_back(c.family);
  }
  return d;
}

/// Restricts every sample to the selected channels.
inline Dataset restrict_channels(const Dataset& d, std::span<const int> selected) {
  for (int c : selected)
    if (c < 0 || c >= d.channels) throw ConfigError("channel mask entry " + std::to_string(c) + " out of range");
  Dataset out;
  out.grid = d.grid;
  out.channels = static_cast<int>(selected.size());
  out.dim = static_cast<std::size_t>(d.grid) * d.grid * selected.size();
  out.features = select_channels(d.features, d.channels, selected);
  out.labels = d.labels;
  out.families = d.families;
  return out;
}

/// Indices into a Dataset owned by client `client`.
struct Shard {
  int client = 0;
  std::vector<std::size_t> indices;

  std::size_t size() const noexcept { return indices.size(); }
};

struct PartitionResult {
  std::vector<Shard> shards;
  std::vector<std::string> warnings;
};

/// Clients owning family f at full skew: those with k mod F == f, or the
/// single client f mod N when there are fewer clients than families.
inline std::vector<int> family_owners(int family, int num_clients, int num_families) {
  std::vector<int> owners;
  if (num_clients >= num_families) {
    for (int k = family; k < num_clients; k += num_families) owners.push_back(k);
  } else {
    owners.push_back(family % num_clients);
  }
  return owners;
}

/// Splits sample indices across N clients. A fraction `skew` of every family
/// goes to that family's owners; the remainder is pooled, shuffled and dealt
/// evenly. skew = 0 is a uniform random split; skew = 1 gives each client a
/// single dominant family whenever N >= number of families.
inline PartitionResult partition_noniid(std::span<const int> families, int num_families, int num_clients, double skew,
                                        RngStream rng) {
  const auto n = families.size();
  if (num_clients < 1) throw ConfigError("n_clients: must be >= 1");
  if (n == 0) throw ConfigError("partition: dataset is empty");
  if (static_cast<std::size_t>(num_clients) > n)
    throw ConfigError("n_clients: " + std::to_string(num_clients) + " clients exceed " + std::to_string(n) + " samples");
  if (!(skew >= 0.0 && skew <= 1.0)) throw ConfigError("skew: must be in [0, 1]");
  if (num_families < 1) throw ConfigError("families: must be >= 1");

  PartitionResult res;
  if (skew > 0.0 && num_families == 1)
    res.warnings.push_back("skew > 0 with a single pattern family: heterogeneity is unachievable");
  else if (skew > 0.0 && num_clients > 1 && num_clients < num_families)
    res.warnings.push_back("fewer clients than families: each client holds several families at full skew");

  res.shards.resize(static_cast<std::size_t>(num_clients));
  for (int k = 0; k < num_clients; ++k) res.shards[static_cast<std::size_t>(k)].client = k;

  std::vector<std::vector<std::size_t>> by_family(static_cast<std::size_t>(num_families));
  for (std::size_t i = 0; i < n; ++i) {
    const int f = families[i];
    if (f < 0 || f >= num_families) throw ConfigError("partition: family id out of range");
    by_family[static_cast<std::size_t>(f)].push_back(i);
  }

  std::vector<std::size_t> pooled;
  for (int f = 0; f < num_families; ++f) {
    auto members = by_family[static_cast<std::size_t>(f)];
    auto frng = rng.child("family", {static_cast<std::uint64_t>(f)});
    frng.shuffle(members);
    const auto owned = static_cast<std::size_t>(std::llround(skew * static_cast<double>(members.size())));
    const auto owners = family_owners(f, num_clients, num_families);
    for (std::size_t j = 0; j < owned; ++j)
      res.shards[static_cast<std::size_t>(owners[j * owners.size() / owned])].indices.push_back(members[j]);
    pooled.insert(pooled.end(), members.begin() + static_cast<std::ptrdiff_t>(owned), members.end());
  }
  auto prng = rng.child("pool");
  prng.shuffle(pooled);
  for (std::size_t j = 0; j < pooled.size(); ++j)
    res.shards[j * static_cast<std::size_t>(num_clients) / pooled.size()].indices.push_back(pooled[j]);

  // Every shard must be nonempty: move samples from the largest shard.
  for (auto& s : res.shards) {
    while (s.indices.empty()) {
      auto largest = std::max_element(res.shards.begin(), res.shards.end(),
                                      [](const Shard& a, const Shard& b) { return a.size() < b.size(); });
      s.indices.push_back(largest->indices.back());
      largest->indices.pop_back();
    }
  }
  for (auto& s : res.shards) std::sort(s.indices.begin(), s.indices.end());
  return res;
}

/// Fraction of the shard drawn from its most common family.
inline double dominant_fraction(const Shard& s, std::span<const int> families, int num_families) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_families), 0);
  for (auto i : s.indices) ++counts[static_cast<std::size_t>(families[i])];
  return static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(s.size());
}

inline int dominant_family(const Shard& s, std::span<const int> families, int num_families) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_families), 0);
  for (auto i : s.indices) ++counts[static_cast<std::size_t>(families[i])];
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace fedlith::data
