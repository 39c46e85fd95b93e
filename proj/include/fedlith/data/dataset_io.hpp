#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedlith/core/binary_io.hpp"
#include "fedlith/core/rng.hpp"
#include "fedlith/data/dataset.hpp"

namespace fedlith::data {

inline constexpr char kClipMagic[8] = {'F', 'L', 'C', 'L', 'I', 'P', '0', '1'};

/// Packed clip file: magic, u32 count, u32 height, u32 width, then per clip a
/// label byte, a family byte and the raster packed MSB-first, row-major.
inline std::string encode_clips(std::span<const LayoutClip> clips) {
  std::string buf(kClipMagic, sizeof kClipMagic);
  const std::uint32_t h = clips.empty() ? 0 : static_cast<std::uint32_t>(clips.front().height);
  const std::uint32_t w = clips.empty() ? 0 : static_cast<std::uint32_t>(clips.front().width);
  put_u32(buf, static_cast<std::uint32_t>(clips.size()));
  put_u32(buf, h);
  put_u32(buf, w);
  const std::size_t bytes = (static_cast<std::size_t>(h) * w + 7) / 8;
  for (const auto& c : clips) {
    if (static_cast<std::uint32_t>(c.height) != h || static_cast<std::uint32_t>(c.width) != w)
      throw IoError("clips in one file must share their size");
    buf.push_back(static_cast<char>(c.label));
    buf.push_back(static_cast<char>(c.family));
    std::string packed(bytes, '\0');
    for (std::size_t i = 0; i < c.raster.size(); ++i)
      if (c.raster[i]) packed[i / 8] = static_cast<char>(packed[i / 8] | (0x80 >> (i % 8)));
    buf += packed;
  }
  return buf;
}

inline std::vector<LayoutClip> decode_clips(const std::string& buf) {
  if (buf.size() < sizeof kClipMagic || buf.compare(0, sizeof kClipMagic, std::string(kClipMagic, sizeof kClipMagic)) != 0)
    throw IoError("not a clip file (bad magic)");
  std::size_t pos = sizeof kClipMagic;
  const auto n = get_u32(buf, pos);
  const auto h = get_u32(buf, pos);
  const auto w = get_u32(buf, pos);
  const std::size_t bytes = (static_cast<std::size_t>(h) * w + 7) / 8;
  if (buf.size() != pos + static_cast<std::size_t>(n) * (2 + bytes)) throw IoError("clip file has the wrong length");
  std::vector<LayoutClip> clips(n);
  for (auto& c : clips) {
    c.height = static_cast<int>(h);
    c.width = static_cast<int>(w);
    const auto label = static_cast<unsigned char>(buf[pos++]);
    if (label > 1) throw IoError("clip label byte out of range");
    c.label = static_cast<Label>(label);
    c.family = static_cast<unsigned char>(buf[pos++]);
    c.raster.resize(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < c.raster.size(); ++i)
      c.raster[i] = (static_cast<unsigned char>(buf[pos + i / 8]) >> (7 - i % 8)) & 1u;
    pos += bytes;
  }
  return clips;
}

inline nlohmann::json to_json(const DatasetConfig& c) {
  return {{"clip_size", c.clip_size},
          {"grid", c.grid},
          {"channels", c.channels},
          {"families", c.families},
          {"train_hotspots", c.train_hotspots},
          {"train_non_hotspots", c.train_non_hotspots},
          {"test_hotspots", c.test_hotspots},
          {"test_non_hotspots", c.test_non_hotspots},
          {"seed", c.seed}};
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.clip_size = j.at("clip_size").get<int>();
  c.grid = j.at("grid").get<int>();
  c.channels = j.at("channels").get<int>();
  c.families = j.at("families").get<int>();
  c.train_hotspots = j.at("train_hotspots").get<int>();
  c.train_non_hotspots = j.at("train_non_hotspots").get<int>();
  c.test_hotspots = j.at("test_hotspots").get<int>();
  c.test_non_hotspots = j.at("test_non_hotspots").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

/// Stable identifier of the benchmark a config generates.
inline std::string benchmark_id(const DatasetConfig& c) {
  const auto h = splitmix64(tag_hash(to_json(c).dump()));
  char buf[32];
  std::snprintf(buf, sizeof buf, "synthetic-%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Writes manifest.json, train.clips and test.clips (plus float64 feature
/// caches when `cache_features`). Output is a pure function of the config.
inline nlohmann::json write_dataset(const fs::path& dir, const DatasetConfig& cfg, bool cache_features = false) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json splits = nlohmann::json::object();
  for (Split s : {Split::Train, Split::Test}) {
    const auto clips = generate_clips(cfg, s);
    const std::string name = to_string(s);
    write_text(dir / (name + ".clips"), encode_clips(clips));
    std::vector<int> per_family_hs(static_cast<std::size_t>(cfg.families), 0), per_family_nhs(static_cast<std::size_t>(cfg.families), 0);
    std::size_t hs = 0;
    for (const auto& c : clips) {
      (c.label == Label::Hotspot ? per_family_hs : per_family_nhs)[static_cast<std::size_t>(c.family)]++;
      hs += c.label == Label::Hotspot;
    }
    splits[name] = {{"file", name + ".clips"},
                    {"n", clips.size()},
                    {"hotspots", hs},
                    {"non_hotspots", clips.size() - hs},
                    {"hotspots_by_family", per_family_hs},
                    {"non_hotspots_by_family", per_family_nhs}};
    if (cache_features) {
      const auto d = featurize(clips, cfg.grid, cfg.channels);
      write_f64_array(dir / (name + ".features.f64"), d.features,
                      {d.size(), static_cast<std::size_t>(cfg.grid), static_cast<std::size_t>(cfg.grid),
                       static_cast<std::size_t>(cfg.channels)});
      splits[name]["features"] = name + ".features.f64";
    }
  }
  nlohmann::json manifest{{"format", "fedlith-dataset/1"},
                          {"benchmark", benchmark_id(cfg)},
                          {"families", cfg.families},
                          {"config", to_json(cfg)},
                          {"splits", splits}};
  write_json(dir / "manifest.json", manifest);
  return manifest;
}

struct LoadedDataset {
  DatasetConfig config;
  std::string benchmark;
  Dataset train;
  Dataset test;
};

inline LoadedDataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw IoError("no dataset manifest in " + dir.string());
  const auto manifest = read_json(dir / "manifest.json");
  LoadedDataset out;
  try {
    out.config = dataset_config_from_json(manifest.at("config"));
    out.benchmark = manifest.at("benchmark").get<std::string>();
    for (Split s : {Split::Train, Split::Test}) {
      const auto& sj = manifest.at("splits").at(to_string(s));
      Dataset& d = s == Split::Train ? out.train : out.test;
      const auto clips = decode_clips(read_text(dir / sj.at("file").get<std::string>()));
      if (sj.contains("features")) {
        auto arr = read_f64_array(dir / sj.at("features").get<std::string>());
        d.grid = out.config.grid;
        d.channels = out.config.channels;
        d.dim = static_cast<std::size_t>(d.grid) * d.grid * d.channels;
        if (arr.values.size() != clips.size() * d.dim) throw IoError("feature cache does not match clip count");
        d.features = std::move(arr.values);
        for (const auto& c : clips) {
          d.labels.push_back(to_int(c.label));
          d.families.push_back(c.family);
        }
      } else {
        d = featurize(clips, out.config.grid, out.config.channels);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset manifest: " + std::string(e.what()));
  }
  return out;
}

}  // namespace fedlith::data
