#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedlith/core/error.hpp"
#include "fedlith/core/rng.hpp"
#include "fedlith/nn/partition.hpp"

namespace fedlith::nn {

/// Height x width x channels, channels innermost.
struct Shape3 {
  int h = 0;
  int w = 0;
  int c = 0;
  std::size_t size() const noexcept { return static_cast<std::size_t>(h) * w * c; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

enum class LayerKind { Conv2d, Relu, MaxPool, Dense, SoftmaxCE };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  // conv2d
  int filters = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  // maxpool (window == stride)
  int pool = 2;
  // dense
  int units = 0;

  static LayerSpec conv2d(int filters, int kernel, int stride = 1, int padding = 0) {
    LayerSpec l;
    l.kind = LayerKind::Conv2d;
    l.filters = filters;
    l.kernel_h = l.kernel_w = kernel;
    l.stride = stride;
    l.padding = padding;
    return l;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec maxpool(int size) {
    LayerSpec l;
    l.kind = LayerKind::MaxPool;
    l.pool = size;
    return l;
  }
  static LayerSpec dense(int units) {
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.units = units;
    return l;
  }
  static LayerSpec softmax_ce() {
    LayerSpec l;
    l.kind = LayerKind::SoftmaxCE;
    return l;
  }
};

/// Feed-forward model description. `global_layers` lists the indices (into
/// `layers`) of parameterized layers whose weights are shared across clients;
/// every other parameterized layer is client-local.
struct ModelSpec {
  Shape3 input;
  std::vector<LayerSpec> layers;
  std::vector<int> global_layers;
};

inline bool has_params(LayerKind k) { return k == LayerKind::Conv2d || k == LayerKind::Dense; }

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Dense: return "dense";
    case LayerKind::SoftmaxCE: return "softmax_ce";
  }
  return "?";
}

inline LayerKind parse_kind(const std::string& s) {
  if (s == "conv2d") return LayerKind::Conv2d;
  if (s == "relu") return LayerKind::Relu;
  if (s == "maxpool") return LayerKind::MaxPool;
  if (s == "dense") return LayerKind::Dense;
  if (s == "softmax_ce") return LayerKind::SoftmaxCE;
  throw ConfigError("layers[].type: unknown layer type '" + s + "'");
}

/// Resolved shapes and parameter offsets of one layer.
struct LayerLayout {
  LayerSpec spec;
  Shape3 in;
  Shape3 out;
  std::size_t param_offset = 0;
  std::size_t weight_count = 0;
  std::size_t bias_count = 0;
  bool global = false;

  std::size_t param_count() const noexcept { return weight_count + bias_count; }
};

/// A validated ModelSpec with every shape and parameter range resolved.
class ModelLayout {
 public:
  explicit ModelLayout(ModelSpec spec) : spec_(std::move(spec)) { resolve(); }

  const ModelSpec& spec() const noexcept { return spec_; }
  const std::vector<LayerLayout>& layers() const noexcept { return layers_; }
  std::size_t num_params() const noexcept { return num_params_; }
  std::size_t num_classes() const noexcept { return static_cast<std::size_t>(layers_.back().in.size()); }
  const Shape3& input_shape() const noexcept { return spec_.input; }
  const BlockPartition& partition() const noexcept { return *partition_; }
  std::shared_ptr<const BlockPartition> partition_ptr() const noexcept { return partition_; }

  /// Index of the first convolution layer (the feature-selection layer).
  int first_conv() const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].spec.kind == LayerKind::Conv2d) return static_cast<int>(i);
    return -1;
  }

  int input_channels() const noexcept { return spec_.input.c; }

  /// Parameter indices of channel group c of the first conv layer, i.e. the
  /// slice of every filter that reads input channel c.
  std::vector<std::size_t> channel_group(int c) const {
    const int li = first_conv();
    if (li < 0) throw ConfigError("model has no convolution layer");
    if (c < 0 || c >= spec_.input.c) throw ConfigError("channel " + std::to_string(c) + " out of range");
    const auto& l = layers_[static_cast<std::size_t>(li)];
    std::vector<std::size_t> idx;
    const int C = l.in.c;
    for (int f = 0; f < l.spec.filters; ++f)
      for (int ky = 0; ky < l.spec.kernel_h; ++ky)
        for (int kx = 0; kx < l.spec.kernel_w; ++kx)
          idx.push_back(l.param_offset +
                        static_cast<std::size_t>(((f * l.spec.kernel_h + ky) * l.spec.kernel_w + kx) * C + c));
    return idx;
  }

  /// Multiply-accumulate count of one forward pass.
  std::size_t forward_macs() const {
    std::size_t total = 0;
    for (const auto& l : layers_) {
      if (l.spec.kind == LayerKind::Conv2d)
        total += static_cast<std::size_t>(l.out.h) * l.out.w * l.out.c * l.spec.kernel_h * l.spec.kernel_w * l.in.c;
      else if (l.spec.kind == LayerKind::Dense)
        total += l.weight_count;
    }
    return total;
  }

  /// He-uniform weights, zero biases.
  std::vector<double> init_params(RngStream rng) const {
    std::vector<double> w(num_params_, 0.0);
    for (const auto& l : layers_) {
      if (!has_params(l.spec.kind)) continue;
      const double fan_in = static_cast<double>(l.weight_count) /
                            (l.spec.kind == LayerKind::Conv2d ? l.spec.filters : l.spec.units);
      const double bound = std::sqrt(6.0 / fan_in);
      for (std::size_t i = 0; i < l.weight_count; ++i) w[l.param_offset + i] = rng.uniform(-bound, bound);
    }
    return w;
  }

 private:
  void resolve() {
    if (spec_.input.h <= 0 || spec_.input.w <= 0 || spec_.input.c <= 0)
      throw ConfigError("input_shape: all dimensions must be positive");
    if (spec_.layers.empty() || spec_.layers.back().kind != LayerKind::SoftmaxCE)
      throw ConfigError("layers: the last layer must be softmax_ce");
    Shape3 cur = spec_.input;
    std::size_t offset = 0;
    std::vector<bool> is_global;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto& s = spec_.layers[i];
      LayerLayout l;
      l.spec = s;
      l.in = cur;
      const std::string where = "layers[" + std::to_string(i) + "]";
      switch (s.kind) {
        case LayerKind::Conv2d: {
          if (s.filters <= 0 || s.kernel_h <= 0 || s.kernel_w <= 0 || s.stride <= 0 || s.padding < 0)
            throw ConfigError(where + ": conv2d needs positive filters/kernel/stride and padding >= 0");
          const int oh = (cur.h + 2 * s.padding - s.kernel_h) / s.stride + 1;
          const int ow = (cur.w + 2 * s.padding - s.kernel_w) / s.stride + 1;
          if (cur.h + 2 * s.padding < s.kernel_h || cur.w + 2 * s.padding < s.kernel_w || oh <= 0 || ow <= 0)
            throw ConfigError(where + ": kernel larger than padded input");
          l.out = {oh, ow, s.filters};
          l.weight_count = static_cast<std::size_t>(s.filters) * s.kernel_h * s.kernel_w * cur.c;
          l.bias_count = static_cast<std::size_t>(s.filters);
          break;
        }
        case LayerKind::Relu:
          l.out = cur;
          break;
        case LayerKind::MaxPool: {
          if (s.pool <= 0) throw ConfigError(where + ": maxpool size must be positive");
          if (cur.h < s.pool || cur.w < s.pool) throw ConfigError(where + ": pool window larger than input");
          l.out = {cur.h / s.pool, cur.w / s.pool, cur.c};
          break;
        }
        case LayerKind::Dense:
          if (s.units <= 0) throw ConfigError(where + ": dense units must be positive");
          l.out = {1, 1, s.units};
          l.weight_count = static_cast<std::size_t>(s.units) * cur.size();
          l.bias_count = static_cast<std::size_t>(s.units);
          break;
        case LayerKind::SoftmaxCE:
          if (i + 1 != spec_.layers.size()) throw ConfigError(where + ": softmax_ce must be the last layer");
          if (cur.size() != 2) throw ConfigError(where + ": softmax_ce expects 2 logits, got " + std::to_string(cur.size()));
          l.out = {1, 1, 1};
          break;
      }
      l.param_offset = offset;
      const bool global = std::find(spec_.global_layers.begin(), spec_.global_layers.end(),
                                    static_cast<int>(i)) != spec_.global_layers.end();
      if (global && !has_params(s.kind))
        throw ConfigError("global_layers: layer " + std::to_string(i) + " has no parameters");
      l.global = global;
      offset += l.param_count();
      is_global.insert(is_global.end(), l.param_count(), global);
      cur = l.out;
      layers_.push_back(l);
    }
    for (int g : spec_.global_layers)
      if (g < 0 || static_cast<std::size_t>(g) >= spec_.layers.size())
        throw ConfigError("global_layers: index " + std::to_string(g) + " out of range");
    num_params_ = offset;
    partition_ = std::make_shared<const BlockPartition>(std::move(is_global));
  }

  ModelSpec spec_;
  std::vector<LayerLayout> layers_;
  std::size_t num_params_ = 0;
  std::shared_ptr<const BlockPartition> partition_;
};

/// Desk-scale default: one 1x1 convolution stage with 8 filters, a global
/// hidden dense stage, and a client-local output layer.
inline ModelSpec desk_model(int grid = 12, int channels = 32) {
  ModelSpec m;
  m.input = {grid, grid, channels};
  m.layers = {LayerSpec::conv2d(8, 1), LayerSpec::relu(), LayerSpec::maxpool(2),
              LayerSpec::dense(16),    LayerSpec::relu(), LayerSpec::dense(2),
              LayerSpec::softmax_ce()};
  m.global_layers = {0, 3};
  return m;
}

/// Two convolution stages (two 3x3 convs, ReLU, 2x2 max-pool each) followed by
/// two fully connected stages. Output layer local, everything else global.
inline ModelSpec two_stage_model(int grid = 12, int channels = 32) {
  ModelSpec m;
  m.input = {grid, grid, channels};
  m.layers = {LayerSpec::conv2d(16, 3, 1, 1), LayerSpec::conv2d(16, 3, 1, 1), LayerSpec::relu(),
              LayerSpec::maxpool(2),          LayerSpec::conv2d(32, 3, 1, 1), LayerSpec::conv2d(32, 3, 1, 1),
              LayerSpec::relu(),              LayerSpec::maxpool(2),          LayerSpec::dense(250),
              LayerSpec::relu(),              LayerSpec::dense(2),            LayerSpec::softmax_ce()};
  m.global_layers = {0, 1, 4, 5, 8};
  return m;
}

inline ModelSpec model_preset(const std::string& name, int grid, int channels) {
  if (name == "desk") return desk_model(grid, channels);
  if (name == "two-stage") return two_stage_model(grid, channels);
  throw ConfigError("model: unknown preset '" + name + "' (expected desk or two-stage)");
}

/// Same spec with every parameterized layer global (FedAvg-style sharing).
inline ModelSpec with_all_global(ModelSpec m) {
  m.global_layers.clear();
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (has_params(m.layers[i].kind)) m.global_layers.push_back(static_cast<int>(i));
  return m;
}

inline ModelSpec with_input_channels(ModelSpec m, int channels) {
  m.input.c = channels;
  return m;
}

inline nlohmann::json to_json(const ModelSpec& m) {
  const ModelLayout layout(m);
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layout.layers()) {
    nlohmann::json j{{"type", kind_name(l.spec.kind)}};
    switch (l.spec.kind) {
      case LayerKind::Conv2d:
        j["in_channels"] = l.in.c;
        j["filters"] = l.spec.filters;
        j["kernel"] = {l.spec.kernel_h, l.spec.kernel_w};
        j["stride"] = l.spec.stride;
        j["padding"] = l.spec.padding;
        break;
      case LayerKind::MaxPool:
        j["size"] = l.spec.pool;
        break;
      case LayerKind::Dense:
        j["in"] = l.in.size();
        j["units"] = l.spec.units;
        break;
      default:
        break;
    }
    j["out_shape"] = {l.out.h, l.out.w, l.out.c};
    layers.push_back(std::move(j));
  }
  return {{"input_shape", {m.input.h, m.input.w, m.input.c}}, {"layers", layers}, {"global_layers", m.global_layers}};
}

inline ModelSpec model_from_json(const nlohmann::json& j) {
  try {
    ModelSpec m;
    if (!j.contains("input_shape") || !j.contains("layers") || !j.contains("global_layers"))
      throw ConfigError("model: required keys are input_shape, layers, global_layers");
    const auto& s = j.at("input_shape");
    if (!s.is_array() || s.size() != 3) throw ConfigError("input_shape: expected [H, W, C]");
    m.input = {s[0].get<int>(), s[1].get<int>(), s[2].get<int>()};
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = parse_kind(lj.at("type").get<std::string>());
      if (l.kind == LayerKind::Conv2d) {
        l.filters = lj.at("filters").get<int>();
        const auto& k = lj.at("kernel");
        if (k.is_array()) {
          l.kernel_h = k.at(0).get<int>();
          l.kernel_w = k.at(1).get<int>();
        } else {
          l.kernel_h = l.kernel_w = k.get<int>();
        }
        l.stride = lj.value("stride", 1);
        l.padding = lj.value("padding", 0);
      } else if (l.kind == LayerKind::MaxPool) {
        l.pool = lj.at("size").get<int>();
      } else if (l.kind == LayerKind::Dense) {
        l.units = lj.at("units").get<int>();
      }
      m.layers.push_back(l);
    }
    m.global_layers = j.at("global_layers").get<std::vector<int>>();
    // Explicit shapes, when present, must agree with the resolved chain.
    const ModelLayout layout(m);
    const auto& lj = j.at("layers");
    for (std::size_t i = 0; i < layout.layers().size(); ++i) {
      const auto& l = layout.layers()[i];
      const std::string where = "layers[" + std::to_string(i) + "]";
      if (lj[i].contains("in_channels") && lj[i]["in_channels"].get<int>() != l.in.c)
        throw ConfigError(where + ".in_channels: expected " + std::to_string(l.in.c));
      if (lj[i].contains("in") && lj[i]["in"].get<std::size_t>() != l.in.size())
        throw ConfigError(where + ".in: expected " + std::to_string(l.in.size()));
      if (lj[i].contains("out_shape")) {
        const auto o = lj[i]["out_shape"].get<std::vector<int>>();
        if (o.size() != 3 || Shape3{o[0], o[1], o[2]} != l.out)
          throw ConfigError(where + ".out_shape does not match the layer chain");
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: malformed JSON: ") + e.what());
  }
}

}  // namespace fedlith::nn
