#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedlith/core/error.hpp"
#include "fedlith/nn/model.hpp"
#include "fedlith/nn/partition.hpp"

namespace fedlith::nn {

/// A mini-batch: feature tensors (flattened H x W x C) and 0/1 labels.
/// Label 1 is "hotspot".
struct Batch {
  std::vector<std::span<const double>> inputs;
  std::vector<int> labels;

  std::size_t size() const noexcept { return inputs.size(); }
};

struct ForwardResult {
  double loss = 0.0;
  std::vector<double> logits;  // batch x classes, row-major
  std::size_t classes = 2;
};

namespace detail {

inline void check_finite(std::span<const double> v, std::size_t layer) {
  if (!all_finite(v)) throw NumericError("non-finite value at layer " + std::to_string(layer));
}

// Per-sample activation storage. acts[i] is the input of layer i.
struct Workspace {
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<std::size_t>> argmax;
  std::vector<double> grad_a;
  std::vector<double> grad_b;

  explicit Workspace(const ModelLayout& m) : acts(m.layers().size() + 1), argmax(m.layers().size()) {
    for (std::size_t i = 0; i < m.layers().size(); ++i) {
      acts[i + 1].resize(m.layers()[i].out.size());
      if (m.layers()[i].spec.kind == LayerKind::MaxPool) argmax[i].resize(m.layers()[i].out.size());
    }
    std::size_t widest = m.input_shape().size();
    for (const auto& l : m.layers()) widest = std::max(widest, l.out.size());
    grad_a.resize(widest);
    grad_b.resize(widest);
  }
};

inline void conv_forward(const LayerLayout& l, const double* in, const double* w, double* out) {
  const int C = l.in.c, H = l.in.h, W = l.in.w;
  const int KH = l.spec.kernel_h, KW = l.spec.kernel_w, S = l.spec.stride, P = l.spec.padding;
  const int F = l.out.c;
  const double* bias = w + l.weight_count;
  for (int oy = 0; oy < l.out.h; ++oy) {
    for (int ox = 0; ox < l.out.w; ++ox) {
      double* o = out + (static_cast<std::size_t>(oy) * l.out.w + ox) * F;
      for (int f = 0; f < F; ++f) o[f] = bias[f];
      for (int ky = 0; ky < KH; ++ky) {
        const int iy = oy * S - P + ky;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < KW; ++kx) {
          const int ix = ox * S - P + kx;
          if (ix < 0 || ix >= W) continue;
          const double* x = in + (static_cast<std::size_t>(iy) * W + ix) * C;
          for (int f = 0; f < F; ++f) {
            const double* wf = w + (static_cast<std::size_t>((f * KH + ky) * KW + kx)) * C;
            double acc = 0.0;
            for (int c = 0; c < C; ++c) acc += x[c] * wf[c];
            o[f] += acc;
          }
        }
      }
    }
  }
}

// Accumulates weight/bias gradients into gw (if non-null) and writes the input
// gradient into gin (if non-null).
inline void conv_backward(const LayerLayout& l, const double* in, const double* w, const double* gout, double* gw,
                          double* gin) {
  const int C = l.in.c, H = l.in.h, W = l.in.w;
  const int KH = l.spec.kernel_h, KW = l.spec.kernel_w, S = l.spec.stride, P = l.spec.padding;
  const int F = l.out.c;
  if (gin) std::fill(gin, gin + l.in.size(), 0.0);
  for (int oy = 0; oy < l.out.h; ++oy) {
    for (int ox = 0; ox < l.out.w; ++ox) {
      const double* g = gout + (static_cast<std::size_t>(oy) * l.out.w + ox) * F;
      if (gw) {
        double* gb = gw + l.weight_count;
        for (int f = 0; f < F; ++f) gb[f] += g[f];
      }
      for (int ky = 0; ky < KH; ++ky) {
        const int iy = oy * S - P + ky;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < KW; ++kx) {
          const int ix = ox * S - P + kx;
          if (ix < 0 || ix >= W) continue;
          const std::size_t xo = (static_cast<std::size_t>(iy) * W + ix) * C;
          const double* x = in + xo;
          for (int f = 0; f < F; ++f) {
            const double gf = g[f];
            if (gf == 0.0) continue;
            const std::size_t wo = static_cast<std::size_t>((f * KH + ky) * KW + kx) * C;
            if (gw) {
              double* gwf = gw + wo;
              for (int c = 0; c < C; ++c) gwf[c] += gf * x[c];
            }
            if (gin) {
              const double* wf = w + wo;
              double* gi = gin + xo;
              for (int c = 0; c < C; ++c) gi[c] += gf * wf[c];
            }
          }
        }
      }
    }
  }
}

inline void dense_forward(const LayerLayout& l, const double* in, const double* w, double* out) {
  const std::size_t n = l.in.size();
  const double* bias = w + l.weight_count;
  for (int j = 0; j < l.spec.units; ++j) {
    const double* row = w + static_cast<std::size_t>(j) * n;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += row[i] * in[i];
    out[j] = acc + bias[j];
  }
}

inline void dense_backward(const LayerLayout& l, const double* in, const double* w, const double* gout, double* gw,
                           double* gin) {
  const std::size_t n = l.in.size();
  if (gin) std::fill(gin, gin + n, 0.0);
  for (int j = 0; j < l.spec.units; ++j) {
    const double g = gout[j];
    if (gw) {
      double* row = gw + static_cast<std::size_t>(j) * n;
      for (std::size_t i = 0; i < n; ++i) row[i] += g * in[i];
      gw[l.weight_count + static_cast<std::size_t>(j)] += g;
    }
    if (gin) {
      const double* row = w + static_cast<std::size_t>(j) * n;
      for (std::size_t i = 0; i < n; ++i) gin[i] += g * row[i];
    }
  }
}

inline void maxpool_forward(const LayerLayout& l, const double* in, double* out, std::size_t* arg) {
  const int C = l.in.c, p = l.spec.pool;
  for (int oy = 0; oy < l.out.h; ++oy)
    for (int ox = 0; ox < l.out.w; ++ox)
      for (int c = 0; c < C; ++c) {
        std::size_t best = (static_cast<std::size_t>(oy * p) * l.in.w + ox * p) * C + c;
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) {
            const std::size_t idx = (static_cast<std::size_t>(oy * p + dy) * l.in.w + (ox * p + dx)) * C + c;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (static_cast<std::size_t>(oy) * l.out.w + ox) * C + c;
        out[o] = in[best];
        arg[o] = best;
      }
}

// Cross-entropy as (zmax - z_y) + log1p(sum over non-max of exp(z - zmax)),
// so confident predictions keep full relative precision. Writes
// softmax - onehot into g.
inline double softmax_ce(std::span<const double> z, int label, double* g) {
  const auto imax = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
  const double zmax = z[imax];
  double rest = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (i != imax) rest += std::exp(z[i] - zmax);
  const double log_s = std::log1p(rest);
  if (g) {
    for (std::size_t i = 0; i < z.size(); ++i)
      g[i] = std::exp(z[i] - zmax - log_s) - (static_cast<int>(i) == label ? 1.0 : 0.0);
  }
  return (zmax - z[static_cast<std::size_t>(label)]) + log_s;
}

inline void run_forward(const ModelLayout& m, std::span<const double> params, std::span<const double> input,
                        Workspace& ws) {
  ws.acts[0].assign(input.begin(), input.end());
  const auto& layers = m.layers();
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    const auto& l = layers[i];
    const double* in = ws.acts[i].data();
    double* out = ws.acts[i + 1].data();
    const double* w = params.data() + l.param_offset;
    switch (l.spec.kind) {
      case LayerKind::Conv2d: conv_forward(l, in, w, out); break;
      case LayerKind::Dense: dense_forward(l, in, w, out); break;
      case LayerKind::Relu:
        for (std::size_t k = 0; k < l.out.size(); ++k) out[k] = in[k] > 0.0 ? in[k] : 0.0;
        break;
      case LayerKind::MaxPool: maxpool_forward(l, in, out, ws.argmax[i].data()); break;
      case LayerKind::SoftmaxCE: break;
    }
    check_finite(ws.acts[i + 1], i);
  }
}

inline void validate(const ModelLayout& m, std::span<const double> params, const Batch& batch) {
  if (params.size() != m.num_params())
    throw ConfigError("parameter count " + std::to_string(params.size()) + " does not match model (" +
                      std::to_string(m.num_params()) + ")");
  if (batch.inputs.empty()) throw ConfigError("empty batch");
  if (batch.inputs.size() != batch.labels.size()) throw ConfigError("batch inputs and labels differ in length");
  const std::size_t in = m.input_shape().size();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch.inputs[b].size() != in)
      throw ConfigError("sample " + std::to_string(b) + " has " + std::to_string(batch.inputs[b].size()) +
                        " features, model expects " + std::to_string(in));
    if (batch.labels[b] < 0 || static_cast<std::size_t>(batch.labels[b]) >= m.num_classes())
      throw ConfigError("label out of range in sample " + std::to_string(b));
  }
}

}  // namespace detail

/// Mean softmax cross-entropy over the batch plus the raw logits.
inline ForwardResult forward(const ModelLayout& m, std::span<const double> params, const Batch& batch) {
  detail::validate(m, params, batch);
  detail::Workspace ws(m);
  ForwardResult r;
  r.classes = m.num_classes();
  r.logits.reserve(batch.size() * r.classes);
  const std::size_t head = m.layers().size() - 1;
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    detail::run_forward(m, params, batch.inputs[b], ws);
    const auto& z = ws.acts[head];
    r.logits.insert(r.logits.end(), z.begin(), z.end());
    total += detail::softmax_ce(z, batch.labels[b], nullptr);
  }
  r.loss = total / static_cast<double>(batch.size());
  if (!std::isfinite(r.loss)) throw NumericError("non-finite loss at layer " + std::to_string(head));
  return r;
}

/// Batch loss and its gradient restricted to `block`. Entries outside the
/// block are exactly zero. Backpropagation stops below the earliest layer
/// that owns block parameters.
inline double loss_and_gradient(const ModelLayout& m, std::span<const double> params, const Batch& batch, Block block,
                                std::span<double> grad) {
  detail::validate(m, params, batch);
  if (grad.size() != m.num_params()) throw ConfigError("gradient buffer has the wrong size");
  std::fill(grad.begin(), grad.end(), 0.0);
  const auto& layers = m.layers();
  const auto& part = m.partition();

  std::vector<bool> wants(layers.size(), false);
  int earliest = static_cast<int>(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.param_count() == 0) continue;
    for (std::size_t k = 0; k < l.param_count(); ++k)
      if (part.contains(block, l.param_offset + k)) {
        wants[i] = true;
        break;
      }
    if (wants[i]) earliest = std::min(earliest, static_cast<int>(i));
  }

  detail::Workspace ws(m);
  const std::size_t head = layers.size() - 1;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    detail::run_forward(m, params, batch.inputs[b], ws);
    double* gcur = ws.grad_a.data();
    double* gnext = ws.grad_b.data();
    total += detail::softmax_ce(ws.acts[head], batch.labels[b], gcur);
    for (std::size_t k = 0; k < layers[head].in.size(); ++k) gcur[k] *= inv_b;
    for (int i = static_cast<int>(head) - 1; i >= earliest; --i) {
      const auto& l = layers[static_cast<std::size_t>(i)];
      const double* in = ws.acts[static_cast<std::size_t>(i)].data();
      const double* w = params.data() + l.param_offset;
      double* gw = wants[static_cast<std::size_t>(i)] ? grad.data() + l.param_offset : nullptr;
      double* gin = i > earliest ? gnext : nullptr;
      switch (l.spec.kind) {
        case LayerKind::Conv2d: detail::conv_backward(l, in, w, gcur, gw, gin); break;
        case LayerKind::Dense: detail::dense_backward(l, in, w, gcur, gw, gin); break;
        case LayerKind::Relu:
          if (gin)
            for (std::size_t k = 0; k < l.in.size(); ++k) gin[k] = in[k] > 0.0 ? gcur[k] : 0.0;
          break;
        case LayerKind::MaxPool:
          if (gin) {
            std::fill(gin, gin + l.in.size(), 0.0);
            const auto& arg = ws.argmax[static_cast<std::size_t>(i)];
            for (std::size_t k = 0; k < l.out.size(); ++k) gin[arg[k]] += gcur[k];
          }
          break;
        case LayerKind::SoftmaxCE: break;
      }
      if (gin) std::swap(gcur, gnext);
    }
  }
  part.restrict_to(block, grad);
  if (!all_finite(grad)) throw NumericError("non-finite gradient");
  const double loss = total * inv_b;
  if (!std::isfinite(loss)) throw NumericError("non-finite loss at layer " + std::to_string(head));
  return loss;
}

inline std::vector<double> gradient(const ModelLayout& m, std::span<const double> params, const Batch& batch,
                                    Block block) {
  std::vector<double> g(m.num_params());
  loss_and_gradient(m, params, batch, block, g);
  return g;
}

inline ParamVector gradient(const ModelLayout& m, const ParamVector& params, const Batch& batch, Block block) {
  return {gradient(m, params.span(), batch, block), params.partition};
}

/// Argmax prediction; exact ties go to class 0 (non-hotspot).
inline int predict(std::span<const double> logits) { return logits.size() == 2 && logits[1] > logits[0] ? 1 : 0; }

}  // namespace fedlith::nn
