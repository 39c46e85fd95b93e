#pragma once

#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

#include "fedlith/data/dataset.hpp"
#include "fedlith/metrics/metrics.hpp"
#include "fedlith/nn/model.hpp"
#include "fedlith/nn/network.hpp"
#include "fedlith/nn/optim.hpp"
#include "fedlith/select/group_lasso.hpp"

namespace fedlith::fed {

/// A client's local loss F_k. Batches are positions in [0, num_samples()).
/// loss_and_gradient zero-fills `grad` outside `block`.
template <class O>
concept Objective = requires(const O& o, std::span<const double> w, std::span<const std::size_t> batch, nn::Block b,
                             std::span<double> g) {
  { o.num_params() } -> std::convertible_to<std::size_t>;
  { o.num_samples() } -> std::convertible_to<std::size_t>;
  { o.partition() } -> std::convertible_to<const nn::BlockPartition&>;
  { o.loss_and_gradient(w, batch, b, g) } -> std::convertible_to<double>;
};

/// Softmax cross-entropy of a ModelLayout on one shard, plus the smooth L2
/// penalty (l2 / 2) ||w||^2 and, optionally, the first-layer Group Lasso term.
class NeuralObjective {
 public:
  NeuralObjective(const nn::ModelLayout& model, const data::Dataset& data, std::vector<std::size_t> indices,
                  double l2 = 0.0, double lambda_gl = 0.0)
      : model_(&model), data_(&data), indices_(std::move(indices)), l2_(l2), lambda_gl_(lambda_gl) {
    if (data.dim != model.input_shape().size())
      throw ConfigError("dataset features (" + std::to_string(data.dim) + ") do not match model input (" +
                        std::to_string(model.input_shape().size()) + ")");
  }

  std::size_t num_params() const { return model_->num_params(); }
  std::size_t num_samples() const { return indices_.size(); }
  const nn::BlockPartition& partition() const { return model_->partition(); }
  const nn::ModelLayout& model() const { return *model_; }
  const std::vector<std::size_t>& indices() const { return indices_; }

  nn::Batch make_batch(std::span<const std::size_t> positions) const {
    nn::Batch b;
    b.inputs.reserve(positions.size());
    b.labels.reserve(positions.size());
    for (auto p : positions) {
      const auto i = indices_.at(p);
      b.inputs.push_back(data_->sample(i));
      b.labels.push_back(data_->labels[i]);
    }
    return b;
  }

  double loss_and_gradient(std::span<const double> w, std::span<const std::size_t> positions, nn::Block block,
                           std::span<double> grad) const {
    double loss = nn::loss_and_gradient(*model_, w, make_batch(positions), block, grad);
    const auto& part = partition();
    if (l2_ > 0.0) {
      nn::add_l2_penalty_gradient(w, l2_, grad, part, block);
      loss += nn::l2_penalty(w, l2_);
    }
    if (lambda_gl_ > 0.0) {
      const auto cw = select::first_conv_weights(*model_, w);
      const auto g = select::group_lasso_grad(cw, lambda_gl_);
      const auto off = model_->layers()[static_cast<std::size_t>(model_->first_conv())].param_offset;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (part.contains(block, off + i)) grad[off + i] += g[i];
      loss += select::group_lasso_penalty(cw, lambda_gl_);
    }
    return loss;
  }

 private:
  const nn::ModelLayout* model_;
  const data::Dataset* data_;
  std::vector<std::size_t> indices_;
  double l2_;
  double lambda_gl_;
};

static_assert(Objective<NeuralObjective>);

/// Confusion counts of a parameter vector on a subset of a dataset.
inline metrics::ConfusionCounts evaluate(const nn::ModelLayout& model, std::span<const double> params,
                                         const data::Dataset& data, std::span<const std::size_t> indices) {
  metrics::ConfusionCounts c;
  constexpr std::size_t chunk = 64;
  for (std::size_t s = 0; s < indices.size(); s += chunk) {
    nn::Batch b;
    for (std::size_t j = s; j < std::min(indices.size(), s + chunk); ++j) {
      b.inputs.push_back(data.sample(indices[j]));
      b.labels.push_back(data.labels[indices[j]]);
    }
    const auto r = nn::forward(model, params, b);
    for (std::size_t j = 0; j < b.size(); ++j)
      c.add(b.labels[j], nn::predict(std::span<const double>(r.logits).subspan(j * r.classes, r.classes)));
  }
  return c;
}

}  // namespace fedlith::fed
