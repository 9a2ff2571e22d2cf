#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "swardmix/augment.hpp"
#include "swardmix/autodiff.hpp"
#include "swardmix/model.hpp"
#include "swardmix/rng.hpp"

namespace swardmix {

struct ContrastiveConfig {
  double temperature = 0.2;
  double alpha = 1.0;
  int batch_size = 32;
  /// Overrides the Beta draw for every sample (λ = 1 disables mixing).
  std::optional<float> fixed_lambda;

  void validate() const;
};

/// logits[i][j] = ⟨anchors[i], positives[j]⟩ / τ for unit-norm rows.
/// Throws ShapeError on shape mismatch and std::invalid_argument when a row
/// norm is off by more than 1e-3.
template <typename Scalar>
Var<Scalar> npair_logits(Var<Scalar> anchors, Var<Scalar> positives, Scalar temperature) {
  if (!(temperature > Scalar(0))) throw std::invalid_argument("npair_logits: temperature must be positive");
  if (anchors.shape().size() != 2 || anchors.shape() != positives.shape()) {
    throw ShapeError("npair_logits: anchors " + shape_string(anchors.shape()) + " vs positives " +
                     shape_string(positives.shape()));
  }
  for (auto v : {anchors, positives}) {
    const auto norms = v.value().matrix().rowwise().norm();
    if (((norms.array() - Scalar(1)).abs() > Scalar(1e-3)).any()) {
      throw std::invalid_argument("npair_logits: rows must be L2-normalized");
    }
  }
  return scale(matmul(anchors, positives, /*transpose_b=*/true), Scalar(1) / temperature);
}

/// Soft-label cross-entropy −(1/B)·Σᵢ Σⱼ vᵢⱼ·log softmax(logitsᵢ)ⱼ.
/// Throws std::invalid_argument when a label row does not sum to 1 (±1e-4).
template <typename Scalar>
Var<Scalar> imix_loss(Var<Scalar> logits, const Tensor<Scalar>& virtual_labels) {
  if (virtual_labels.rank() != 2 || virtual_labels.shape() != logits.shape() ||
      virtual_labels.dim(0) != virtual_labels.dim(1)) {
    throw ShapeError("imix_loss: logits " + shape_string(logits.shape()) + " vs labels " +
                     shape_string(virtual_labels.shape()));
  }
  const auto sums = virtual_labels.matrix().rowwise().sum();
  for (Index i = 0; i < sums.size(); ++i) {
    if (std::abs(static_cast<double>(sums[i]) - 1.0) > 1e-4) {
      throw std::invalid_argument("imix_loss: virtual label row " + std::to_string(i) + " sums to " +
                                  std::to_string(static_cast<double>(sums[i])));
    }
  }
  return soft_cross_entropy(logits, virtual_labels);
}

struct PretrainStepResult {
  float loss = 0.0f;
  std::map<std::string, TensorF> gradients;  // every trainable parameter
};

/// One i-Mix step: two views per image, mixup on the anchor stream,
/// encode+project both streams, N-pair logits against the unmixed positives,
/// soft cross-entropy against the virtual labels, then backward.
/// `raw_batch` holds C×H×W images; gradients cover trunk and projection head.
PretrainStepResult pretrain_step(const Checkpoint& ckpt, const std::vector<TensorF>& raw_batch,
                                 const AugmentPolicy& policy, const ContrastiveConfig& config, Rng& rng);

/// Names of parameters trained during pretraining (trunk + projection head).
std::vector<std::string> pretrain_parameters(const ModelConfig& config);

/// Stacks equally shaped C×H×W images into a B×C×H×W batch.
TensorF stack_images(const std::vector<TensorF>& images);

}  // namespace swardmix
