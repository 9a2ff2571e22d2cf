#pragma once

#include <utility>
#include <vector>

#include "swardmix/rng.hpp"
#include "swardmix/tensor.hpp"

namespace swardmix {

struct AugmentPolicy {
  double crop_scale_min = 0.5;  // fraction of image area
  double crop_scale_max = 1.0;
  double horizontal_flip_p = 0.5;
  double vertical_flip_p = 0.5;
  double brightness_jitter = 0.2;  // additive, uniform in ±value
  double channel_jitter = 0.1;     // additive per channel, uniform in ±value
  int output_size = 32;

  void validate() const;

  /// No crop, flip or jitter: views are plain resizes of the input.
  static AugmentPolicy identity(int output_size);
};

/// Bilinear resize of a C×H×W image to C×size×size (half-pixel centres,
/// samples clamped to the source).
TensorF resize_bilinear(const TensorF& image, int size);

/// Two independent crop -> resize -> flip -> jitter draws, clamped to [0, 1].
/// Throws std::invalid_argument if the smallest allowed crop is under 2 px.
std::pair<TensorF, TensorF> two_views(const TensorF& image, const AugmentPolicy& policy, Rng& rng);

/// Input mixup with virtual labels, the mixing step of i-Mix.
struct MixResult {
  TensorF mixed_batch;                   // B×C×H×W
  std::vector<float> lambdas;            // per-sample weight on the sample itself
  std::vector<std::size_t> permutation;  // partner of each sample
  TensorF virtual_labels;                // B×B, row-stochastic
};

/// mixed[i] = λᵢ·batch[i] + (1−λᵢ)·batch[π(i)];  V[i][i] += λᵢ, V[i][π(i)] += 1−λᵢ.
MixResult mixup(const TensorF& batch, std::vector<float> lambdas, std::vector<std::size_t> permutation);

/// λᵢ ~ Beta(alpha, alpha) per sample and a uniform random permutation.
MixResult mixup(const TensorF& batch, double alpha, Rng& rng);

}  // namespace swardmix
