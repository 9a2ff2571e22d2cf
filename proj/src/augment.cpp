#include "swardmix/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "swardmix/errors.hpp"

namespace swardmix {

void AugmentPolicy::validate() const {
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0)) {
    throw std::invalid_argument("augment: crop scale range must satisfy 0 < min <= max <= 1");
  }
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(horizontal_flip_p) || !prob(vertical_flip_p)) {
    throw std::invalid_argument("augment: flip probabilities must lie in [0, 1]");
  }
  if (brightness_jitter < 0.0 || channel_jitter < 0.0) throw std::invalid_argument("augment: jitter must be >= 0");
  if (output_size < 1) throw std::invalid_argument("augment: output_size must be >= 1");
}

AugmentPolicy AugmentPolicy::identity(int output_size) {
  return AugmentPolicy{1.0, 1.0, 0.0, 0.0, 0.0, 0.0, output_size};
}

namespace {

/// Bilinear sample of the crop [top, top+ch) × [left, left+cw) onto size×size.
TensorF crop_resize(const TensorF& image, Index top, Index left, Index ch, Index cw, int size) {
  const Index channels = image.dim(0), height = image.dim(1), width = image.dim(2);
  TensorF out({channels, size, size});
  const double sy = static_cast<double>(ch) / size, sx = static_cast<double>(cw) / size;
  for (Index y = 0; y < size; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(ch - 1));
    const Index y0 = static_cast<Index>(fy), y1 = std::min(y0 + 1, ch - 1);
    const double wy = fy - static_cast<double>(y0);
    for (Index x = 0; x < size; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(cw - 1));
      const Index x0 = static_cast<Index>(fx), x1 = std::min(x0 + 1, cw - 1);
      const double wx = fx - static_cast<double>(x0);
      for (Index c = 0; c < channels; ++c) {
        auto px = [&](Index yy, Index xx) {
          return static_cast<double>(image[(c * height + top + yy) * width + left + xx]);
        };
        const double v = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) + wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1));
        out[(c * size + y) * size + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

void check_image(const TensorF& image) {
  if (image.rank() != 3 || image.dim(1) < 1 || image.dim(2) < 1) {
    throw ShapeError("expected a CxHxW image, got " + shape_string(image.shape()));
  }
}

TensorF one_view(const TensorF& image, const AugmentPolicy& p, Rng& rng) {
  const Index h = image.dim(1), w = image.dim(2);
  const double scale = p.crop_scale_min == p.crop_scale_max ? p.crop_scale_min : rng.uniform(p.crop_scale_min, p.crop_scale_max);
  const double side = std::sqrt(scale);
  const Index ch = std::clamp<Index>(static_cast<Index>(std::lround(side * h)), 1, h);
  const Index cw = std::clamp<Index>(static_cast<Index>(std::lround(side * w)), 1, w);
  const Index top = ch < h ? static_cast<Index>(rng.index(static_cast<std::size_t>(h - ch + 1))) : 0;
  const Index left = cw < w ? static_cast<Index>(rng.index(static_cast<std::size_t>(w - cw + 1))) : 0;
  TensorF view = crop_resize(image, top, left, ch, cw, p.output_size);

  const Index channels = view.dim(0), size = p.output_size;
  const bool hflip = p.horizontal_flip_p > 0.0 && rng.bernoulli(p.horizontal_flip_p);
  const bool vflip = p.vertical_flip_p > 0.0 && rng.bernoulli(p.vertical_flip_p);
  if (hflip || vflip) {
    TensorF flipped(view.shape());
    for (Index c = 0; c < channels; ++c) {
      for (Index y = 0; y < size; ++y) {
        for (Index x = 0; x < size; ++x) {
          const Index sy = vflip ? size - 1 - y : y, sx = hflip ? size - 1 - x : x;
          flipped[(c * size + y) * size + x] = view[(c * size + sy) * size + sx];
        }
      }
    }
    view = std::move(flipped);
  }

  const double brightness = p.brightness_jitter > 0.0 ? rng.uniform(-p.brightness_jitter, p.brightness_jitter) : 0.0;
  for (Index c = 0; c < channels; ++c) {
    const double shift = brightness + (p.channel_jitter > 0.0 ? rng.uniform(-p.channel_jitter, p.channel_jitter) : 0.0);
    auto plane = view.array().segment(c * size * size, size * size);
    plane = (plane + static_cast<float>(shift)).max(0.0f).min(1.0f);
  }
  return view;
}

}  // namespace

TensorF resize_bilinear(const TensorF& image, int size) {
  check_image(image);
  if (size < 1) throw std::invalid_argument("resize: size must be >= 1");
  return crop_resize(image, 0, 0, image.dim(1), image.dim(2), size);
}

std::pair<TensorF, TensorF> two_views(const TensorF& image, const AugmentPolicy& policy, Rng& rng) {
  policy.validate();
  check_image(image);
  const double min_side = std::sqrt(policy.crop_scale_min) * static_cast<double>(std::min(image.dim(1), image.dim(2)));
  if (min_side < 2.0) {
    throw std::invalid_argument("two_views: image " + shape_string(image.shape()) + " is smaller than the minimum crop");
  }
  TensorF first = one_view(image, policy, rng);
  TensorF second = one_view(image, policy, rng);
  return {std::move(first), std::move(second)};
}

MixResult mixup(const TensorF& batch, std::vector<float> lambdas, std::vector<std::size_t> permutation) {
  if (batch.rank() != 4) throw ShapeError("mixup: expected BxCxHxW batch, got " + shape_string(batch.shape()));
  const Index b = batch.dim(0);
  if (b < 2) throw std::invalid_argument("mixup: batch size must be >= 2");
  if (static_cast<Index>(lambdas.size()) != b || static_cast<Index>(permutation.size()) != b) {
    throw std::invalid_argument("mixup: need one lambda and one partner per sample");
  }
  std::vector<bool> used(static_cast<std::size_t>(b), false);
  for (auto j : permutation) {
    if (j >= static_cast<std::size_t>(b) || used[j]) throw std::invalid_argument("mixup: invalid permutation");
    used[j] = true;
  }
  for (float l : lambdas) {
    if (!(l >= 0.0f && l <= 1.0f)) throw std::invalid_argument("mixup: lambda outside [0, 1]");
  }

  const Index per = batch.size() / b;
  MixResult r;
  r.mixed_batch = TensorF(batch.shape());
  r.virtual_labels = TensorF({b, b});
  for (Index i = 0; i < b; ++i) {
    const float l = lambdas[static_cast<std::size_t>(i)];
    const auto j = static_cast<Index>(permutation[static_cast<std::size_t>(i)]);
    r.mixed_batch.array().segment(i * per, per) =
        l * batch.array().segment(i * per, per) + (1.0f - l) * batch.array().segment(j * per, per);
    r.virtual_labels.at(i, i) += l;
    r.virtual_labels.at(i, j) += 1.0f - l;
  }
  r.lambdas = std::move(lambdas);
  r.permutation = std::move(permutation);
  return r;
}

MixResult mixup(const TensorF& batch, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw std::invalid_argument("mixup: alpha must be positive");
  if (batch.rank() != 4 || batch.dim(0) < 2) throw std::invalid_argument("mixup: batch size must be >= 2");
  const auto b = static_cast<std::size_t>(batch.dim(0));
  std::vector<float> lambdas(b);
  for (auto& l : lambdas) l = static_cast<float>(rng.beta(alpha, alpha));
  return mixup(batch, std::move(lambdas), rng.permutation(b));
}

}  // namespace swardmix
