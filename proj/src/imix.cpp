#include "swardmix/imix.hpp"

#include <stdexcept>

namespace swardmix {

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("contrastive config: temperature must be positive");
  if (!(alpha > 0.0)) throw std::invalid_argument("contrastive config: alpha must be positive");
  if (batch_size < 2) throw std::invalid_argument("contrastive config: batch_size must be >= 2");
  if (fixed_lambda && !(*fixed_lambda >= 0.0f && *fixed_lambda <= 1.0f)) {
    throw std::invalid_argument("contrastive config: fixed lambda must lie in [0, 1]");
  }
}

TensorF stack_images(const std::vector<TensorF>& images) {
  if (images.empty()) throw std::invalid_argument("stack_images: no images");
  const Shape& s = images.front().shape();
  const Index per = images.front().size();
  Shape out_shape{static_cast<Index>(images.size())};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  TensorF out(out_shape);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) {
      throw ShapeError("stack_images: image " + std::to_string(i) + " has shape " + shape_string(images[i].shape()) +
                       ", expected " + shape_string(s));
    }
    out.array().segment(static_cast<Index>(i) * per, per) = images[i].array();
  }
  return out;
}

std::vector<std::string> pretrain_parameters(const ModelConfig& config) {
  std::vector<std::string> names;
  for (const auto& spec : architecture(config)) {
    if (spec.trunk || spec.name.rfind("proj.", 0) == 0) names.push_back(spec.name);
  }
  return names;
}

PretrainStepResult pretrain_step(const Checkpoint& ckpt, const std::vector<TensorF>& raw_batch,
                                 const AugmentPolicy& policy, const ContrastiveConfig& config, Rng& rng) {
  config.validate();
  if (raw_batch.size() < 2) throw std::invalid_argument("pretrain_step: batch size must be >= 2");
  if (!ckpt.config.projection_head) throw CompatibilityError("pretrain_step: checkpoint has no projection head");

  std::vector<TensorF> anchors, positives;
  for (const auto& image : raw_batch) {
    auto [a, p] = two_views(image, policy, rng);
    anchors.push_back(std::move(a));
    positives.push_back(std::move(p));
  }
  const TensorF anchor_batch = stack_images(anchors);
  MixResult mix = config.fixed_lambda
                      ? mixup(anchor_batch, std::vector<float>(raw_batch.size(), *config.fixed_lambda),
                              rng.permutation(raw_batch.size()))
                      : mixup(anchor_batch, config.alpha, rng);

  const auto names = pretrain_parameters(ckpt.config);
  Tape<float> tape;
  Network<float> net(tape, ckpt, names);
  auto za = net.project(net.encode(tape.constant(std::move(mix.mixed_batch))));
  auto zp = net.project(net.encode(tape.constant(stack_images(positives))));
  auto logits = npair_logits(za, zp, static_cast<float>(config.temperature));
  auto loss = imix_loss(logits, mix.virtual_labels);
  tape.backward(loss);

  PretrainStepResult result;
  result.loss = loss.value()[0];
  for (const auto& name : names) result.gradients.emplace(name, net.param(name).grad());
  return result;
}

}  // namespace swardmix
