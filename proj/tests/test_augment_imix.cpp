#include "doctest.h"
#include "support.hpp"
#include "swardmix/augment.hpp"
#include "swardmix/imix.hpp"

using namespace swardmix;

TEST_CASE("identity policy views equal the input") {
  std::mt19937_64 gen(1);
  auto img = testing::random_tensor<float>({3, 12, 12}, gen, 0.0, 1.0);
  Rng rng(1);
  auto [a, b] = two_views(img, AugmentPolicy::identity(12), rng);
  CHECK(a == img);
  CHECK(b == img);
}

TEST_CASE("views are clamped, sized and seed reproducible") {
  std::mt19937_64 gen(2);
  auto img = testing::random_tensor<float>({3, 20, 24}, gen, 0.0, 1.0);
  AugmentPolicy policy;
  policy.output_size = 16;
  policy.brightness_jitter = 0.8;
  Rng r1(5), r2(5);
  for (int i = 0; i < 20; ++i) {
    auto [a, b] = two_views(img, policy, r1);
    auto [c, d] = two_views(img, policy, r2);
    CHECK(a.shape() == Shape{3, 16, 16});
    CHECK(a.array().minCoeff() >= 0.0f);
    CHECK(b.array().maxCoeff() <= 1.0f);
    CHECK(a == c);
    CHECK(b == d);
  }
}

TEST_CASE("crops too small to resample are rejected") {
  AugmentPolicy policy;
  policy.crop_scale_min = 0.01;
  policy.output_size = 8;
  Rng rng(1);
  CHECK_THROWS(two_views(TensorF({3, 10, 10}), policy, rng));
  policy.crop_scale_min = 1.5;
  CHECK_THROWS(policy.validate());
}

TEST_CASE("bilinear resize keeps constants and identity") {
  TensorF c = TensorF::constant({3, 7, 5}, 0.25f);
  auto r = resize_bilinear(c, 11);
  CHECK(r.shape() == Shape{3, 11, 11});
  CHECK((r.array() - 0.25f).abs().maxCoeff() < 1e-6f);
  std::mt19937_64 gen(3);
  auto img = testing::random_tensor<float>({3, 6, 6}, gen);
  CHECK(resize_bilinear(img, 6) == img);
}

TEST_CASE("mixup matches a hand computation") {
  // Two 1-pixel single-channel images, lambda = (0.3, 0.8), partners (1, 0).
  TensorF batch({2, 1, 1, 1}, {10, 20});
  auto m = mixup(batch, {0.3f, 0.8f}, {1, 0});
  CHECK(m.mixed_batch[0] == doctest::Approx(0.3 * 10 + 0.7 * 20));
  CHECK(m.mixed_batch[1] == doctest::Approx(0.8 * 20 + 0.2 * 10));
  CHECK(m.virtual_labels.at(0, 0) == doctest::Approx(0.3));
  CHECK(m.virtual_labels.at(0, 1) == doctest::Approx(0.7));
  CHECK(m.virtual_labels.at(1, 0) == doctest::Approx(0.2));
  CHECK(m.virtual_labels.at(1, 1) == doctest::Approx(0.8));
}

TEST_CASE("mixup properties") {
  std::mt19937_64 gen(4);
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    auto batch = testing::random_tensor<float>({6, 3, 4, 4}, gen, 0.0, 1.0);
    auto m = mixup(batch, 1.0, rng);
    for (Index i = 0; i < 6; ++i) {
      CHECK(m.virtual_labels.matrix().row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
      const auto j = static_cast<Index>(m.permutation[static_cast<std::size_t>(i)]);
      // Each mixed pixel lies between the two source pixels.
      for (Index k = 0; k < 48; ++k) {
        const float x = batch[i * 48 + k], y = batch[j * 48 + k], z = m.mixed_batch[i * 48 + k];
        CHECK(z >= std::min(x, y) - 1e-6f);
        CHECK(z <= std::max(x, y) + 1e-6f);
      }
    }
  }
  auto batch = testing::random_tensor<float>({3, 1, 2, 2}, gen);
  auto same = mixup(batch, {1.0f, 1.0f, 1.0f}, {2, 0, 1});
  CHECK(same.mixed_batch == batch);
  CHECK_THROWS(mixup(batch, {0.5f, 0.5f, 0.5f}, {0, 0, 1}));
  CHECK_THROWS(mixup(batch, {1.5f, 0.5f, 0.5f}, {0, 1, 2}));
  CHECK_THROWS(mixup(TensorF({1, 1, 2, 2}), {0.5f}, {0}));
}

TEST_CASE("imix loss closed forms") {
  Tape<double> t;
  // Diagonal logits 1/tau = 5 and zero off-diagonal, identity targets.
  auto logits = t.constant(TensorD({2, 2}, {5, 0, 0, 5}));
  auto loss = imix_loss(logits, TensorD({2, 2}, {1, 0, 0, 1})).value()[0];
  CHECK(loss == doctest::Approx(std::log1p(std::exp(-5.0))).epsilon(1e-12));
  CHECK(loss == doctest::Approx(0.0067153).epsilon(1e-4));

  // Uniform logits give log B for any row-stochastic target.
  auto flat = t.constant(TensorD::zeros({4, 4}));
  TensorD v({4, 4}, {0.5, 0.5, 0, 0, 0, 1, 0, 0, 0.1, 0.2, 0.3, 0.4, 0, 0, 0, 1});
  CHECK(imix_loss(flat, v).value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("imix loss is linear in the virtual labels") {
  std::mt19937_64 gen(5);
  Tape<double> t;
  auto logits = t.constant(testing::random_tensor({3, 3}, gen, -3, 3));
  TensorD a = TensorD::zeros({3, 3}), b = TensorD::zeros({3, 3});
  for (Index i = 0; i < 3; ++i) {
    a.at(i, i) = 1;
    b.at(i, (i + 1) % 3) = 1;
  }
  TensorD mixed(a.shape(), 0.3 * a.array() + 0.7 * b.array());
  const double la = imix_loss(logits, a).value()[0], lb = imix_loss(logits, b).value()[0];
  CHECK(imix_loss(logits, mixed).value()[0] == doctest::Approx(0.3 * la + 0.7 * lb).epsilon(1e-12));
}

TEST_CASE("imix input validation") {
  Tape<double> t;
  auto logits = t.constant(TensorD::zeros({2, 2}));
  CHECK_THROWS(imix_loss(logits, TensorD({2, 2}, {0.5, 0.4, 0, 1})));
  CHECK_THROWS(imix_loss(logits, TensorD::zeros({2, 3})));
  auto unnormalized = t.constant(TensorD({2, 2}, {1, 1, 0, 1}));
  CHECK_THROWS(npair_logits(unnormalized, unnormalized, 0.2));
  auto unit = t.constant(TensorD({2, 2}, {1, 0, 0, 1}));
  CHECK_THROWS(npair_logits(unit, unit, 0.0));
  ContrastiveConfig c;
  c.temperature = -1;
  CHECK_THROWS(c.validate());
}

TEST_CASE("pretrain step is seed deterministic and touches only trunk and projection") {
  ModelConfig mc;
  mc.input_size = 16;
  mc.conv_channels = {4, 8};
  mc.embedding_dim = 8;
  mc.projection_dim = 4;
  const auto ckpt = build(mc, 1);
  std::mt19937_64 gen(6);
  std::vector<TensorF> raw;
  for (int i = 0; i < 4; ++i) raw.push_back(testing::random_tensor<float>({3, 20, 20}, gen, 0.0, 1.0));
  AugmentPolicy policy;
  policy.output_size = 16;
  ContrastiveConfig cc;
  Rng r1(3), r2(3);
  auto a = pretrain_step(ckpt, raw, policy, cc, r1);
  auto b = pretrain_step(ckpt, raw, policy, cc, r2);
  CHECK(a.loss == b.loss);
  CHECK(std::isfinite(a.loss));
  CHECK(a.gradients.count("head.composition.weight") == 0);
  CHECK(a.gradients.count("proj.fc2.weight") == 1);
  for (const auto& [name, g] : a.gradients) CHECK(g == b.gradients.at(name));
}
