#include <set>

#include "doctest.h"
#include "support.hpp"
#include "swardmix/errors.hpp"
#include "swardmix/model.hpp"
#include "swardmix/optim.hpp"

using namespace swardmix;

TEST_CASE("tensor basics") {
  TensorF t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.at(1, 0) == 4);
  CHECK(t.matrix()(0, 2) == 3);
  CHECK(t.reshaped({3, 2}).at(2, 1) == 6);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  CHECK_THROWS_AS(TensorF({2, 2}, {1, 2, 3}), ShapeError);
  CHECK(shape_string({2, 3}) == "[2x3]");
  TensorF n({2}, {1, std::nanf("")});
  CHECK_FALSE(n.all_finite());
}

TEST_CASE("rng is reproducible and streams differ") {
  Rng a(7), b(7), c(8);
  for (int i = 0; i < 10; ++i) {
    const double x = a.uniform();
    CHECK(x == b.uniform());
    CHECK(x != c.uniform());
  }
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
  Rng p(3);
  auto perm = p.permutation(10);
  CHECK(std::set<std::size_t>(perm.begin(), perm.end()).size() == 10);
}

TEST_CASE("beta draws have the right mean and range") {
  Rng rng(11);
  for (auto [a, b] : {std::pair{1.0, 1.0}, {2.0, 5.0}, {0.5, 0.5}}) {
    double s = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const double x = rng.beta(a, b);
      REQUIRE(x >= 0.0);
      REQUIRE(x <= 1.0);
      s += x;
    }
    CHECK(s / n == doctest::Approx(a / (a + b)).epsilon(0.02));
  }
  CHECK_THROWS(rng.beta(0.0, 1.0));
}

TEST_CASE("sgd follows the momentum recurrence") {
  Sgd opt({/*lr=*/0.1, /*momentum=*/0.9, /*weight_decay=*/0.01});
  opt.add("w", {2});
  TensorF p({2}, {1.0f, -2.0f});
  double v0 = 0, v1 = 0, p0 = 1, p1 = -2;
  for (int step = 0; step < 5; ++step) {
    TensorF g({2}, {0.5f * static_cast<float>(step), 1.0f});
    opt.step("w", p, g);
    v0 = 0.9 * v0 + 0.5 * step + 0.01 * p0;
    v1 = 0.9 * v1 + 1.0 + 0.01 * p1;
    p0 -= 0.1 * v0;
    p1 -= 0.1 * v1;
    CHECK(p[0] == doctest::Approx(p0).epsilon(1e-5));
    CHECK(p[1] == doctest::Approx(p1).epsilon(1e-5));
  }
  TensorF wrong({3});
  CHECK_THROWS(opt.step("w", p, wrong));
  CHECK_THROWS(opt.step("missing", p, p));
}

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_size = 16;
  c.conv_channels = {4, 8};
  c.embedding_dim = 8;
  c.projection_dim = 4;
  return c;
}

}  // namespace

TEST_CASE("architecture lists parameters in a fixed order") {
  auto specs = architecture(small_config());
  std::vector<std::string> names;
  for (const auto& s : specs) names.push_back(s.name);
  CHECK(names == std::vector<std::string>{"trunk.conv0.weight", "trunk.conv0.bias", "trunk.conv1.weight",
                                          "trunk.conv1.bias", "trunk.embed.weight", "trunk.embed.bias",
                                          "proj.fc1.weight", "proj.fc1.bias", "proj.fc2.weight", "proj.fc2.bias",
                                          "head.composition.weight", "head.composition.bias",
                                          "head.scalars.weight", "head.scalars.bias"});
  CHECK(specs[0].shape == Shape{4, 3, 3, 3});
  CHECK(specs[2].shape == Shape{8, 4, 3, 3});
  CHECK(specs[12].shape == Shape{8, 2});
}

TEST_CASE("model config validation") {
  auto c = small_config();
  c.conv_channels = {};
  CHECK_THROWS(c.validate());
  c = small_config();
  c.embedding_dim = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("build is seed deterministic with zero biases") {
  auto a = build(small_config(), 5), b = build(small_config(), 5), c = build(small_config(), 6);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
  CHECK(serialize_checkpoint(a) != serialize_checkpoint(c));
  CHECK(a.param("trunk.conv0.bias").array().abs().maxCoeff() == 0.0f);
  CHECK(a.param("trunk.conv0.weight").array().abs().maxCoeff() > 0.0f);
}

TEST_CASE("checkpoint round trip is byte identical") {
  auto ckpt = build(small_config(), 9);
  ckpt.stats = NormStats{100, 3000, 2, 15};
  ckpt.provenance = Provenance::finetuned;
  const auto bytes = serialize_checkpoint(ckpt);
  const auto back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.stats == ckpt.stats);
  CHECK(back.provenance == Provenance::finetuned);

  const auto dir = testing::temp_dir("ckpt");
  save_checkpoint(ckpt, (dir / "a.ckpt").string());
  save_checkpoint(load_checkpoint((dir / "a.ckpt").string()), (dir / "b.ckpt").string());
  CHECK(testing::read_file(dir / "a.ckpt") == testing::read_file(dir / "b.ckpt"));
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto bytes = serialize_checkpoint(build(small_config(), 1));
  CHECK_THROWS_AS(deserialize_checkpoint("NOPE" + bytes.substr(4)), InputError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), InputError);
  std::string wrong_version = bytes;
  wrong_version[4] = 7;
  CHECK_THROWS_AS(deserialize_checkpoint(wrong_version), CompatibilityError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), InputError);
}

TEST_CASE("transfer_weights copies the trunk and drops the projection head") {
  auto pre = build(small_config(), 2);
  pre.provenance = Provenance::imix_pretrained;
  auto target = small_config();
  target.n_species = 4;
  target.predict_scalars = false;
  const auto out = transfer_weights(pre, target, 3);
  CHECK_FALSE(out.config.projection_head);
  CHECK_FALSE(out.has("proj.fc1.weight"));
  for (const auto& spec : architecture(out.config)) {
    if (!spec.trunk) continue;
    CHECK(out.param(spec.name) == pre.param(spec.name));
  }
  CHECK(out.param("head.composition.weight").shape() == Shape{8, 4});

  auto wider = small_config();
  wider.conv_channels = {4, 16};
  CHECK_THROWS_AS(transfer_weights(pre, wider, 3), CompatibilityError);
  auto deeper = small_config();
  deeper.conv_channels = {4};
  CHECK_THROWS_AS(transfer_weights(pre, deeper, 3), CompatibilityError);
}

TEST_CASE("model output contracts") {
  auto ckpt = build(small_config(), 4);
  std::mt19937_64 gen(4);
  auto batch = testing::random_tensor<float>({5, 3, 16, 16}, gen, 0.0, 1.0);
  auto emb = encode(ckpt, batch);
  CHECK(emb.shape() == Shape{5, 8});
  auto comp = predict_composition(ckpt, emb);
  auto z = project(ckpt, emb);
  auto sc = predict_scalars(ckpt, emb);
  for (Index r = 0; r < 5; ++r) {
    CHECK(comp.matrix().row(r).sum() == doctest::Approx(100.0).epsilon(1e-5));
    CHECK(z.matrix().row(r).norm() == doctest::Approx(1.0).epsilon(1e-5));
  }
  CHECK((sc.array() > 0.0f).all());
  CHECK((sc.array() < 1.0f).all());
  CHECK_THROWS_AS(encode(ckpt, TensorF({1, 3, 8, 8})), ShapeError);
}

TEST_CASE("denormalize inverts min-max scaling") {
  auto ckpt = build(small_config(), 1);
  ckpt.stats = NormStats{500, 2500, 3, 13};
  auto est = denormalize(ckpt, TensorF({2, 2}, {0, 1, 0.5f, 0.25f}));
  CHECK(est.mass[0] == doctest::Approx(500));
  CHECK(est.height[0] == doctest::Approx(13));
  CHECK(est.mass[1] == doctest::Approx(1500));
  CHECK(est.height[1] == doctest::Approx(5.5));
}
