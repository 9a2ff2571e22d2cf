#include "doctest.h"
#include "support.hpp"
#include "swardmix/synth.hpp"
#include "swardmix/train.hpp"

using namespace swardmix;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.input_size = 16;
  c.conv_channels = {4, 8};
  c.embedding_dim = 8;
  c.projection_dim = 4;
  return c;
}

Manifest tiny_dataset(const std::string& name, Schema schema = Schema::irish3) {
  SynthOptions o;
  o.out_dir = testing::temp_dir(name).string();
  o.n_labeled = 6;
  o.n_val = 4;
  o.n_unlabeled = 8;
  o.size = 16;
  o.seed = 2;
  o.schema = schema;
  synth_dataset(o);
  return load_manifest(o.out_dir + "/manifest.csv");
}

TrainConfig quick(Phase phase, int epochs) {
  TrainConfig c;
  c.phase = phase;
  c.epochs = epochs;
  c.batch_size = 4;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("train config validation and json") {
  TrainConfig c;
  c.epochs = 0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.lr = -1;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.loss_weights.mass = 0.5;
  nlohmann::json j = c;
  CHECK(j.get<TrainConfig>().loss_weights.mass == 0.5);
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
}

TEST_CASE("log jsonl has one line per epoch and round trips") {
  TrainLog log;
  for (int e = 1; e <= 3; ++e) log.epochs.push_back({e, 1.0 / e, e == 2 ? std::optional<double>(0.5) : std::nullopt,
                                                     std::nullopt, 7, "abc"});
  const auto text = log.to_jsonl();
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  CHECK(TrainLog::from_jsonl(text).to_jsonl() == text);
}

TEST_CASE("pretrain produces a checkpoint with a projection head") {
  auto m = tiny_dataset("pretrain");
  Manifest u = load_unlabeled(m.base_dir + "/unlabeled.csv");
  AugmentPolicy policy;
  policy.output_size = 16;
  auto cfg = quick(Phase::pretrain, 3);
  auto r = pretrain(cfg, tiny(), u, policy);
  CHECK(r.checkpoint.provenance == Provenance::imix_pretrained);
  CHECK(r.log.epochs.size() == 3);
  CHECK(r.checkpoint.has("proj.fc1.weight"));
  for (const auto& e : r.log.epochs) CHECK(std::isfinite(e.train_loss));

  policy.output_size = 32;
  CHECK_THROWS(pretrain(cfg, tiny(), u, policy));
}

TEST_CASE("finetune transfers the trunk and trains the heads") {
  auto m = tiny_dataset("finetune");
  auto pre = build(tiny(), 1);
  pre.provenance = Provenance::imix_pretrained;
  auto cfg = quick(Phase::finetune, 1);
  cfg.lr = 1e-6;
  auto r = finetune(cfg, tiny(), m, pre);
  CHECK(r.checkpoint.provenance == Provenance::finetuned);
  const auto& trunk = r.checkpoint.param("trunk.conv0.weight");
  CHECK((trunk.array() - pre.param("trunk.conv0.weight").array()).abs().maxCoeff() < 1e-4f);
  CHECK((trunk.array() - build(tiny(), cfg.seed).param("trunk.conv0.weight").array()).abs().maxCoeff() > 1e-2f);
  CHECK_FALSE(r.checkpoint.has("proj.fc1.weight"));
  REQUIRE(r.checkpoint.stats.has_value());
  CHECK(*r.checkpoint.stats == compute_norm_stats(m));

  cfg.lr = 1e-2;
  cfg.epochs = 3;
  auto moved = finetune(cfg, tiny(), m, pre);
  CHECK_FALSE(moved.checkpoint.param("trunk.conv0.weight") == pre.param("trunk.conv0.weight"));
  CHECK(moved.log.epochs.size() == 3);
  CHECK(moved.log.epochs.back().val_loss.has_value());
}

TEST_CASE("zero loss weights freeze the matching heads") {
  auto m = tiny_dataset("weights");
  auto cfg = quick(Phase::finetune, 2);
  cfg.lr = 1e-2;
  cfg.weight_decay = 1e-2;
  cfg.loss_weights = {1.0, 0.0, 0.0};
  auto init = build(tiny(), 1);
  auto a = finetune(cfg, tiny(), m, init);
  auto fresh = transfer_weights(init, a.checkpoint.config, cfg.seed);
  CHECK(a.checkpoint.param("head.scalars.weight") == fresh.param("head.scalars.weight"));
  CHECK_FALSE(a.checkpoint.param("head.composition.weight") == fresh.param("head.composition.weight"));

  cfg.loss_weights = {0.0, 1.0, 0.0};
  auto b = finetune(cfg, tiny(), m, init);
  CHECK(b.checkpoint.param("head.composition.weight") == fresh.param("head.composition.weight"));

  cfg.loss_weights = {0.0, 0.0, 0.0};
  CHECK_THROWS(finetune(cfg, tiny(), m, init));
}

TEST_CASE("grassclover4 finetune has no scalar head") {
  auto m = tiny_dataset("gc4", Schema::grassclover4);
  auto r = finetune(quick(Phase::finetune, 1), tiny(), m, std::nullopt);
  CHECK(r.checkpoint.config.n_species == 4);
  CHECK_FALSE(r.checkpoint.config.predict_scalars);
  CHECK_FALSE(r.checkpoint.stats.has_value());
}

TEST_CASE("training is deterministic") {
  auto m = tiny_dataset("determinism");
  Manifest u = load_unlabeled(m.base_dir + "/unlabeled.csv");
  AugmentPolicy policy;
  policy.output_size = 16;
  auto p1 = pretrain(quick(Phase::pretrain, 2), tiny(), u, policy);
  auto p2 = pretrain(quick(Phase::pretrain, 2), tiny(), u, policy);
  CHECK(serialize_checkpoint(p1.checkpoint) == serialize_checkpoint(p2.checkpoint));
  CHECK(p1.log.to_jsonl() == p2.log.to_jsonl());
  auto f1 = finetune(quick(Phase::finetune, 2), tiny(), m, p1.checkpoint);
  auto f2 = finetune(quick(Phase::finetune, 2), tiny(), m, p2.checkpoint);
  CHECK(serialize_checkpoint(f1.checkpoint) == serialize_checkpoint(f2.checkpoint));
  CHECK(f1.log.to_jsonl() == f2.log.to_jsonl());
}
