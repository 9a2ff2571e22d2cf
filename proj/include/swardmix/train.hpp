#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "swardmix/augment.hpp"
#include "swardmix/autodiff.hpp"
#include "swardmix/data.hpp"
#include "swardmix/imix.hpp"
#include "swardmix/model.hpp"

namespace swardmix {

enum class Phase { pretrain, finetune };

struct LossWeights {
  double composition = 1.0;
  double mass = 1.0;
  double height = 1.0;
};

struct TrainConfig {
  Phase phase = Phase::finetune;
  int epochs = 40;
  int batch_size = 8;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  ContrastiveConfig contrastive;  // pretrain only
  LossWeights loss_weights;       // finetune only
  int eval_every = 1;
  /// Wall time makes logs differ run to run, so it is opt-in.
  bool record_wall_time = false;
  /// Per-epoch progress lines on stderr.
  bool verbose = false;
  /// Hash of the fully resolved run configuration; computed from this
  /// struct when left empty.
  std::string config_hash;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const AugmentPolicy& p);
void from_json(const nlohmann::json& j, AugmentPolicy& p);

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> wall_time_s;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct TrainLog {
  std::vector<EpochLog> epochs;

  /// One JSON object per line, one line per epoch.
  std::string to_jsonl() const;
  static TrainLog from_jsonl(const std::string& text);
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

/// sqrt(mean((pred − target)²)) as a differentiable scalar.
template <typename Scalar>
Var<Scalar> rmse_objective(Var<Scalar> pred, Var<Scalar> target) {
  return rmse(pred, target);
}

/// i-Mix pretraining over `unlabeled.unlabeled_paths`.
TrainResult pretrain(const TrainConfig& config, ModelConfig model_config, const Manifest& unlabeled,
                     const AugmentPolicy& policy);

/// Supervised fine-tuning on the train split with model selection on the val
/// split (best val loss). `init`, when given, seeds the trunk via
/// transfer_weights; heads are always freshly initialized.
TrainResult finetune(const TrainConfig& config, ModelConfig model_config, const Manifest& labeled,
                     const std::optional<Checkpoint>& init);

/// Decodes and, if needed, resizes images to size×size.
std::vector<TensorF> load_images(const Manifest& manifest, const std::vector<std::string>& paths, int size);

}  // namespace swardmix
