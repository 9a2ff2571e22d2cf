#pragma once

// Encoder trunk plus three heads:
//   trunk       conv blocks (3x3, stride 1, pad 1, ReLU, 2x2 max-pool) ->
//               global average pool -> dense to embedding_dim
//   projection  dense -> ReLU -> dense -> l2_normalize (contrastive space)
//   composition dense -> softmax (fractions; x100 for percentages)
//   scalars     dense -> sigmoid (normalized herbage mass, height)

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "swardmix/autodiff.hpp"
#include "swardmix/norm.hpp"
#include "swardmix/tensor.hpp"

namespace swardmix {

struct ModelConfig {
  int input_size = 32;
  int input_channels = 3;
  std::vector<int> conv_channels{16, 32, 64};
  int embedding_dim = 64;
  int projection_dim = 32;
  int n_species = 3;
  bool predict_scalars = true;
  bool projection_head = true;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const NormStats& s);
void from_json(const nlohmann::json& j, NormStats& s);

enum class Provenance { random_init, imix_pretrained, finetuned };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct ParamSpec {
  std::string name;
  Shape shape;
  Index fan_in;
  bool is_bias;
  bool trunk;
};

/// Parameter names and shapes for a config, in canonical (serialization) order.
std::vector<ParamSpec> architecture(const ModelConfig& config);

struct NamedTensor {
  std::string name;
  TensorF value;
};

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelConfig config;
  std::vector<NamedTensor> params;
  std::optional<NormStats> stats;
  Provenance provenance = Provenance::random_init;
  std::uint64_t seed = 0;

  bool has(const std::string& name) const;
  const TensorF& param(const std::string& name) const;
  TensorF& param(const std::string& name);

  /// Throws CompatibilityError unless params match architecture(config)
  /// exactly (names, order, shapes) and stats are only set with scalar heads.
  void validate() const;
};

/// Random initialization: He-normal weights (std = sqrt(2/fan_in)), zero biases.
Checkpoint build(const ModelConfig& config, std::uint64_t seed);

/// Fresh checkpoint for `target` (heads seeded from `seed`) with every trunk
/// parameter copied bit-for-bit from `pretrained`. The projection head is
/// dropped. Throws CompatibilityError naming the first differing parameter.
Checkpoint transfer_weights(const Checkpoint& pretrained, ModelConfig target, std::uint64_t seed);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Checkpoint parameters bound onto a tape. Names listed in `trainable`
/// become gradient-tracked leaves, everything else is a constant. Parameters
/// are cast from float to Scalar so the same network can be evaluated in
/// double by test oracles.
template <typename Scalar>
class Network {
 public:
  Network(Tape<Scalar>& tape, const Checkpoint& ckpt, const std::vector<std::string>& trainable = {})
      : config_(ckpt.config) {
    for (const auto& p : ckpt.params) {
      const bool train = std::find(trainable.begin(), trainable.end(), p.name) != trainable.end();
      auto value = p.value.template cast<Scalar>();
      vars_.emplace(p.name, train ? tape.parameter(std::move(value)) : tape.constant(std::move(value)));
    }
  }

  const ModelConfig& config() const { return config_; }
  const std::map<std::string, Var<Scalar>>& params() const { return vars_; }

  Var<Scalar> param(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw CompatibilityError("checkpoint has no parameter '" + name + "'");
    return it->second;
  }

  /// B×C×H×W -> B×embedding_dim.
  Var<Scalar> encode(Var<Scalar> batch) const {
    const auto& s = batch.shape();
    if (s.size() != 4 || s[1] != config_.input_channels || s[2] != config_.input_size ||
        s[3] != config_.input_size) {
      throw ShapeError("encode: expected Bx" + std::to_string(config_.input_channels) + "x" +
                       std::to_string(config_.input_size) + "x" + std::to_string(config_.input_size) + ", got " +
                       shape_string(s));
    }
    Var<Scalar> x = batch;
    for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) {
      const std::string prefix = "trunk.conv" + std::to_string(i);
      x = conv2d(x, param(prefix + ".weight"), 1, 1);
      x = add_channel_bias(x, param(prefix + ".bias"));
      x = relu(x);
      if (x.shape()[2] >= 2 && x.shape()[3] >= 2) x = max_pool2d(x, 2, 2);
    }
    x = global_avg_pool(x);
    return dense(x, param("trunk.embed.weight"), param("trunk.embed.bias"));
  }

  /// B×E -> B×projection_dim with unit rows.
  Var<Scalar> project(Var<Scalar> embeddings) const {
    check_embeddings(embeddings, "project");
    auto h = relu(dense(embeddings, param("proj.fc1.weight"), param("proj.fc1.bias")));
    auto z = dense(h, param("proj.fc2.weight"), param("proj.fc2.bias"));
    return l2_normalize(z, Scalar(1e-12));
  }

  /// B×E -> B×n_species fractions (rows sum to 1).
  Var<Scalar> composition_fractions(Var<Scalar> embeddings) const {
    check_embeddings(embeddings, "predict_composition");
    return softmax(dense(embeddings, param("head.composition.weight"), param("head.composition.bias")));
  }

  /// B×E -> B×n_species percentages (rows sum to 100).
  Var<Scalar> predict_composition(Var<Scalar> embeddings) const {
    return scale(composition_fractions(embeddings), Scalar(100));
  }

  /// B×E -> B×2 normalized (mass, height) in (0, 1).
  Var<Scalar> predict_scalars(Var<Scalar> embeddings) const {
    if (!config_.predict_scalars) throw CompatibilityError("predict_scalars: scalar head is disabled");
    check_embeddings(embeddings, "predict_scalars");
    return sigmoid(dense(embeddings, param("head.scalars.weight"), param("head.scalars.bias")));
  }

 private:
  void check_embeddings(Var<Scalar> e, const char* op) const {
    const auto& s = e.shape();
    if (s.size() != 2 || s[1] != config_.embedding_dim) {
      throw ShapeError(std::string(op) + ": expected Bx" + std::to_string(config_.embedding_dim) + " embeddings, got " +
                       shape_string(s));
    }
  }

  ModelConfig config_;
  std::map<std::string, Var<Scalar>> vars_;
};

// Gradient-free float inference helpers.

TensorF encode(const Checkpoint& ckpt, const TensorF& batch);
TensorF project(const Checkpoint& ckpt, const TensorF& embeddings);
TensorF predict_composition(const Checkpoint& ckpt, const TensorF& embeddings);
TensorF predict_scalars(const Checkpoint& ckpt, const TensorF& embeddings);

struct HerbageEstimate {
  std::vector<double> mass;    // kg DM/ha
  std::vector<double> height;  // cm
};

/// Maps B×2 normalized scalars back to kg DM/ha and cm using the checkpoint's stats.
HerbageEstimate denormalize(const Checkpoint& ckpt, const TensorF& scalars);

}  // namespace swardmix
