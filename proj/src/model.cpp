#include "swardmix/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "swardmix/errors.hpp"
#include "swardmix/rng.hpp"

namespace swardmix {

using nlohmann::json;

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw std::invalid_argument(std::string("model config: ") + what + " must be >= 1");
  };
  positive(input_size, "input_size");
  positive(input_channels, "input_channels");
  positive(embedding_dim, "embedding_dim");
  positive(projection_dim, "projection_dim");
  if (conv_channels.empty()) throw std::invalid_argument("model config: conv_channels must not be empty");
  for (int c : conv_channels) positive(c, "conv_channels entry");
  if (n_species != 3 && n_species != 4) throw std::invalid_argument("model config: n_species must be 3 or 4");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"input_size", c.input_size},
           {"input_channels", c.input_channels},
           {"conv_channels", c.conv_channels},
           {"embedding_dim", c.embedding_dim},
           {"projection_dim", c.projection_dim},
           {"n_species", c.n_species},
           {"predict_scalars", c.predict_scalars},
           {"projection_head", c.projection_head}};
}

void from_json(const json& j, ModelConfig& c) {
  ModelConfig d;
  c.input_size = j.value("input_size", d.input_size);
  c.input_channels = j.value("input_channels", d.input_channels);
  c.conv_channels = j.value("conv_channels", d.conv_channels);
  c.embedding_dim = j.value("embedding_dim", d.embedding_dim);
  c.projection_dim = j.value("projection_dim", d.projection_dim);
  c.n_species = j.value("n_species", d.n_species);
  c.predict_scalars = j.value("predict_scalars", d.predict_scalars);
  c.projection_head = j.value("projection_head", d.projection_head);
}

void to_json(json& j, const NormStats& s) {
  j = json{{"mass_min", s.mass_min}, {"mass_max", s.mass_max}, {"height_min", s.height_min}, {"height_max", s.height_max}};
}

void from_json(const json& j, NormStats& s) {
  s.mass_min = j.at("mass_min").get<double>();
  s.mass_max = j.at("mass_max").get<double>();
  s.height_min = j.at("height_min").get<double>();
  s.height_max = j.at("height_max").get<double>();
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::random_init: return "random_init";
    case Provenance::imix_pretrained: return "imix_pretrained";
    case Provenance::finetuned: return "finetuned";
  }
  return "unknown";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "random_init") return Provenance::random_init;
  if (s == "imix_pretrained") return Provenance::imix_pretrained;
  if (s == "finetuned") return Provenance::finetuned;
  throw InputError("unknown checkpoint provenance '" + s + "'");
}

std::vector<ParamSpec> architecture(const ModelConfig& config) {
  config.validate();
  std::vector<ParamSpec> specs;
  Index in_ch = config.input_channels;
  for (std::size_t i = 0; i < config.conv_channels.size(); ++i) {
    const Index out_ch = config.conv_channels[i];
    const std::string prefix = "trunk.conv" + std::to_string(i);
    specs.push_back({prefix + ".weight", {out_ch, in_ch, 3, 3}, in_ch * 9, false, true});
    specs.push_back({prefix + ".bias", {out_ch}, in_ch * 9, true, true});
    in_ch = out_ch;
  }
  const Index emb = config.embedding_dim;
  specs.push_back({"trunk.embed.weight", {in_ch, emb}, in_ch, false, true});
  specs.push_back({"trunk.embed.bias", {emb}, in_ch, true, true});
  if (config.projection_head) {
    const Index proj = config.projection_dim;
    specs.push_back({"proj.fc1.weight", {emb, emb}, emb, false, false});
    specs.push_back({"proj.fc1.bias", {emb}, emb, true, false});
    specs.push_back({"proj.fc2.weight", {emb, proj}, emb, false, false});
    specs.push_back({"proj.fc2.bias", {proj}, emb, true, false});
  }
  specs.push_back({"head.composition.weight", {emb, config.n_species}, emb, false, false});
  specs.push_back({"head.composition.bias", {config.n_species}, emb, true, false});
  if (config.predict_scalars) {
    specs.push_back({"head.scalars.weight", {emb, 2}, emb, false, false});
    specs.push_back({"head.scalars.bias", {2}, emb, true, false});
  }
  return specs;
}

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(params.begin(), params.end(), [&](const NamedTensor& p) { return p.name == name; });
}

const TensorF& Checkpoint::param(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p.value;
  }
  throw CompatibilityError("checkpoint has no parameter '" + name + "'");
}

TensorF& Checkpoint::param(const std::string& name) {
  return const_cast<TensorF&>(std::as_const(*this).param(name));
}

void Checkpoint::validate() const {
  const auto specs = architecture(config);
  if (specs.size() != params.size()) {
    throw CompatibilityError("checkpoint has " + std::to_string(params.size()) + " parameters, architecture expects " +
                             std::to_string(specs.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (params[i].name != specs[i].name) {
      throw CompatibilityError("parameter " + std::to_string(i) + " is '" + params[i].name + "', expected '" +
                               specs[i].name + "'");
    }
    if (params[i].value.shape() != specs[i].shape) {
      throw CompatibilityError("parameter '" + specs[i].name + "' has shape " + shape_string(params[i].value.shape()) +
                               ", expected " + shape_string(specs[i].shape));
    }
  }
  if (stats && !config.predict_scalars) {
    throw CompatibilityError("normalization stats present but scalar head disabled");
  }
}

Checkpoint build(const ModelConfig& config, std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.seed = seed;
  ckpt.provenance = Provenance::random_init;
  Rng rng(seed);
  for (const auto& spec : architecture(config)) {
    TensorF t(spec.shape);
    if (!spec.is_bias) {
      const double stddev = std::sqrt(2.0 / static_cast<double>(spec.fan_in));
      for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal(0.0, stddev));
    }
    ckpt.params.push_back({spec.name, std::move(t)});
  }
  return ckpt;
}

Checkpoint transfer_weights(const Checkpoint& pretrained, ModelConfig target, std::uint64_t seed) {
  target.projection_head = false;
  Checkpoint out = build(target, seed);
  for (const auto& spec : architecture(target)) {
    if (!spec.trunk) continue;
    if (!pretrained.has(spec.name)) {
      throw CompatibilityError("trunk parameter '" + spec.name + "' missing from pretrained checkpoint");
    }
    const TensorF& src = pretrained.param(spec.name);
    if (src.shape() != spec.shape) {
      throw CompatibilityError("trunk parameter '" + spec.name + "' has shape " + shape_string(src.shape()) +
                               ", target expects " + shape_string(spec.shape));
    }
    out.param(spec.name) = src;
  }
  // Any extra pretrained conv layer means a different trunk depth.
  const std::string extra = "trunk.conv" + std::to_string(target.conv_channels.size()) + ".weight";
  if (pretrained.has(extra)) throw CompatibilityError("trunk parameter '" + extra + "' has no counterpart in target");
  return out;
}

namespace {

constexpr char kMagic[4] = {'S', 'W', 'R', 'D'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& in, std::size_t& pos, int bytes) {
  if (pos + static_cast<std::size_t>(bytes) > in.size()) throw InputError("checkpoint is truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += static_cast<std::size_t>(bytes);
  return v;
}

json metadata(const Checkpoint& ckpt) {
  json params = json::array();
  for (const auto& p : ckpt.params) params.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  return json{{"format_version", Checkpoint::kFormatVersion},
              {"config", ckpt.config},
              {"parameters", params},
              {"stats", ckpt.stats ? json(*ckpt.stats) : json(nullptr)},
              {"provenance", to_string(ckpt.provenance)},
              {"seed", ckpt.seed}};
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  ckpt.validate();
  const std::string meta = metadata(ckpt).dump();
  std::string out(kMagic, 4);
  put_u32(out, Checkpoint::kFormatVersion);
  put_u64(out, meta.size());
  out += meta;
  for (const auto& p : ckpt.params) {
    for (Index i = 0; i < p.value.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(p.value[i]));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, kMagic, 4) != 0) throw InputError("not a checkpoint (bad magic)");
  std::size_t pos = 4;
  const auto version = static_cast<std::uint32_t>(get_le(bytes, pos, 4));
  if (version != Checkpoint::kFormatVersion) {
    throw CompatibilityError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto meta_len = get_le(bytes, pos, 8);
  if (pos + meta_len > bytes.size()) throw InputError("checkpoint is truncated");
  json meta;
  try {
    meta = json::parse(bytes.substr(pos, meta_len));
  } catch (const json::exception& e) {
    throw InputError(std::string("checkpoint metadata: ") + e.what());
  }
  pos += meta_len;

  Checkpoint ckpt;
  try {
    ckpt.config = meta.at("config").get<ModelConfig>();
    if (!meta.at("stats").is_null()) ckpt.stats = meta.at("stats").get<NormStats>();
    ckpt.provenance = provenance_from_string(meta.at("provenance").get<std::string>());
    ckpt.seed = meta.at("seed").get<std::uint64_t>();
    for (const auto& p : meta.at("parameters")) {
      TensorF t(p.at("shape").get<Shape>());
      for (Index i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, pos, 4)));
      ckpt.params.push_back({p.at("name").get<std::string>(), std::move(t)});
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("checkpoint metadata: ") + e.what());
  }
  if (pos != bytes.size()) throw InputError("checkpoint has trailing bytes");
  ckpt.validate();
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot write checkpoint '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw InputError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

namespace {

TensorF run_head(const Checkpoint& ckpt, const TensorF& input, int which) {
  Tape<float> tape;
  Network<float> net(tape, ckpt);
  auto x = tape.constant(input);
  switch (which) {
    case 0: return net.encode(x).value();
    case 1: return net.project(x).value();
    case 2: return net.predict_composition(x).value();
    default: return net.predict_scalars(x).value();
  }
}

}  // namespace

TensorF encode(const Checkpoint& ckpt, const TensorF& batch) { return run_head(ckpt, batch, 0); }
TensorF project(const Checkpoint& ckpt, const TensorF& embeddings) { return run_head(ckpt, embeddings, 1); }
TensorF predict_composition(const Checkpoint& ckpt, const TensorF& embeddings) { return run_head(ckpt, embeddings, 2); }
TensorF predict_scalars(const Checkpoint& ckpt, const TensorF& embeddings) { return run_head(ckpt, embeddings, 3); }

HerbageEstimate denormalize(const Checkpoint& ckpt, const TensorF& scalars) {
  if (!ckpt.stats) throw CompatibilityError("checkpoint has no normalization stats");
  if (scalars.rank() != 2 || scalars.dim(1) != 2) throw ShapeError("denormalize: expected Bx2, got " + shape_string(scalars.shape()));
  HerbageEstimate out;
  for (Index r = 0; r < scalars.dim(0); ++r) {
    out.mass.push_back(ckpt.stats->denormalize_mass(scalars.at(r, 0)));
    out.height.push_back(ckpt.stats->denormalize_height(scalars.at(r, 1)));
  }
  return out;
}

}  // namespace swardmix
