#include "swardmix/train.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>

#include "swardmix/errors.hpp"
#include "swardmix/optim.hpp"

namespace swardmix {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 1 || (phase == Phase::pretrain && batch_size < 2)) {
    throw std::invalid_argument("train config: batch_size must be >= 2 for pretraining and >= 1 otherwise");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  if (momentum < 0.0 || weight_decay < 0.0) throw std::invalid_argument("train config: momentum/weight_decay must be >= 0");
  if (eval_every < 1) throw std::invalid_argument("train config: eval_every must be >= 1");
  if (phase == Phase::pretrain) contrastive.validate();
  const auto& w = loss_weights;
  if (w.composition < 0.0 || w.mass < 0.0 || w.height < 0.0) throw std::invalid_argument("train config: loss weights must be >= 0");
  if (phase == Phase::finetune && w.composition + w.mass + w.height <= 0.0) {
    throw std::invalid_argument("train config: loss weights must not all be zero");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"phase", c.phase == Phase::pretrain ? "pretrain" : "finetune"},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"momentum", c.momentum},
           {"weight_decay", c.weight_decay},
           {"seed", c.seed},
           {"eval_every", c.eval_every},
           {"record_wall_time", c.record_wall_time}};
  if (c.phase == Phase::pretrain) {
    j["temperature"] = c.contrastive.temperature;
    j["alpha"] = c.contrastive.alpha;
  } else {
    j["composition_w"] = c.loss_weights.composition;
    j["mass_w"] = c.loss_weights.mass;
    j["height_w"] = c.loss_weights.height;
  }
}

void from_json(const json& j, TrainConfig& c) {
  if (j.contains("phase")) c.phase = j.at("phase").get<std::string>() == "pretrain" ? Phase::pretrain : Phase::finetune;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.record_wall_time = j.value("record_wall_time", c.record_wall_time);
  c.contrastive.temperature = j.value("temperature", c.contrastive.temperature);
  c.contrastive.alpha = j.value("alpha", c.contrastive.alpha);
  c.contrastive.batch_size = c.batch_size;
  c.loss_weights.composition = j.value("composition_w", c.loss_weights.composition);
  c.loss_weights.mass = j.value("mass_w", c.loss_weights.mass);
  c.loss_weights.height = j.value("height_w", c.loss_weights.height);
}

void to_json(json& j, const AugmentPolicy& p) {
  j = json{{"crop_scale_range", {p.crop_scale_min, p.crop_scale_max}},
           {"horizontal_flip_p", p.horizontal_flip_p},
           {"vertical_flip_p", p.vertical_flip_p},
           {"brightness_jitter", p.brightness_jitter},
           {"channel_jitter", p.channel_jitter},
           {"output_size", p.output_size}};
}

void from_json(const json& j, AugmentPolicy& p) {
  if (j.contains("crop_scale_range")) {
    const auto& r = j.at("crop_scale_range");
    p.crop_scale_min = r.at(0).get<double>();
    p.crop_scale_max = r.at(1).get<double>();
  }
  p.horizontal_flip_p = j.value("horizontal_flip_p", p.horizontal_flip_p);
  p.vertical_flip_p = j.value("vertical_flip_p", p.vertical_flip_p);
  p.brightness_jitter = j.value("brightness_jitter", p.brightness_jitter);
  p.channel_jitter = j.value("channel_jitter", p.channel_jitter);
  p.output_size = j.value("output_size", p.output_size);
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    json j{{"epoch", e.epoch},
           {"train_loss", e.train_loss},
           {"val_loss", e.val_loss ? json(*e.val_loss) : json(nullptr)},
           {"seed", e.seed},
           {"config_hash", e.config_hash}};
    if (e.wall_time_s) j["wall_time_s"] = *e.wall_time_s;
    out += j.dump() + "\n";
  }
  return out;
}

TrainLog TrainLog::from_jsonl(const std::string& text) {
  TrainLog log;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    EpochLog e;
    e.epoch = j.at("epoch").get<int>();
    e.train_loss = j.at("train_loss").get<double>();
    if (!j.at("val_loss").is_null()) e.val_loss = j.at("val_loss").get<double>();
    if (j.contains("wall_time_s")) e.wall_time_s = j.at("wall_time_s").get<double>();
    e.seed = j.at("seed").get<std::uint64_t>();
    e.config_hash = j.at("config_hash").get<std::string>();
    log.epochs.push_back(std::move(e));
  }
  return log;
}

std::vector<TensorF> load_images(const Manifest& manifest, const std::vector<std::string>& paths, int size) {
  std::vector<TensorF> out;
  out.reserve(paths.size());
  for (const auto& p : paths) {
    TensorF img = decode_image(manifest.resolve(p));
    if (img.dim(1) != size || img.dim(2) != size) img = resize_bilinear(img, size);
    out.push_back(std::move(img));
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

std::string resolve_hash(const TrainConfig& config, const ModelConfig& model, const json& extra) {
  if (!config.config_hash.empty()) return config.config_hash;
  return fnv1a_hex(json{{"train", config}, {"model", model}, {"extra", extra}}.dump());
}

void apply_step(Sgd& opt, Checkpoint& ckpt, const std::vector<std::string>& names,
                const std::map<std::string, TensorF>& grads) {
  for (const auto& name : names) opt.step(name, ckpt.param(name), grads.at(name));
}

Sgd make_optimizer(const TrainConfig& config, const Checkpoint& ckpt, const std::vector<std::string>& names) {
  Sgd opt({static_cast<float>(config.lr), static_cast<float>(config.momentum), static_cast<float>(config.weight_decay)});
  for (const auto& name : names) opt.add(name, ckpt.param(name).shape());
  return opt;
}

std::vector<std::vector<std::size_t>> batches(std::vector<std::size_t> order, std::size_t batch_size, std::size_t min_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    if (end - start < min_size) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace

TrainResult pretrain(const TrainConfig& config_in, ModelConfig model_config, const Manifest& unlabeled,
                     const AugmentPolicy& policy) {
  TrainConfig config = config_in;
  config.phase = Phase::pretrain;
  config.contrastive.batch_size = config.batch_size;
  config.validate();
  policy.validate();
  if (unlabeled.unlabeled_paths.empty()) throw InputError("pretrain: unlabeled manifest is empty");
  if (policy.output_size != model_config.input_size) {
    throw std::invalid_argument("pretrain: augment output_size must equal the model input_size");
  }
  if (unlabeled.unlabeled_paths.size() < 2) throw InputError("pretrain: need at least two unlabeled images");
  model_config.projection_head = true;

  const auto images = load_images(unlabeled, unlabeled.unlabeled_paths, model_config.input_size);
  TrainResult result{build(model_config, config.seed), {}};
  const auto names = pretrain_parameters(model_config);
  Sgd opt = make_optimizer(config, result.checkpoint, names);
  const std::string hash = resolve_hash(config, model_config, json(policy));
  Rng rng(config.seed);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = Clock::now();
    double total = 0.0;
    int steps = 0;
    for (const auto& batch : batches(rng.permutation(images.size()), static_cast<std::size_t>(config.batch_size), 2)) {
      std::vector<TensorF> raw;
      for (auto i : batch) raw.push_back(images[i]);
      const auto step = pretrain_step(result.checkpoint, raw, policy, config.contrastive, rng);
      apply_step(opt, result.checkpoint, names, step.gradients);
      total += step.loss;
      ++steps;
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = total / std::max(steps, 1);
    e.seed = config.seed;
    e.config_hash = hash;
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    if (config.record_wall_time) e.wall_time_s = secs;
    if (config.verbose) std::fprintf(stderr, "pretrain epoch %d/%d loss %.5f (%.1fs)\n", epoch, config.epochs, e.train_loss, secs);
    result.log.epochs.push_back(std::move(e));
  }
  result.checkpoint.provenance = Provenance::imix_pretrained;
  result.checkpoint.seed = config.seed;
  return result;
}

namespace {

struct LabeledSet {
  TensorF images;     // N×C×H×W
  TensorF fractions;  // N×S
  TensorF scalars;    // N×2 normalized, empty without scalar head
};

LabeledSet gather(const std::vector<TensorF>& images, const std::vector<const SampleRecord*>& records,
                  const std::vector<std::size_t>& idx, const Checkpoint& ckpt) {
  LabeledSet s;
  std::vector<TensorF> picked;
  const Index n = static_cast<Index>(idx.size());
  const Index species = ckpt.config.n_species;
  s.fractions = TensorF({n, species});
  if (ckpt.config.predict_scalars) s.scalars = TensorF({n, 2});
  for (Index k = 0; k < n; ++k) {
    const auto i = idx[static_cast<std::size_t>(k)];
    picked.push_back(images[i]);
    const auto& r = *records[i];
    for (Index c = 0; c < species; ++c) s.fractions.at(k, c) = static_cast<float>(r.fractions[static_cast<std::size_t>(c)]);
    if (ckpt.config.predict_scalars) {
      s.scalars.at(k, 0) = static_cast<float>(ckpt.stats->normalize_mass(*r.mass));
      s.scalars.at(k, 1) = static_cast<float>(ckpt.stats->normalize_height(*r.height));
    }
  }
  s.images = stack_images(picked);
  return s;
}

/// Weighted sum of per-task RMSEs recorded on `tape`.
Var<float> objective(Tape<float>& tape, const Network<float>& net, const LabeledSet& set, const LossWeights& w,
                     bool use_scalars) {
  auto emb = net.encode(tape.constant(set.images));
  Var<float> loss;
  auto accumulate = [&](Var<float> term, double weight) {
    if (weight <= 0.0) return;
    auto scaled = scale(term, static_cast<float>(weight));
    loss = loss.valid() ? add(loss, scaled) : scaled;
  };
  if (w.composition > 0.0) {
    accumulate(rmse_objective(net.composition_fractions(emb), tape.constant(set.fractions)), w.composition);
  }
  if (use_scalars && (w.mass > 0.0 || w.height > 0.0)) {
    auto pred = net.predict_scalars(emb);
    auto target = tape.constant(set.scalars);
    accumulate(rmse_objective(column(pred, 0), column(target, 0)), w.mass);
    accumulate(rmse_objective(column(pred, 1), column(target, 1)), w.height);
  }
  if (!loss.valid()) throw std::invalid_argument("finetune: no loss term is enabled for this schema");
  return loss;
}

}  // namespace

TrainResult finetune(const TrainConfig& config_in, ModelConfig model_config, const Manifest& labeled,
                     const std::optional<Checkpoint>& init) {
  TrainConfig config = config_in;
  config.phase = Phase::finetune;
  config.validate();
  model_config.n_species = species_count(labeled.schema);
  model_config.predict_scalars = labeled.schema == Schema::irish3;
  model_config.projection_head = false;

  const auto train_records = labeled.select(Split::train);
  const auto val_records = labeled.select(Split::val);
  if (train_records.empty()) throw InputError("finetune: labeled manifest has no train rows");

  TrainResult result;
  result.checkpoint = init ? transfer_weights(*init, model_config, config.seed) : build(model_config, config.seed);
  Checkpoint& ckpt = result.checkpoint;
  if (model_config.predict_scalars) {
    for (const auto* r : train_records) {
      if (!r->mass || !r->height) throw InputError("finetune: train row '" + r->image_path + "' lacks mass or height");
    }
    for (const auto* r : val_records) {
      if (!r->mass || !r->height) throw InputError("finetune: val row '" + r->image_path + "' lacks mass or height");
    }
    ckpt.stats = compute_norm_stats(labeled);
  }

  auto paths = [](const std::vector<const SampleRecord*>& rs) {
    std::vector<std::string> p;
    for (const auto* r : rs) p.push_back(r->image_path);
    return p;
  };
  const int size = model_config.input_size;
  const auto train_images = load_images(labeled, paths(train_records), size);
  const auto val_images = load_images(labeled, paths(val_records), size);
  std::optional<LabeledSet> val_set;
  if (!val_records.empty()) {
    std::vector<std::size_t> all(val_records.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    val_set = gather(val_images, val_records, all, ckpt);
  }

  const auto& w = config.loss_weights;
  std::vector<std::string> names;
  for (const auto& spec : architecture(model_config)) {
    const bool composition_head = spec.name.rfind("head.composition.", 0) == 0;
    const bool scalar_head = spec.name.rfind("head.scalars.", 0) == 0;
    if (composition_head && w.composition <= 0.0) continue;
    if (scalar_head && w.mass <= 0.0 && w.height <= 0.0) continue;
    names.push_back(spec.name);
  }
  Sgd opt = make_optimizer(config, ckpt, names);
  const std::string hash = resolve_hash(config, model_config, json{{"init", init ? to_string(init->provenance) : "none"}});
  Rng rng(mix_seed(config.seed, 0x66696e65));

  std::optional<double> best_val;
  Checkpoint best = ckpt;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = Clock::now();
    double total = 0.0;
    int steps = 0;
    for (const auto& batch : batches(rng.permutation(train_images.size()), static_cast<std::size_t>(config.batch_size), 1)) {
      const LabeledSet set = gather(train_images, train_records, batch, ckpt);
      Tape<float> tape;
      Network<float> net(tape, ckpt, names);
      auto loss = objective(tape, net, set, w, model_config.predict_scalars);
      tape.backward(loss);
      std::map<std::string, TensorF> grads;
      for (const auto& name : names) grads.emplace(name, net.param(name).grad());
      apply_step(opt, ckpt, names, grads);
      total += loss.value()[0];
      ++steps;
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = total / std::max(steps, 1);
    e.seed = config.seed;
    e.config_hash = hash;
    if (val_set && (epoch % config.eval_every == 0 || epoch == config.epochs)) {
      Tape<float> tape;
      Network<float> net(tape, ckpt);
      e.val_loss = objective(tape, net, *val_set, w, model_config.predict_scalars).value()[0];
      if (!best_val || *e.val_loss < *best_val) {
        best_val = e.val_loss;
        best = ckpt;
      }
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    if (config.record_wall_time) e.wall_time_s = secs;
    if (config.verbose) {
      std::fprintf(stderr, "finetune epoch %d/%d loss %.5f val %s (%.1fs)\n", epoch, config.epochs, e.train_loss,
                   e.val_loss ? std::to_string(*e.val_loss).c_str() : "-", secs);
    }
    result.log.epochs.push_back(std::move(e));
  }
  if (best_val) ckpt = std::move(best);
  ckpt.provenance = Provenance::finetuned;
  ckpt.seed = config.seed;
  return result;
}

}  // namespace swardmix
