#include "swardmix/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "swardmix/data.hpp"
#include "swardmix/errors.hpp"
#include "swardmix/metrics.hpp"
#include "swardmix/synth.hpp"

namespace swardmix {

using nlohmann::json;
namespace fs = std::filesystem;

RunConfig::RunConfig() {
  pretrain.phase = Phase::pretrain;
  pretrain.epochs = 20;
  pretrain.batch_size = 32;
  pretrain.contrastive.batch_size = 32;
  finetune.phase = Phase::finetune;
  finetune.epochs = 40;
  finetune.batch_size = 8;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("augment")) c.augment = j.at("augment").get<AugmentPolicy>();
  if (j.contains("pretrain")) j.at("pretrain").get_to(c.pretrain);
  if (j.contains("finetune")) j.at("finetune").get_to(c.finetune);
  c.pretrain.phase = Phase::pretrain;
  c.finetune.phase = Phase::finetune;
  c.augment.output_size = c.model.input_size;
  return c;
}

json RunConfig::to_json() const {
  return json{{"model", model}, {"augment", augment}, {"pretrain", pretrain}, {"finetune", finetune}};
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open config '" + path + "'");
  try {
    return from_json(json::parse(f));
  } catch (const json::exception& e) {
    throw InputError("config '" + path + "': " + e.what());
  }
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << text;
  if (!f) throw InputError("failed writing '" + path + "'");
}

/// Flat overrides shared by the training commands.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::vector<std::string> sets;  // section.key=value

  void attach(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Training seed");
    cmd->add_option("--epochs", epochs, "Number of epochs");
    cmd->add_option("--batch-size", batch_size, "Mini-batch size");
    cmd->add_option("--lr", lr, "Learning rate");
    cmd->add_option("--set", sets, "Override a config value, e.g. model.embedding_dim=32");
  }

  /// Applies overrides to the config JSON before it is parsed, so every
  /// override is validated the same way file values are.
  json apply(json j, const std::string& phase) const {
    auto set_path = [&](const std::string& dotted, const json& value) {
      json* node = &j;
      std::stringstream ss(dotted);
      std::string part;
      std::vector<std::string> parts;
      while (std::getline(ss, part, '.')) parts.push_back(part);
      if (parts.empty()) throw InputError("empty --set key");
      for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
      (*node)[parts.back()] = value;
    };
    if (seed) set_path(phase + ".seed", *seed);
    if (epochs) set_path(phase + ".epochs", *epochs);
    if (batch_size) set_path(phase + ".batch_size", *batch_size);
    if (lr) set_path(phase + ".lr", *lr);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw InputError("--set expects key=value, got '" + s + "'");
      const std::string key = s.substr(0, eq), raw = s.substr(eq + 1);
      json value = json::parse(raw, nullptr, false);
      set_path(key, value.is_discarded() ? json(raw) : value);
    }
    return j;
  }
};

RunConfig resolve_config(const std::string& path, const Overrides& o, const std::string& phase) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open config '" + path + "'");
    try {
      j = json::parse(f);
    } catch (const json::exception& e) {
      throw InputError("config '" + path + "': " + e.what());
    }
  }
  try {
    return RunConfig::from_json(o.apply(std::move(j), phase));
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
}

void write_training_outputs(const std::string& out, const TrainResult& result, const json& resolved) {
  save_checkpoint(result.checkpoint, out);
  write_text(out + ".log.jsonl", result.log.to_jsonl());
  write_text(out + ".config.json", resolved.dump(2) + "\n");
}

std::string config_hash(const json& resolved) { return fnv1a_hex(resolved.dump()); }

int cmd_synth(const SynthOptions& options, std::ostream& err) {
  const Manifest m = synth_dataset(options);
  json cfg{{"out", options.out_dir},         {"labeled", options.n_labeled}, {"val", options.n_val},
           {"test", options.n_test},         {"phone", options.n_phone},     {"unlabeled", options.n_unlabeled},
           {"size", options.size},           {"seed", options.seed},         {"schema", to_string(options.schema)}};
  write_text((fs::path(options.out_dir) / "synth_config.json").string(), cfg.dump(2) + "\n");
  err << "wrote " << m.records.size() << " labeled and " << m.unlabeled_paths.size() << " unlabeled images to "
      << options.out_dir << "\n";
  return kOk;
}

int cmd_pretrain(const std::string& config_path, const Overrides& o, const std::string& unlabeled_path,
                 const std::string& out, std::ostream& err) {
  RunConfig cfg = resolve_config(config_path, o, "pretrain");
  const Manifest unlabeled = load_unlabeled(unlabeled_path);
  const json resolved{{"command", "pretrain"}, {"config", cfg.to_json()}, {"unlabeled", unlabeled_path}};
  cfg.pretrain.config_hash = config_hash(resolved);
  cfg.pretrain.verbose = true;
  const auto result = pretrain(cfg.pretrain, cfg.model, unlabeled, cfg.augment);
  write_training_outputs(out, result, resolved);
  err << "pretrained checkpoint written to " << out << "\n";
  return kOk;
}

int cmd_finetune(const std::string& config_path, const Overrides& o, const std::string& manifest_path,
                 const std::string& init_path, const std::string& out, std::ostream& err) {
  RunConfig cfg = resolve_config(config_path, o, "finetune");
  const Manifest labeled = load_manifest(manifest_path);
  std::optional<Checkpoint> init;
  if (!init_path.empty()) init = load_checkpoint(init_path);
  const json resolved{{"command", "finetune"},
                      {"config", cfg.to_json()},
                      {"manifest", manifest_path},
                      {"init", init_path.empty() ? json(nullptr) : json(init_path)}};
  cfg.finetune.config_hash = config_hash(resolved);
  cfg.finetune.verbose = true;
  const auto result = finetune(cfg.finetune, cfg.model, labeled, init);
  write_training_outputs(out, result, resolved);
  err << "fine-tuned checkpoint written to " << out << "\n";
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path, const std::string& split,
             const std::string& source, const std::string& report, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Manifest manifest = load_manifest(manifest_path);
  std::optional<CaptureSource> filter;
  if (!source.empty()) filter = source_from_string(source);
  const auto ev = evaluate(ckpt, manifest, split_from_string(split), filter);
  const json j = report_json(ev.report);
  write_text(report + ".json", j.dump(2) + "\n");
  write_text(report + ".md", report_markdown(ev.report));
  write_text(report + ".predictions.csv", predictions_csv(ev.predictions, manifest.schema));
  write_text(report + ".config.json", json{{"command", "eval"},
                                           {"ckpt", ckpt_path},
                                           {"manifest", manifest_path},
                                           {"split", split},
                                           {"source", source.empty() ? json(nullptr) : json(source)}}
                                              .dump(2) + "\n");
  out << j.dump() << "\n";
  err << "evaluated " << ev.report.n_images << " images; reports at " << report << ".{json,md,predictions.csv}\n";
  return kOk;
}

int cmd_predict(const std::string& ckpt_path, const std::string& image_path, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const TensorF image = decode_image(image_path);
  const Prediction p = predict_image(ckpt, image, image_path);
  const auto& names = species_names(ckpt.config.n_species == 3 ? Schema::irish3 : Schema::grassclover4);
  json composition = json::object();
  for (std::size_t s = 0; s < names.size(); ++s) composition[names[s]] = 100.0 * p.fractions[s];
  json j{{"path", image_path}, {"composition_percent", composition}};
  if (p.total_mass) j["mass_kg_dm_ha"] = *p.total_mass;
  if (p.height) j["height_cm"] = *p.height;
  out << j.dump() << "\n";
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive pretraining and sward composition / herbage estimation"};
  app.require_subcommand(1);

  SynthOptions synth;
  std::string schema = "irish3";
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic canopy dataset");
  c_synth->add_option("--out", synth.out_dir, "Output directory")->required();
  c_synth->add_option("--labeled", synth.n_labeled, "Labeled train images")->required();
  c_synth->add_option("--unlabeled", synth.n_unlabeled, "Unlabeled images")->required();
  c_synth->add_option("--size", synth.size, "Image side in pixels")->required();
  c_synth->add_option("--seed", synth.seed, "Generator seed")->required();
  c_synth->add_option("--val", synth.n_val, "Labeled validation images");
  c_synth->add_option("--test", synth.n_test, "Labeled test images");
  c_synth->add_option("--phone", synth.n_phone, "Labeled phone-capture test images");
  c_synth->add_option("--schema", schema, "irish3 or grassclover4");

  std::string config_path, unlabeled_path, manifest_path, init_path, out_path;
  Overrides pre_overrides, fine_overrides;
  auto* c_pre = app.add_subcommand("pretrain", "i-Mix contrastive pretraining on unlabeled images");
  c_pre->add_option("--config", config_path, "Run config JSON");
  c_pre->add_option("--unlabeled", unlabeled_path, "Unlabeled manifest CSV")->required();
  c_pre->add_option("--out", out_path, "Checkpoint to write")->required();
  pre_overrides.attach(c_pre);

  auto* c_fine = app.add_subcommand("finetune", "Supervised RMSE fine-tuning");
  c_fine->add_option("--config", config_path, "Run config JSON");
  c_fine->add_option("--manifest", manifest_path, "Labeled manifest CSV")->required();
  c_fine->add_option("--init", init_path, "Pretrained checkpoint to initialize the trunk");
  c_fine->add_option("--out", out_path, "Checkpoint to write")->required();
  fine_overrides.attach(c_fine);

  std::string ckpt_path, split = "test", source, report, image_path;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  c_eval->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  c_eval->add_option("--manifest", manifest_path, "Labeled manifest CSV")->required();
  c_eval->add_option("--split", split, "train, val or test");
  c_eval->add_option("--source", source, "Capture source filter (camera, phone, synthetic)");
  c_eval->add_option("--report", report, "Report path stem")->required();

  auto* c_predict = app.add_subcommand("predict", "Predict composition, mass and height for one image");
  c_predict->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  c_predict->add_option("--image", image_path, "PPM or PNG image")->required();

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }

  try {
    if (*c_synth) {
      synth.schema = schema_from_string(schema);
      return cmd_synth(synth, err);
    }
    if (*c_pre) return cmd_pretrain(config_path, pre_overrides, unlabeled_path, out_path, err);
    if (*c_fine) return cmd_finetune(config_path, fine_overrides, manifest_path, init_path, out_path, err);
    if (*c_eval) return cmd_eval(ckpt_path, manifest_path, split, source, report, out, err);
    if (*c_predict) return cmd_predict(ckpt_path, image_path, out);
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const CompatibilityError& e) {
    err << "incompatible: " << e.what() << "\n";
    return kCompatibilityError;
  } catch (const EmptySelectionError& e) {
    err << "empty selection: " << e.what() << "\n";
    return kEmptySelection;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace swardmix
