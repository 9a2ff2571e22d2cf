#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "swardmix/augment.hpp"
#include "swardmix/model.hpp"
#include "swardmix/train.hpp"

namespace swardmix {

/// Everything a training run needs, file-backed as JSON:
///   {"model": {...}, "augment": {...}, "pretrain": {...}, "finetune": {...}}
/// Missing keys keep their defaults.
struct RunConfig {
  ModelConfig model;
  AugmentPolicy augment;
  TrainConfig pretrain;
  TrainConfig finetune;

  RunConfig();
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static RunConfig load(const std::string& path);
};

/// Stable process exit codes.
enum ExitCode : int { kOk = 0, kFailure = 1, kInputError = 2, kCompatibilityError = 3, kEmptySelection = 4 };

/// Entry point behind the `swardmix` executable; machine output goes to
/// `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace swardmix
