#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "swardmix/data.hpp"
#include "swardmix/rng.hpp"

namespace swardmix {

/// Per-pixel class of a procedural canopy.
enum class PixelClass : std::uint8_t { soil, grass, white_clover, red_clover, weeds };

struct CanopyParams {
  int size = 32;
  /// Target share of non-soil pixels.
  double density = 0.8;
  /// Target per-species fractions in schema order; realized fractions are
  /// whatever the blob drawing produces and are counted exactly afterwards.
  std::vector<double> target_fractions{1.0, 0.0, 0.0};
  Schema schema = Schema::irish3;
  /// Phone captures get a colour cast and extra sensor noise.
  bool phone = false;
};

struct CanopySample {
  RgbImage image;
  std::vector<PixelClass> classes;  // row-major, size*size
  std::vector<double> fractions;    // exact pixel-class proportions among vegetation
  double density = 0.0;             // vegetation pixels / all pixels
  double mass = 0.0;                // kg DM/ha
  double height = 0.0;              // cm
};

/// Exact per-species fractions of the vegetation pixels (soil excluded).
std::vector<double> class_fractions(const std::vector<PixelClass>& classes, Schema schema);

CanopySample render_canopy(const CanopyParams& params, Rng& rng);

struct SynthOptions {
  std::string out_dir;
  int n_labeled = 52;  // train rows
  int n_val = 0;
  int n_test = 0;
  int n_phone = 0;  // extra test rows rendered as phone captures
  int n_unlabeled = 0;
  int size = 32;
  std::uint64_t seed = 0;
  Schema schema = Schema::irish3;
};

/// Writes images/ plus manifest.csv and unlabeled.csv under out_dir and
/// returns the labeled manifest (unlabeled paths included). Output depends
/// only on the options, so equal seeds give byte-identical directories.
Manifest synth_dataset(const SynthOptions& options);

}  // namespace swardmix
