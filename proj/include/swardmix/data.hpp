#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "swardmix/norm.hpp"
#include "swardmix/tensor.hpp"

namespace swardmix {

/// Manifest column grammar. irish3 species order is (grass, clover, weeds);
/// grassclover4 is (grass, white_clover, red_clover, weeds).
enum class Schema { irish3, grassclover4 };

enum class Split { train, val, test };

enum class CaptureSource { camera, phone, synthetic };

std::string to_string(Schema s);
std::string to_string(Split s);
std::string to_string(CaptureSource s);
Schema schema_from_string(const std::string& s);
Split split_from_string(const std::string& s);
CaptureSource source_from_string(const std::string& s);

int species_count(Schema s);
const std::vector<std::string>& species_names(Schema s);

struct SampleRecord {
  std::string image_path;  // as written in the manifest
  std::vector<double> fractions;
  std::optional<double> mass;    // kg DM/ha
  std::optional<double> height;  // cm
  Split split = Split::train;
  CaptureSource source = CaptureSource::camera;
};

struct Manifest {
  Schema schema = Schema::irish3;
  std::vector<SampleRecord> records;
  std::vector<std::string> unlabeled_paths;
  /// Directory relative image paths are resolved against.
  std::string base_dir;

  std::string resolve(const std::string& image_path) const;
  std::vector<const SampleRecord*> select(Split split, std::optional<CaptureSource> source = std::nullopt) const;
};

/// Parses a labeled manifest CSV. Rows are validated (fraction arity and
/// sum, nonnegative mass/height, unique path within a split); errors name the
/// 1-based line number. Throws InputError.
Manifest load_manifest(const std::string& path, Schema schema);

/// Reads the header line to tell irish3 from grassclover4.
Schema detect_schema(const std::string& path);
Manifest load_manifest(const std::string& path);

/// Parses an unlabeled manifest (`path` column only).
Manifest load_unlabeled(const std::string& path);

/// Canonical CSV text for a manifest; load_manifest(write) round-trips.
std::string manifest_csv(const Manifest& manifest);
std::string unlabeled_csv(const Manifest& manifest);

/// Min/max of mass and height over the train split only. Throws InputError
/// if a train record lacks a value or a target is constant.
NormStats compute_norm_stats(const Manifest& manifest);

// Images ---------------------------------------------------------------

/// 8-bit interleaved RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel
};

/// Decodes PPM (P6, maxval 255) or 8-bit PNG into C×H×W floats in [0, 1].
TensorF decode_image(const std::string& path);
RgbImage read_image(const std::string& path);
TensorF to_tensor(const RgbImage& image);

void write_ppm(const RgbImage& image, const std::string& path);
void write_png(const RgbImage& image, const std::string& path);

}  // namespace swardmix
