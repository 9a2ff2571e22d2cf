#include "swardmix/data.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "swardmix/errors.hpp"

namespace swardmix {

namespace fs = std::filesystem;

std::string to_string(Schema s) { return s == Schema::irish3 ? "irish3" : "grassclover4"; }

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::string to_string(CaptureSource s) {
  switch (s) {
    case CaptureSource::camera: return "camera";
    case CaptureSource::phone: return "phone";
    case CaptureSource::synthetic: return "synthetic";
  }
  return "?";
}

Schema schema_from_string(const std::string& s) {
  if (s == "irish3") return Schema::irish3;
  if (s == "grassclover4") return Schema::grassclover4;
  throw InputError("unknown schema '" + s + "' (expected irish3 or grassclover4)");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InputError("unknown split '" + s + "'");
}

CaptureSource source_from_string(const std::string& s) {
  if (s == "camera") return CaptureSource::camera;
  if (s == "phone") return CaptureSource::phone;
  if (s == "synthetic") return CaptureSource::synthetic;
  throw InputError("unknown capture source '" + s + "'");
}

int species_count(Schema s) { return s == Schema::irish3 ? 3 : 4; }

const std::vector<std::string>& species_names(Schema s) {
  static const std::vector<std::string> irish{"grass", "clover", "weeds"};
  static const std::vector<std::string> grassclover{"grass", "white_clover", "red_clover", "weeds"};
  return s == Schema::irish3 ? irish : grassclover;
}

std::string Manifest::resolve(const std::string& image_path) const {
  fs::path p(image_path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

std::vector<const SampleRecord*> Manifest::select(Split split, std::optional<CaptureSource> source) const {
  std::vector<const SampleRecord*> out;
  for (const auto& r : records) {
    if (r.split == split && (!source || r.source == *source)) out.push_back(&r);
  }
  return out;
}

namespace {

const char* header_for(Schema s) {
  return s == Schema::irish3 ? "path,grass,clover,weeds,mass_kg_dm_ha,height_cm,split,source"
                             : "path,grass,white_clover,red_clover,weeds,split";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

double parse_number(const std::string& cell, const std::string& where) {
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw InputError(where + ": cannot parse number '" + cell + "'");
  }
  return v;
}

std::optional<double> parse_optional(const std::string& cell, const std::string& where) {
  if (cell.empty()) return std::nullopt;
  return parse_number(cell, where);
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open manifest '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(strip_cr(line));
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw InputError("manifest '" + path + "' is empty (header required)");
  // UTF-8 byte order mark
  if (lines[0].rfind("\xEF\xBB\xBF", 0) == 0) lines[0].erase(0, 3);
  return lines;
}

}  // namespace

Manifest load_manifest(const std::string& path, Schema schema) {
  const auto lines = read_lines(path);
  if (lines[0] != header_for(schema)) {
    throw InputError(path + ": header '" + lines[0] + "' does not match " + to_string(schema) + " columns '" +
                     header_for(schema) + "'");
  }
  Manifest m;
  m.schema = schema;
  m.base_dir = fs::path(path).parent_path().string();
  const int n = species_count(schema);
  const std::size_t columns = schema == Schema::irish3 ? 8 : 6;
  std::map<Split, std::set<std::string>> seen;

  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path + " line " + std::to_string(i + 1);
    const auto cells = split_csv(lines[i]);
    if (cells.size() != columns) {
      throw InputError(where + ": expected " + std::to_string(columns) + " columns, got " + std::to_string(cells.size()));
    }
    SampleRecord r;
    r.image_path = cells[0];
    if (r.image_path.empty()) throw InputError(where + ": empty path");
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
      const double f = parse_number(cells[1 + s], where);
      if (f < 0.0 || f > 1.0) throw InputError(where + ": fraction " + cells[1 + s] + " outside [0, 1]");
      r.fractions.push_back(f);
      total += f;
    }
    if (std::abs(total - 1.0) > 1e-4) {
      throw InputError(where + ": fractions sum to " + format_number(total) + ", expected 1");
    }
    if (schema == Schema::irish3) {
      r.mass = parse_optional(cells[4], where);
      r.height = parse_optional(cells[5], where);
      if (r.mass && *r.mass < 0.0) throw InputError(where + ": negative mass");
      if (r.height && *r.height < 0.0) throw InputError(where + ": negative height");
      r.split = split_from_string(cells[6]);
      r.source = source_from_string(cells[7]);
    } else {
      r.split = split_from_string(cells[5]);
      r.source = CaptureSource::camera;
    }
    if (!seen[r.split].insert(r.image_path).second) {
      throw InputError(where + ": duplicate path '" + r.image_path + "' in " + to_string(r.split) + " split");
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

Schema detect_schema(const std::string& path) {
  const auto lines = read_lines(path);
  for (Schema s : {Schema::irish3, Schema::grassclover4}) {
    if (lines[0] == header_for(s)) return s;
  }
  throw InputError(path + ": header '" + lines[0] + "' matches neither irish3 nor grassclover4 columns");
}

Manifest load_manifest(const std::string& path) { return load_manifest(path, detect_schema(path)); }

Manifest load_unlabeled(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines[0] != "path") throw InputError(path + ": unlabeled manifest header must be 'path'");
  Manifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    if (!seen.insert(lines[i]).second) {
      throw InputError(path + " line " + std::to_string(i + 1) + ": duplicate path '" + lines[i] + "'");
    }
    m.unlabeled_paths.push_back(lines[i]);
  }
  return m;
}

std::string manifest_csv(const Manifest& manifest) {
  std::string out = std::string(header_for(manifest.schema)) + "\n";
  for (const auto& r : manifest.records) {
    out += r.image_path;
    for (double f : r.fractions) out += "," + format_number(f);
    if (manifest.schema == Schema::irish3) {
      out += "," + (r.mass ? format_number(*r.mass) : std::string());
      out += "," + (r.height ? format_number(*r.height) : std::string());
      out += "," + to_string(r.split) + "," + to_string(r.source);
    } else {
      out += "," + to_string(r.split);
    }
    out += "\n";
  }
  return out;
}

std::string unlabeled_csv(const Manifest& manifest) {
  std::string out = "path\n";
  for (const auto& p : manifest.unlabeled_paths) out += p + "\n";
  return out;
}

NormStats compute_norm_stats(const Manifest& manifest) {
  std::vector<double> mass, height;
  for (const auto& r : manifest.records) {
    if (r.split != Split::train) continue;
    if (!r.mass || !r.height) throw InputError("train record '" + r.image_path + "' lacks mass or height");
    mass.push_back(*r.mass);
    height.push_back(*r.height);
  }
  if (mass.empty()) throw InputError("no train records to compute normalization stats");
  NormStats s;
  std::tie(s.mass_min, s.mass_max) = [&] {
    auto [lo, hi] = std::minmax_element(mass.begin(), mass.end());
    return std::pair{*lo, *hi};
  }();
  std::tie(s.height_min, s.height_max) = [&] {
    auto [lo, hi] = std::minmax_element(height.begin(), height.end());
    return std::pair{*lo, *hi};
  }();
  if (!(s.mass_max > s.mass_min)) throw InputError("train-split herbage mass is constant; cannot normalize");
  if (!(s.height_max > s.height_min)) throw InputError("train-split height is constant; cannot normalize");
  return s;
}

// Images -------------------------------------------------------------------

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open image '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

RgbImage decode_ppm(const std::string& bytes, const std::string& path) {
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    int v = 0;
    auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
    if (ec != std::errc() || v <= 0) throw InputError(path + ": malformed PPM header");
    pos = static_cast<std::size_t>(ptr - bytes.data());
    return v;
  };
  RgbImage img;
  img.width = read_int();
  img.height = read_int();
  const int maxval = read_int();
  if (maxval != 255) throw InputError(path + ": only 8-bit PPM (maxval 255) is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw InputError(path + ": malformed PPM header");
  }
  ++pos;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * 3;
  if (bytes.size() - pos < n) throw InputError(path + ": truncated PPM data");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

RgbImage decode_png(const std::string& bytes, const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw InputError(path + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage img;
  img.width = static_cast<int>(image.width);
  img.height = static_cast<int>(image.height);
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw InputError(path + ": " + msg);
  }
  return img;
}

}  // namespace

RgbImage read_image(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, path);
  if (bytes.size() >= 8 && bytes.compare(0, 8, "\x89PNG\r\n\x1a\n", 8) == 0) return decode_png(bytes, path);
  throw InputError(path + ": unsupported image format (expected PPM P6 or PNG)");
}

TensorF to_tensor(const RgbImage& image) {
  const Index h = image.height, w = image.width;
  TensorF t({3, h, w});
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) {
        t[(c * h + y) * w + x] = static_cast<float>(image.pixels[static_cast<std::size_t>((y * w + x) * 3 + c)]) / 255.0f;
      }
    }
  }
  return t;
}

TensorF decode_image(const std::string& path) { return to_tensor(read_image(path)); }

void write_ppm(const RgbImage& image, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot write image '" + path + "'");
  f << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!f) throw InputError("failed writing image '" + path + "'");
}

void write_png(const RgbImage& image, const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw InputError("cannot write PNG '" + path + "': " + png.message);
  }
}

}  // namespace swardmix
