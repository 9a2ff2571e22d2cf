#include "swardmix/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "swardmix/errors.hpp"

namespace swardmix {

namespace fs = std::filesystem;

namespace {

/// Pixel classes in schema species order.
std::vector<PixelClass> species_classes(Schema schema) {
  if (schema == Schema::irish3) return {PixelClass::grass, PixelClass::white_clover, PixelClass::weeds};
  return {PixelClass::grass, PixelClass::white_clover, PixelClass::red_clover, PixelClass::weeds};
}

std::size_t count(const std::vector<PixelClass>& classes, PixelClass c) {
  return static_cast<std::size_t>(std::count(classes.begin(), classes.end(), c));
}

std::size_t vegetation(const std::vector<PixelClass>& classes) {
  return classes.size() - count(classes, PixelClass::soil);
}

void draw_ellipse(std::vector<PixelClass>& classes, int size, double cx, double cy, double rx, double ry, double angle,
                  PixelClass cls) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double u = (dx * ca + dy * sa) / rx, v = (-dx * sa + dy * ca) / ry;
      if (u * u + v * v <= 1.0) classes[static_cast<std::size_t>(y * size + x)] = cls;
    }
  }
}

using Rgb = std::array<double, 3>;

Rgb base_colour(PixelClass c) {
  switch (c) {
    case PixelClass::soil: return {0.42, 0.30, 0.20};
    case PixelClass::grass: return {0.22, 0.52, 0.16};
    case PixelClass::white_clover: return {0.86, 0.90, 0.84};
    case PixelClass::red_clover: return {0.80, 0.42, 0.62};
    case PixelClass::weeds: return {0.42, 0.10, 0.12};
  }
  return {0, 0, 0};
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::vector<double> class_fractions(const std::vector<PixelClass>& classes, Schema schema) {
  const auto veg = vegetation(classes);
  std::vector<double> out;
  for (auto cls : species_classes(schema)) {
    out.push_back(veg == 0 ? 0.0 : static_cast<double>(count(classes, cls)) / static_cast<double>(veg));
  }
  return out;
}

CanopySample render_canopy(const CanopyParams& params, Rng& rng) {
  const int size = params.size;
  if (size < 16) throw std::invalid_argument("synthetic images must be at least 16 px");
  const auto species = species_classes(params.schema);
  if (params.target_fractions.size() != species.size()) {
    throw std::invalid_argument("target_fractions arity does not match schema");
  }
  const std::size_t total = static_cast<std::size_t>(size) * size;
  std::vector<PixelClass> classes(total, PixelClass::soil);

  // Grass sward until the requested cover is reached.
  for (int i = 0; i < 200 && static_cast<double>(vegetation(classes)) < params.density * total; ++i) {
    draw_ellipse(classes, size, rng.uniform(0, size), rng.uniform(0, size), size * rng.uniform(0.15, 0.35),
                 size * rng.uniform(0.15, 0.35), rng.uniform(0, 3.14159), PixelClass::grass);
  }
  if (vegetation(classes) == 0) classes[total / 2] = PixelClass::grass;

  // Small blobs of each non-grass species, drawn until its share is reached.
  for (std::size_t s = 1; s < species.size(); ++s) {
    const double target = params.target_fractions[s];
    for (int i = 0; i < 200 && target > 0.0; ++i) {
      const double share = static_cast<double>(count(classes, species[s])) / static_cast<double>(vegetation(classes));
      if (share >= target) break;
      draw_ellipse(classes, size, rng.uniform(0, size), rng.uniform(0, size), size * rng.uniform(0.04, 0.10),
                   size * rng.uniform(0.04, 0.10), rng.uniform(0, 3.14159), species[s]);
    }
  }

  CanopySample out;
  out.classes = classes;
  out.fractions = class_fractions(classes, params.schema);
  out.density = static_cast<double>(vegetation(classes)) / static_cast<double>(total);

  const double phase = rng.uniform(0.0, 6.28318);
  const Rgb cast = params.phone ? Rgb{1.06, 0.97, 0.90} : Rgb{1.0, 1.0, 1.0};
  const double noise = params.phone ? 0.05 : 0.03;
  out.image.width = size;
  out.image.height = size;
  out.image.pixels.resize(total * 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const auto cls = classes[static_cast<std::size_t>(y * size + x)];
      Rgb c = base_colour(cls);
      double shade = rng.normal(0.0, noise);
      if (cls == PixelClass::grass) shade += 0.06 * std::sin(1.3 * x + 0.4 * y + phase);
      for (int k = 0; k < 3; ++k) {
        out.image.pixels[static_cast<std::size_t>((y * size + x) * 3 + k)] = to_byte((c[k] + shade) * cast[k]);
      }
    }
  }

  out.mass = std::max(0.0, 2500.0 * out.density * (1.0 + rng.normal(0.0, 0.05)));
  out.height = std::max(0.0, 3.0 + 10.0 * out.density + rng.normal(0.0, 0.3));
  return out;
}

namespace {

std::vector<double> random_targets(Schema schema, Rng& rng) {
  std::vector<double> t;
  if (schema == Schema::irish3) {
    const double clover = rng.uniform(0.0, 0.45), weeds = rng.uniform(0.0, 0.25);
    t = {1.0 - clover - weeds, clover, weeds};
  } else {
    const double white = rng.uniform(0.0, 0.30), red = rng.uniform(0.0, 0.20), weeds = rng.uniform(0.0, 0.20);
    t = {1.0 - white - red - weeds, white, red, weeds};
  }
  return t;
}

CanopySample sample_at(const SynthOptions& o, std::uint64_t stream, bool phone) {
  Rng rng(mix_seed(o.seed, stream));
  CanopyParams p;
  p.size = o.size;
  p.schema = o.schema;
  p.phone = phone;
  p.density = rng.uniform(0.55, 0.95);
  p.target_fractions = random_targets(o.schema, rng);
  return render_canopy(p, rng);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InputError("cannot write '" + path.string() + "'");
  f << text;
}

std::string image_name(char prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "images/%c%05d.ppm", prefix, i);
  return buf;
}

}  // namespace

Manifest synth_dataset(const SynthOptions& o) {
  if (o.size < 16) throw InputError("--size must be at least 16");
  if (o.n_labeled < 0 || o.n_val < 0 || o.n_test < 0 || o.n_phone < 0 || o.n_unlabeled < 0) {
    throw InputError("synthetic dataset counts must be nonnegative");
  }
  const fs::path root(o.out_dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (ec) throw InputError("cannot create output directory '" + o.out_dir + "': " + ec.message());

  Manifest m;
  m.schema = o.schema;
  m.base_dir = root.string();

  struct Block {
    int count;
    Split split;
    bool phone;
  };
  const Block blocks[] = {{o.n_labeled, Split::train, false},
                          {o.n_val, Split::val, false},
                          {o.n_test, Split::test, false},
                          {o.n_phone, Split::test, true}};
  int index = 0;
  for (const auto& b : blocks) {
    for (int i = 0; i < b.count; ++i, ++index) {
      const auto sample = sample_at(o, static_cast<std::uint64_t>(index), b.phone);
      const std::string name = image_name(b.phone ? 'p' : 'l', index);
      write_ppm(sample.image, (root / name).string());
      SampleRecord r;
      r.image_path = name;
      r.fractions = sample.fractions;
      if (o.schema == Schema::irish3) {
        r.mass = sample.mass;
        r.height = sample.height;
      }
      r.split = b.split;
      r.source = o.schema == Schema::grassclover4 ? CaptureSource::camera
                 : b.phone                        ? CaptureSource::phone
                                                  : CaptureSource::synthetic;
      m.records.push_back(std::move(r));
    }
  }
  for (int i = 0; i < o.n_unlabeled; ++i) {
    const auto sample = sample_at(o, (std::uint64_t{1} << 32) + static_cast<std::uint64_t>(i), false);
    const std::string name = image_name('u', i);
    write_ppm(sample.image, (root / name).string());
    m.unlabeled_paths.push_back(name);
  }
  write_text(root / "manifest.csv", manifest_csv(m));
  write_text(root / "unlabeled.csv", unlabeled_csv(m));
  return m;
}

}  // namespace swardmix
