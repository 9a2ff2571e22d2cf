#include "swardmix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "swardmix/augment.hpp"
#include "swardmix/errors.hpp"

namespace swardmix {

using nlohmann::json;

double ColumnSet::at(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return values[i];
  }
  if (name == "avg") return avg;
  throw std::out_of_range("no metric column '" + name + "'");
}

namespace {

void check_aligned(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& gts) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(gts.size()) + " ground-truth records");
  }
  if (preds.empty()) throw std::invalid_argument("metrics: empty input");
}

double rmse_of(const std::vector<double>& a, const std::vector<double>& b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq / static_cast<double>(a.size()));
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

/// Species columns reported for a schema, each a sum of fraction indices.
struct Column {
  std::string name;
  std::vector<std::size_t> parts;
};

std::vector<Column> composition_columns(Schema schema) {
  if (schema == Schema::irish3) return {{"grass", {0}}, {"clover", {1}}, {"weeds", {2}}};
  return {{"grass", {0}}, {"any_clover", {1, 2}}, {"white_clover", {1}}, {"red_clover", {2}}, {"weeds", {3}}};
}

double sum_parts(const std::vector<double>& f, const std::vector<std::size_t>& parts) {
  double s = 0.0;
  for (auto p : parts) s += f.at(p);
  return s;
}

}  // namespace

ColumnSet composition_rmse(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& gts, Schema schema) {
  check_aligned(preds, gts);
  const auto n = static_cast<std::size_t>(species_count(schema));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].fractions.size() != n || gts[i].fractions.size() != n) {
      throw std::invalid_argument("composition_rmse: fraction arity does not match " + to_string(schema));
    }
  }
  ColumnSet out;
  for (const auto& col : composition_columns(schema)) {
    std::vector<double> p, g;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      p.push_back(100.0 * sum_parts(preds[i].fractions, col.parts));
      g.push_back(100.0 * sum_parts(gts[i].fractions, col.parts));
    }
    out.names.push_back(col.name);
    out.values.push_back(rmse_of(p, g));
  }
  out.avg = mean_of(out.values);
  return out;
}

std::vector<double> species_mass(const Prediction& pred) {
  if (!pred.total_mass) throw std::invalid_argument("species_mass: prediction has no total mass");
  std::vector<double> out;
  for (double f : pred.fractions) out.push_back(*pred.total_mass * f);
  return out;
}

HerbageRmse hrmse(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& gts, Schema schema) {
  check_aligned(preds, gts);
  std::vector<double> pt, gt;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i].total_mass) throw std::invalid_argument("hrmse: prediction '" + preds[i].path + "' has no mass");
    if (!gts[i].mass) throw std::invalid_argument("hrmse: missing ground-truth mass for '" + gts[i].image_path + "'");
    pt.push_back(*preds[i].total_mass);
    gt.push_back(*gts[i].mass);
  }
  HerbageRmse out;
  out.total = rmse_of(pt, gt);
  for (const auto& col : composition_columns(schema)) {
    std::vector<double> p, g;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      p.push_back(pt[i] * sum_parts(preds[i].fractions, col.parts));
      g.push_back(gt[i] * sum_parts(gts[i].fractions, col.parts));
    }
    out.species.names.push_back(col.name);
    out.species.values.push_back(rmse_of(p, g));
  }
  out.species.avg = mean_of(out.species.values);
  return out;
}

double hre(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& gts, HreAggregate aggregate) {
  check_aligned(preds, gts);
  std::vector<double> ratios;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!gts[i].mass || *gts[i].mass <= 0.0) {
      throw std::invalid_argument("hre: ground-truth mass must be positive for '" + gts[i].image_path + "'");
    }
    if (!preds[i].total_mass) throw std::invalid_argument("hre: prediction '" + preds[i].path + "' has no mass");
    ratios.push_back(*preds[i].total_mass / *gts[i].mass);
  }
  if (aggregate == HreAggregate::mean) return mean_of(ratios);
  std::sort(ratios.begin(), ratios.end());
  const std::size_t mid = ratios.size() / 2;
  return ratios.size() % 2 ? ratios[mid] : 0.5 * (ratios[mid - 1] + ratios[mid]);
}

double height_error(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& gts) {
  check_aligned(preds, gts);
  std::vector<double> p, g;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i].height || !gts[i].height) throw std::invalid_argument("height_error: missing height");
    p.push_back(*preds[i].height);
    g.push_back(*gts[i].height);
  }
  return rmse_of(p, g);
}

MetricsReport make_report(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& gts, Schema schema) {
  MetricsReport r;
  r.schema = schema;
  r.n_images = preds.size();
  r.composition = composition_rmse(preds, gts, schema);
  if (schema == Schema::irish3) {
    r.herbage = hrmse(preds, gts, schema);
    r.hre = hre(preds, gts);
    r.he = height_error(preds, gts);
  }
  return r;
}

Prediction predict_image(const Checkpoint& ckpt, const TensorF& image, const std::string& path) {
  const int size = ckpt.config.input_size;
  TensorF input = (image.dim(1) == size && image.dim(2) == size) ? image : resize_bilinear(image, size);
  Tape<float> tape;
  Network<float> net(tape, ckpt);
  auto emb = net.encode(tape.constant(input.reshaped({1, input.dim(0), size, size})));
  Prediction p;
  p.path = path;
  const auto& f = net.composition_fractions(emb).value();
  for (Index s = 0; s < f.size(); ++s) p.fractions.push_back(static_cast<double>(f[s]));
  if (ckpt.config.predict_scalars) {
    const auto est = denormalize(ckpt, net.predict_scalars(emb).value());
    p.total_mass = est.mass[0];
    p.height = est.height[0];
  }
  return p;
}

Evaluation evaluate(const Checkpoint& ckpt, const Manifest& manifest, Split split, std::optional<CaptureSource> source) {
  const auto records = manifest.select(split, source);
  if (records.empty()) {
    throw EmptySelectionError("no " + to_string(split) + " records" +
                              (source ? " with source " + to_string(*source) : std::string()) + " to evaluate");
  }
  if (ckpt.config.n_species != species_count(manifest.schema)) {
    throw CompatibilityError("checkpoint predicts " + std::to_string(ckpt.config.n_species) + " species, manifest " +
                             to_string(manifest.schema) + " has " + std::to_string(species_count(manifest.schema)));
  }
  if (manifest.schema == Schema::irish3 && !ckpt.config.predict_scalars) {
    throw CompatibilityError("irish3 evaluation needs a checkpoint with mass/height heads");
  }
  Evaluation ev;
  for (const auto* r : records) {
    ev.predictions.push_back(predict_image(ckpt, decode_image(manifest.resolve(r->image_path)), r->image_path));
    ev.ground_truth.push_back(*r);
  }
  ev.report = make_report(ev.predictions, ev.ground_truth, manifest.schema);
  ev.report.split = split;
  ev.report.source = source;
  return ev;
}

namespace {

/// Shortest decimal that round-trips, so markdown and JSON carry the same numbers.
std::string number(double v) { return json(v).dump(); }

json column_json(const ColumnSet& c) {
  json j = json::object();
  for (std::size_t i = 0; i < c.names.size(); ++i) j[c.names[i]] = c.values[i];
  j["avg"] = c.avg;
  return j;
}

}  // namespace

std::vector<std::string> report_columns(Schema schema) {
  if (schema == Schema::grassclover4) return {"Grass", "Any clover", "White clover", "Red clover", "Weeds", "Avg."};
  return {"HRMSE Total", "HRMSE Grass", "HRMSE Clover", "HRMSE Weeds", "HRMSE Avg.", "HRE",
          "RMSE Grass",  "RMSE Clover", "RMSE Weeds",   "RMSE Avg.",  "HE"};
}

json report_json(const MetricsReport& r) {
  json j{{"schema", to_string(r.schema)},
         {"split", to_string(r.split)},
         {"source", r.source ? json(to_string(*r.source)) : json(nullptr)},
         {"n_images", r.n_images},
         {"composition_rmse", column_json(r.composition)}};
  if (r.herbage) {
    json h = column_json(r.herbage->species);
    h["total"] = r.herbage->total;
    j["hrmse"] = h;
  }
  if (r.hre) j["hre"] = *r.hre;
  if (r.he) j["he"] = *r.he;
  return j;
}

std::string report_markdown(const MetricsReport& r) {
  std::vector<std::string> cells;
  if (r.schema == Schema::grassclover4) {
    for (double v : r.composition.values) cells.push_back(number(v));
    cells.push_back(number(r.composition.avg));
  } else {
    if (!r.herbage || !r.hre || !r.he) throw std::invalid_argument("irish3 report needs herbage, HRE and HE metrics");
    cells.push_back(number(r.herbage->total));
    for (double v : r.herbage->species.values) cells.push_back(number(v));
    cells.push_back(number(r.herbage->species.avg));
    cells.push_back(number(*r.hre));
    for (double v : r.composition.values) cells.push_back(number(v));
    cells.push_back(number(r.composition.avg));
    cells.push_back(number(*r.he));
  }
  const auto headers = report_columns(r.schema);
  std::string out = "Schema: " + to_string(r.schema) + ", split: " + to_string(r.split) +
                    ", source: " + (r.source ? to_string(*r.source) : std::string("all")) +
                    ", images: " + std::to_string(r.n_images) + "\n\n|";
  for (const auto& h : headers) out += " " + h + " |";
  out += "\n|";
  for (std::size_t i = 0; i < headers.size(); ++i) out += " ---: |";
  out += "\n|";
  for (const auto& c : cells) out += " " + c + " |";
  out += "\n";
  return out;
}

std::string predictions_csv(const std::vector<Prediction>& preds, Schema schema) {
  std::string out = "path";
  for (const auto& s : species_names(schema)) out += "," + s;
  if (schema == Schema::irish3) out += ",total_mass,height";
  out += "\n";
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& p : preds) {
    out += p.path;
    for (double f : p.fractions) out += "," + num(100.0 * f);
    if (schema == Schema::irish3) {
      out += "," + (p.total_mass ? num(*p.total_mass) : std::string());
      out += "," + (p.height ? num(*p.height) : std::string());
    }
    out += "\n";
  }
  return out;
}

}  // namespace swardmix
