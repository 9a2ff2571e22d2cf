#pragma once

// Evaluation metrics for composition and herbage estimates.
//
// Composition RMSE is reported in percentage points per species. For the
// grassclover4 schema an "any clover" column (white + red, summed before
// differencing) sits between grass and the individual clovers, and Avg. is
// the mean of every listed column. Herbage RMSE (HRMSE) is in kg DM/ha:
// Total compares total mass, per-species columns compare mass x fraction,
// and Avg. is the mean of the per-species columns only. HRE is the mean of
// per-image pred/gt total-mass ratios; HE is the height RMSE in cm.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "swardmix/data.hpp"
#include "swardmix/model.hpp"

namespace swardmix {

struct Prediction {
  std::string path;
  std::vector<double> fractions;     // schema species order, sum to 1
  std::optional<double> total_mass;  // kg DM/ha
  std::optional<double> height;      // cm
};

/// Named metric columns plus their arithmetic mean.
struct ColumnSet {
  std::vector<std::string> names;
  std::vector<double> values;
  double avg = 0.0;

  double at(const std::string& name) const;
};

struct HerbageRmse {
  double total = 0.0;
  ColumnSet species;
};

enum class HreAggregate { mean, median };

ColumnSet composition_rmse(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& gts, Schema schema);

/// total_mass · fractionₛ per species.
std::vector<double> species_mass(const Prediction& pred);

HerbageRmse hrmse(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& gts, Schema schema);

double hre(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& gts,
           HreAggregate aggregate = HreAggregate::mean);

double height_error(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& gts);

struct MetricsReport {
  Schema schema = Schema::irish3;
  Split split = Split::test;
  std::optional<CaptureSource> source;
  std::size_t n_images = 0;
  ColumnSet composition;
  std::optional<HerbageRmse> herbage;
  std::optional<double> hre;
  std::optional<double> he;
};

/// Assembles every metric the schema supports.
MetricsReport make_report(const std::vector<Prediction>& preds, const std::vector<SampleRecord>& gts, Schema schema);

/// Single-image inference (C×H×W input, resized to the model input if needed).
Prediction predict_image(const Checkpoint& ckpt, const TensorF& image, const std::string& path);

struct Evaluation {
  MetricsReport report;
  std::vector<Prediction> predictions;
  std::vector<SampleRecord> ground_truth;
};

/// Runs inference over the split (optionally filtered by capture source) and
/// scores it. Throws EmptySelectionError if nothing is selected.
Evaluation evaluate(const Checkpoint& ckpt, const Manifest& manifest, Split split,
                    std::optional<CaptureSource> source = std::nullopt);

/// Column headers in report order, e.g. "Grass", "Any clover", ... "Avg.".
std::vector<std::string> report_columns(Schema schema);

nlohmann::json report_json(const MetricsReport& report);
std::string report_markdown(const MetricsReport& report);

/// Per-image prediction CSV; composition in percent, mass/height (irish3) in
/// kg DM/ha and cm. Numbers are written with round-trip precision.
std::string predictions_csv(const std::vector<Prediction>& preds, Schema schema);

}  // namespace swardmix
