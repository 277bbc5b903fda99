#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homotion/dataset.hpp"
#include "homotion/geometry.hpp"
#include "homotion/model.hpp"

namespace homotion::eval {

inline constexpr std::size_t kHorizons = 10;
inline constexpr double kHorizonSeconds = 0.1;

enum class RotationMetric { kGeodesic, kVectorDifference };

const char* rotation_metric_name(RotationMetric m);
RotationMetric parse_rotation_metric(const std::string& name);

struct PoseError {
  double translation_mm = 0.0;
  double rotation_mrad = 0.0;  // 10^-3 rad
};

PoseError pose_error(const PoseDelta& pred, const PoseDelta& gt, RotationMetric metric = RotationMetric::kGeodesic);

// One entry per target frame.
std::vector<PoseError> pose_errors(std::span<const PoseDelta> pred, std::span<const PoseDelta> gt,
                                   RotationMetric metric = RotationMetric::kGeodesic);

// Mean Euclidean distance between corresponding points. ContractError on a
// count mismatch or empty input.
double mpjpe(std::span<const Vec3> pred, std::span<const Vec3> gt);

struct Aggregate {
  double short_term = 0.0;  // horizons 1-5
  double long_term = 0.0;   // horizons 6-10
  double mean = 0.0;
};

// ContractError unless exactly ten values are given.
Aggregate aggregate(std::span<const double> per_horizon);

struct MetricSeries {
  std::array<double, kHorizons> per_horizon{};
  Aggregate summary;
};

MetricSeries make_series(const std::array<double, kHorizons>& per_horizon);

struct MetricsReport {
  std::string tag;  // column label, defaults to the variant name
  std::string variant;
  std::string split;
  std::size_t samples = 0;
  std::string rotation_metric = "geodesic";
  MetricSeries translation;  // mm
  MetricSeries rotation;     // 10^-3 rad
  MetricSeries mpjpe_o;      // mm
  MetricSeries mpjpe_h;      // mm

  // ContractError when an aggregate disagrees with its per-horizon values.
  void validate(double tol = 1e-9) const;
};

inline constexpr std::array<const char*, 4> kMetricNames = {"translation_mm", "rotation_mrad", "mpjpe_o_mm",
                                                            "mpjpe_h_mm"};
const MetricSeries& series(const MetricsReport& r, std::size_t metric);

struct EvalOptions {
  std::string split = "test";
  std::size_t batch_size = 32;
  RotationMetric rotation_metric = RotationMetric::kGeodesic;
};

// Per-sample errors for one predicted window.
struct SampleErrors {
  std::array<PoseError, kHorizons> pose{};
  std::array<double, kHorizons> mpjpe_o{};
  std::array<double, kHorizons> mpjpe_h{};
};

SampleErrors sample_errors(const model::Prediction& pred, std::size_t b, const dataset::InteractionWindow& window,
                           RotationMetric metric);

// Runs the model in evaluation mode over `windows` and averages every metric
// over samples in window order.
MetricsReport evaluate(model::HOGCNModel& model, const std::vector<dataset::InteractionWindow>& windows,
                       const dataset::DescriptorRegistry* descriptors, const EvalOptions& options);

// Report layout: "# key: value" lines for tag, variant, split, samples and
// rotation_metric, then metric,horizon,value rows. Horizons are 0.1 .. 1.0,
// then short, long, mean.
std::string report_csv(const MetricsReport& r);
MetricsReport report_from_csv(const std::string& text);
nlohmann::json to_json(const MetricsReport& r);

// Side-by-side table: metric,horizon,<tag>...,best. `best` lists every tag
// holding the minimum, joined by '|'. ContractError when the reports were
// computed on different splits or sample counts.
std::string compare_csv(const std::vector<MetricsReport>& reports);

// Per-horizon error curves, one panel per metric and one line per report.
std::string plot_svg(const std::vector<MetricsReport>& reports);

std::string horizon_label(std::size_t index);  // 0 -> "0.1"

}  // namespace homotion::eval
