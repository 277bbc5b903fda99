#include "homotion/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "homotion/errors.hpp"
#include "homotion/io.hpp"

namespace homotion::eval {

using nlohmann::json;
using dataset::InteractionWindow;

const char* rotation_metric_name(RotationMetric m) {
  return m == RotationMetric::kGeodesic ? "geodesic" : "vector_difference";
}

RotationMetric parse_rotation_metric(const std::string& name) {
  if (name == "geodesic") return RotationMetric::kGeodesic;
  if (name == "vector_difference") return RotationMetric::kVectorDifference;
  throw ConfigError("unknown rotation metric '" + name + "' (expected geodesic or vector_difference)");
}

PoseError pose_error(const PoseDelta& pred, const PoseDelta& gt, RotationMetric metric) {
  PoseError e;
  e.translation_mm = (pred.translation - gt.translation).norm();
  const double angle = metric == RotationMetric::kGeodesic
                           ? geodesic_angle(rotvec_to_matrix(pred.rotation), rotvec_to_matrix(gt.rotation))
                           : (pred.rotation - gt.rotation).norm();
  e.rotation_mrad = 1000.0 * angle;
  return e;
}

std::vector<PoseError> pose_errors(std::span<const PoseDelta> pred, std::span<const PoseDelta> gt,
                                   RotationMetric metric) {
  if (pred.size() != gt.size()) {
    throw ContractError("pose_errors: " + std::to_string(pred.size()) + " predicted vs " +
                        std::to_string(gt.size()) + " ground-truth frames");
  }
  std::vector<PoseError> out;
  out.reserve(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) out.push_back(pose_error(pred[i], gt[i], metric));
  return out;
}

double mpjpe(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  if (pred.size() != gt.size()) {
    throw ContractError("mpjpe: " + std::to_string(pred.size()) + " predicted vs " + std::to_string(gt.size()) +
                        " ground-truth points");
  }
  if (pred.empty()) throw ContractError("mpjpe: no points");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += (pred[i] - gt[i]).norm();
  return sum / static_cast<double>(pred.size());
}

Aggregate aggregate(std::span<const double> v) {
  if (v.size() != kHorizons) {
    throw ContractError("aggregate expects " + std::to_string(kHorizons) + " horizon values, got " +
                        std::to_string(v.size()));
  }
  Aggregate a;
  for (std::size_t i = 0; i < 5; ++i) a.short_term += v[i];
  for (std::size_t i = 5; i < 10; ++i) a.long_term += v[i];
  a.mean = (a.short_term + a.long_term) / 10.0;
  a.short_term /= 5.0;
  a.long_term /= 5.0;
  return a;
}

MetricSeries make_series(const std::array<double, kHorizons>& per_horizon) {
  return {per_horizon, aggregate(per_horizon)};
}

void MetricsReport::validate(double tol) const {
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    const auto& s = series(*this, m);
    const Aggregate a = aggregate(s.per_horizon);
    if (std::abs(a.short_term - s.summary.short_term) > tol || std::abs(a.long_term - s.summary.long_term) > tol ||
        std::abs(a.mean - s.summary.mean) > tol) {
      throw ContractError(std::string("report aggregates for ") + kMetricNames[m] +
                          " disagree with the per-horizon values");
    }
  }
}

const MetricSeries& series(const MetricsReport& r, std::size_t metric) {
  switch (metric) {
    case 0: return r.translation;
    case 1: return r.rotation;
    case 2: return r.mpjpe_o;
    case 3: return r.mpjpe_h;
  }
  throw ContractError("metric index out of range");
}

namespace {

MetricSeries& series_mut(MetricsReport& r, std::size_t metric) {
  return const_cast<MetricSeries&>(series(r, metric));
}

PoseDelta delta_at(const tensor::Tensor& delta, std::size_t b, std::size_t k) {
  const std::size_t K = delta.size(1);
  const double* d = delta.data().data() + (b * K + k) * 6;
  return {Vec3(d[0], d[1], d[2]), Vec3(d[3], d[4], d[5])};
}

std::vector<Vec3> points_at(const tensor::Tensor& t, std::size_t b, std::size_t k) {
  const std::size_t K = t.size(1), n = t.size(2);
  const double* p = t.data().data() + ((b * K + k) * n) * 3;
  std::vector<Vec3> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = Vec3(p[3 * i], p[3 * i + 1], p[3 * i + 2]);
  return out;
}

}  // namespace

SampleErrors sample_errors(const model::Prediction& pred, std::size_t b, const InteractionWindow& w,
                           RotationMetric metric) {
  if (w.target_frames() != kHorizons || pred.delta.size(1) != kHorizons) {
    throw ContractError("evaluation expects " + std::to_string(kHorizons) + " target frames, window " + w.id +
                        " has " + std::to_string(w.target_frames()));
  }
  SampleErrors s;
  for (std::size_t h = 0; h < kHorizons; ++h) {
    const auto& frame = w.frames[w.k() + 1 + h];
    s.pose[h] = pose_error(delta_at(pred.delta, b, h), w.labels.deltas[h], metric);
    s.mpjpe_o[h] = mpjpe(points_at(pred.object_keypoints, b, h), frame.object_keypoints);
    s.mpjpe_h[h] = mpjpe(points_at(pred.human, b, h), frame.skeleton);
  }
  return s;
}

MetricsReport evaluate(model::HOGCNModel& model, const std::vector<InteractionWindow>& windows,
                       const dataset::DescriptorRegistry* descriptors, const EvalOptions& options) {
  if (windows.empty()) throw ConfigError("cannot evaluate on an empty split");
  if (options.batch_size == 0) throw ConfigError("batch_size must be at least 1");
  const bool was_training = model.training();
  model.set_training(false);
  tensor::NoGradScope no_grad;
  std::array<std::array<double, kHorizons>, 4> sums{};
  for (std::size_t begin = 0; begin < windows.size(); begin += options.batch_size) {
    const std::size_t end = std::min(windows.size(), begin + options.batch_size);
    std::vector<const InteractionWindow*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&windows[i]);
    const auto batch = model::make_batch(ptrs, descriptors, model.config());
    const auto pred = model.forward(batch);
    for (std::size_t b = 0; b < ptrs.size(); ++b) {
      const auto s = sample_errors(pred, b, *ptrs[b], options.rotation_metric);
      for (std::size_t h = 0; h < kHorizons; ++h) {
        sums[0][h] += s.pose[h].translation_mm;
        sums[1][h] += s.pose[h].rotation_mrad;
        sums[2][h] += s.mpjpe_o[h];
        sums[3][h] += s.mpjpe_h[h];
      }
    }
  }
  model.set_training(was_training);
  MetricsReport r;
  r.variant = model::variant_name(model.config().variant);
  r.tag = r.variant;
  r.split = options.split;
  r.samples = windows.size();
  r.rotation_metric = rotation_metric_name(options.rotation_metric);
  const double n = static_cast<double>(windows.size());
  for (std::size_t m = 0; m < 4; ++m) {
    std::array<double, kHorizons> mean{};
    for (std::size_t h = 0; h < kHorizons; ++h) mean[h] = sums[m][h] / n;
    series_mut(r, m) = make_series(mean);
  }
  return r;
}

std::string horizon_label(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.1f", static_cast<double>(index + 1) * kHorizonSeconds);
  return buf;
}

namespace {

const std::array<const char*, 3> kAggregateNames = {"short", "long", "mean"};

std::vector<std::string> row_horizons() {
  std::vector<std::string> out;
  for (std::size_t h = 0; h < kHorizons; ++h) out.push_back(horizon_label(h));
  for (const char* a : kAggregateNames) out.emplace_back(a);
  return out;
}

double series_value(const MetricSeries& s, std::size_t row) {
  if (row < kHorizons) return s.per_horizon[row];
  if (row == kHorizons) return s.summary.short_term;
  if (row == kHorizons + 1) return s.summary.long_term;
  return s.summary.mean;
}

std::string xml_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

std::string report_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "# tag: " << r.tag << "\n# variant: " << r.variant << "\n# split: " << r.split << "\n# samples: "
     << r.samples << "\n# rotation_metric: " << r.rotation_metric << "\nmetric,horizon,value\n";
  const auto rows = row_horizons();
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      os << kMetricNames[m] << ',' << rows[i] << ',' << io::format_double(series_value(series(r, m), i)) << '\n';
    }
  }
  return os.str();
}

MetricsReport report_from_csv(const std::string& text) {
  MetricsReport r;
  std::map<std::string, std::string> meta;
  std::map<std::pair<std::string, std::string>, double> values;
  std::istringstream is(text);
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto colon = line.find(": ");
      if (colon != std::string::npos) meta[line.substr(2, colon - 2)] = line.substr(colon + 2);
      continue;
    }
    if (!header) {
      if (line != "metric,horizon,value") throw DataError("report: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != 3) throw DataError("report: malformed row '" + line + "'");
    try {
      values[{cells[0], cells[1]}] = std::stod(cells[2]);
    } catch (const std::exception&) {
      throw DataError("report: bad number in row '" + line + "'");
    }
  }
  if (!header) throw DataError("report: missing metric,horizon,value header");
  r.variant = meta["variant"];
  r.tag = meta.count("tag") ? meta["tag"] : r.variant;
  r.split = meta["split"];
  r.rotation_metric = meta.count("rotation_metric") ? meta["rotation_metric"] : "geodesic";
  try {
    r.samples = meta.count("samples") ? std::stoul(meta["samples"]) : 0;
  } catch (const std::exception&) {
    throw DataError("report: bad sample count '" + meta["samples"] + "'");
  }
  const auto rows = row_horizons();
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    std::array<double, kHorizons> per{};
    for (std::size_t h = 0; h < kHorizons; ++h) {
      const auto it = values.find({kMetricNames[m], rows[h]});
      if (it == values.end()) {
        throw DataError(std::string("report: missing ") + kMetricNames[m] + " at horizon " + rows[h]);
      }
      per[h] = it->second;
    }
    series_mut(r, m) = make_series(per);
  }
  return r;
}

json to_json(const MetricsReport& r) {
  json j = {{"tag", r.tag},
            {"variant", r.variant},
            {"split", r.split},
            {"samples", r.samples},
            {"rotation_metric", r.rotation_metric}};
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    const auto& s = series(r, m);
    j["metrics"][kMetricNames[m]] = {{"per_horizon", s.per_horizon},
                                     {"short_term", s.summary.short_term},
                                     {"long_term", s.summary.long_term},
                                     {"mean", s.summary.mean}};
  }
  return j;
}

std::string compare_csv(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ContractError("compare needs at least one report");
  for (const auto& r : reports) {
    if (r.split != reports.front().split || r.samples != reports.front().samples) {
      throw ContractError("compare: report '" + r.tag + "' was computed on split " + r.split + " (" +
                          std::to_string(r.samples) + " samples), '" + reports.front().tag + "' on " +
                          reports.front().split + " (" + std::to_string(reports.front().samples) + " samples)");
    }
  }
  std::ostringstream os;
  os << "metric,horizon";
  for (const auto& r : reports) os << ',' << r.tag;
  os << ",best\n";
  const auto rows = row_horizons();
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      os << kMetricNames[m] << ',' << rows[i];
      double best = series_value(series(reports.front(), m), i);
      for (const auto& r : reports) {
        const double v = series_value(series(r, m), i);
        best = std::min(best, v);
        os << ',' << io::format_double(v);
      }
      os << ',';
      bool first = true;
      for (const auto& r : reports) {
        if (series_value(series(r, m), i) != best) continue;
        os << (first ? "" : "|") << r.tag;
        first = false;
      }
      os << '\n';
    }
  }
  return os.str();
}

std::string plot_svg(const std::vector<MetricsReport>& reports) {
  static const std::array<const char*, 8> palette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                     "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  static const std::array<const char*, 4> titles = {"Translation error (mm)", "Rotation error (1e-3 rad)",
                                                    "MPJPE-O (mm)", "MPJPE-H (mm)"};
  const double pw = 420, ph = 280, ml = 60, mr = 20, mt = 36, mb = 44;
  const double width = 2 * pw, height = 2 * ph + 30 + 18.0 * static_cast<double>(reports.size());
  std::ostringstream os;
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return std::string(buf);
  };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t m = 0; m < 4; ++m) {
    const double ox = static_cast<double>(m % 2) * pw, oy = static_cast<double>(m / 2) * ph;
    const double x0 = ox + ml, x1 = ox + pw - mr, y0 = oy + ph - mb, y1 = oy + mt;
    double ymax = 0.0;
    for (const auto& r : reports) {
      for (double v : series(r, m).per_horizon) ymax = std::max(ymax, v);
    }
    ymax = ymax > 0 ? ymax * 1.1 : 1.0;
    auto px = [&](std::size_t h) { return x0 + (x1 - x0) * static_cast<double>(h) / (kHorizons - 1); };
    auto py = [&](double v) { return y0 - (y0 - y1) * v / ymax; };
    os << "<text x=\"" << num(ox + pw / 2) << "\" y=\"" << num(oy + 22) << "\" text-anchor=\"middle\" font-size=\"14\">"
       << titles[m] << "</text>\n";
    os << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x1) << "\" y2=\"" << num(y0)
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x0) << "\" y2=\"" << num(y1)
       << "\" stroke=\"black\"/>\n";
    for (std::size_t h = 0; h < kHorizons; ++h) {
      os << "<text x=\"" << num(px(h)) << "\" y=\"" << num(y0 + 16) << "\" text-anchor=\"middle\">"
         << horizon_label(h) << "</text>\n";
    }
    for (int t = 0; t <= 4; ++t) {
      const double v = ymax * t / 4.0;
      os << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">" << num(v)
         << "</text>\n";
      os << "<line x1=\"" << num(x0) << "\" y1=\"" << num(py(v)) << "\" x2=\"" << num(x1) << "\" y2=\""
         << num(py(v)) << "\" stroke=\"#dddddd\"/>\n";
    }
    os << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(y0 + 34) << "\" text-anchor=\"middle\">horizon (s)</text>\n";
    for (std::size_t r = 0; r < reports.size(); ++r) {
      os << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << palette[r % palette.size()] << "\" points=\"";
      for (std::size_t h = 0; h < kHorizons; ++h) {
        os << (h ? " " : "") << num(px(h)) << ',' << num(py(series(reports[r], m).per_horizon[h]));
      }
      os << "\"/>\n";
    }
  }
  for (std::size_t r = 0; r < reports.size(); ++r) {
    const double y = 2 * ph + 20 + 18.0 * static_cast<double>(r);
    os << "<line x1=\"" << num(ml) << "\" y1=\"" << num(y) << "\" x2=\"" << num(ml + 30) << "\" y2=\"" << num(y)
       << "\" stroke-width=\"2\" stroke=\"" << palette[r % palette.size()] << "\"/>\n";
    os << "<text x=\"" << num(ml + 38) << "\" y=\"" << num(y + 4) << "\">" << xml_escape(reports[r].tag) << " (mean MPJPE-O "
       << num(reports[r].mpjpe_o.summary.mean) << " mm)</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace homotion::eval
