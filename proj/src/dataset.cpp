#include "homotion/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "homotion/errors.hpp"
#include "homotion/io.hpp"

namespace homotion::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool finite(const Vec3& v) { return v.allFinite(); }

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw DataError(what + ": expected 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json points_json(const std::vector<Vec3>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back(vec_json(p));
  return a;
}

std::vector<Vec3> points_from(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError(what + ": expected an array of points");
  std::vector<Vec3> out;
  out.reserve(j.size());
  for (const auto& p : j) out.push_back(vec_from(p, what));
  return out;
}

json frame_json(const Frame& f) {
  return {{"skeleton", points_json(f.skeleton)},
          {"object_pose", {{"translation", vec_json(f.object_pose.translation)},
                           {"rotation", vec_json(f.object_pose.rotation)}}},
          {"object_keypoints", points_json(f.object_keypoints)}};
}

Pose pose_from(const json& j, const std::string& what) {
  Pose p;
  p.translation = vec_from(j.at("translation"), what + " translation");
  if (j.contains("rotation")) {
    p.rotation = vec_from(j.at("rotation"), what + " rotation");
  } else if (j.contains("quaternion")) {
    const auto& q = j.at("quaternion");
    if (!q.is_array() || q.size() != 4) throw DataError(what + ": quaternion needs 4 numbers (w, x, y, z)");
    p.rotation = quaternion_to_rotvec(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
  } else {
    throw DataError(what + ": pose needs rotation or quaternion");
  }
  return p;
}

Frame frame_from(const json& j, std::size_t index) {
  const std::string what = "frame " + std::to_string(index);
  try {
    Frame f;
    f.skeleton = points_from(j.at("skeleton"), what + " skeleton");
    f.object_pose = pose_from(j.at("object_pose"), what);
    f.object_keypoints = points_from(j.at("object_keypoints"), what + " keypoints");
    return f;
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
}

double parse_double(const std::string& s, std::size_t row) {
  double v = 0.0;
  const char* b = s.data();
  while (b < s.data() + s.size() && *b == ' ') ++b;
  auto res = std::from_chars(b, s.data() + s.size(), v);
  if (res.ec != std::errc()) throw DataError("csv row " + std::to_string(row) + ": bad number '" + s + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.pop_back();
    std::size_t b = 0;
    while (b < cell.size() && cell[b] == ' ') ++b;
    out.push_back(cell.substr(b));
  }
  return out;
}

double smoothstep5(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
}

Mat3 rot_z(double a) { return rotvec_to_matrix(Vec3(0, 0, a)); }
Mat3 rot_y(double a) { return rotvec_to_matrix(Vec3(0, a, 0)); }

}  // namespace

void validate(const MoCapVideo& video) {
  if (!(video.frame_rate > 0.0) || !std::isfinite(video.frame_rate)) {
    throw DataError("video " + video.id + ": frame_rate must be positive");
  }
  if (video.frames.empty()) return;
  const std::size_t n = video.frames[0].skeleton.size();
  const std::size_t m = video.frames[0].object_keypoints.size();
  if (n == 0) throw DataError("video " + video.id + ": empty skeleton");
  if (m != rigidsim::kNumKeypoints) {
    throw DataError("video " + video.id + ": expected 12 object keypoints, got " + std::to_string(m));
  }
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    const auto& f = video.frames[t];
    if (f.skeleton.size() != n || f.object_keypoints.size() != m) {
      throw DataError("video " + video.id + ": frame " + std::to_string(t) + " has inconsistent point counts");
    }
    bool ok = finite(f.object_pose.translation) && finite(f.object_pose.rotation);
    for (const auto& p : f.skeleton) ok = ok && finite(p);
    for (const auto& p : f.object_keypoints) ok = ok && finite(p);
    if (!ok) throw DataError("video " + video.id + ": non-finite value at frame " + std::to_string(t));
  }
}

double rigid_consistency_error(const MoCapVideo& video) {
  if (video.frames.empty()) return 0.0;
  const auto& f0 = video.frames[0];
  const Mat3 r0t = rotvec_to_matrix(f0.object_pose.rotation).transpose();
  std::vector<Vec3> local;
  for (const auto& k : f0.object_keypoints) local.push_back(r0t * (k - f0.object_pose.translation));
  double worst = 0.0;
  for (const auto& f : video.frames) {
    const Mat3 r = rotvec_to_matrix(f.object_pose.rotation);
    for (std::size_t i = 0; i < local.size(); ++i) {
      worst = std::max(worst, (r * local[i] + f.object_pose.translation - f.object_keypoints[i]).norm());
    }
  }
  return worst;
}

MoCapVideo video_from_json(const json& j) {
  MoCapVideo v;
  try {
    v.id = j.value("id", "");
    v.frame_rate = j.value("frame_rate", 120.0);
    v.object_id = j.at("object_id").get<std::string>();
    v.object_class = j.value("object_class", "");
    v.action_label = j.value("action_label", "");
    const auto& frames = j.at("frames");
    v.frames.reserve(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t) v.frames.push_back(frame_from(frames[t], t));
  } catch (const json::exception& e) {
    throw DataError(std::string("video: ") + e.what());
  }
  validate(v);
  return v;
}

json video_to_json(const MoCapVideo& video) {
  json frames = json::array();
  for (const auto& f : video.frames) frames.push_back(frame_json(f));
  return {{"format", "homotion-video"}, {"id", video.id},
          {"frame_rate", video.frame_rate}, {"object_id", video.object_id},
          {"object_class", video.object_class}, {"action_label", video.action_label},
          {"units", {{"position", "mm"}, {"rotation", "rad"}}}, {"frames", std::move(frames)}};
}

MoCapVideo video_from_csv(const std::string& text) {
  MoCapVideo v;
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  std::size_t row = 0;
  std::size_t n = 0;
  std::size_t m = 0;
  bool quaternion = false;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      const std::string key = trim(line.substr(1, colon - 1));
      const std::string value = trim(line.substr(colon + 1));
      if (key == "id") v.id = value;
      else if (key == "frame_rate") v.frame_rate = parse_double(value, row);
      else if (key == "object_id") v.object_id = value;
      else if (key == "object_class") v.object_class = value;
      else if (key == "action_label") v.action_label = value;
      continue;
    }
    const auto cells = split_csv(line);
    if (header.empty()) {
      header = cells;
      if (header.empty() || header[0] != "t") throw DataError("csv: header must start with 't'");
      for (const auto& h : header) {
        if (h.size() > 1 && h[0] == 'j' && h.back() == 'x') ++n;
        if (h.size() > 1 && h[0] == 'k' && h.back() == 'x') ++m;
        if (h == "qw") quaternion = true;
      }
      const std::size_t expected = 1 + 3 * n + 3 + (quaternion ? 4 : 3) + 3 * m;
      if (header.size() != expected) {
        throw DataError("csv: header has " + std::to_string(header.size()) + " columns, expected " +
                        std::to_string(expected));
      }
      continue;
    }
    if (cells.size() != header.size()) {
      throw DataError("csv row " + std::to_string(row) + ": " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    }
    std::size_t c = 1;
    auto next = [&] { return parse_double(cells[c++], row); };
    auto next3 = [&] {
      const double x = next();
      const double y = next();
      const double z = next();
      return Vec3(x, y, z);
    };
    Frame f;
    for (std::size_t i = 0; i < n; ++i) f.skeleton.push_back(next3());
    f.object_pose.translation = next3();
    if (quaternion) {
      const double w = next();
      const Vec3 q = next3();
      f.object_pose.rotation = quaternion_to_rotvec(w, q.x(), q.y(), q.z());
    } else {
      f.object_pose.rotation = next3();
    }
    for (std::size_t i = 0; i < m; ++i) f.object_keypoints.push_back(next3());
    v.frames.push_back(std::move(f));
  }
  if (header.empty()) throw DataError("csv: missing header row");
  if (v.object_id.empty()) throw DataError("csv: missing '# object_id:' metadata");
  validate(v);
  return v;
}

std::string video_to_csv(const MoCapVideo& video) {
  std::ostringstream out;
  out << "# id: " << video.id << "\n# frame_rate: " << io::format_double(video.frame_rate)
      << "\n# object_id: " << video.object_id << "\n# object_class: " << video.object_class
      << "\n# action_label: " << video.action_label << "\n";
  const std::size_t n = video.frames.empty() ? 0 : video.frames[0].skeleton.size();
  const std::size_t m = video.frames.empty() ? 0 : video.frames[0].object_keypoints.size();
  out << "t";
  for (std::size_t i = 0; i < n; ++i) out << ",j" << i << "x,j" << i << "y,j" << i << "z";
  out << ",px,py,pz,rx,ry,rz";
  for (std::size_t i = 0; i < m; ++i) out << ",k" << i << "x,k" << i << "y,k" << i << "z";
  out << "\n";
  auto put = [&](const Vec3& p) {
    out << ',' << io::format_double(p.x()) << ',' << io::format_double(p.y()) << ',' << io::format_double(p.z());
  };
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    const auto& f = video.frames[t];
    out << io::format_double(static_cast<double>(t) / video.frame_rate);
    for (const auto& p : f.skeleton) put(p);
    put(f.object_pose.translation);
    put(f.object_pose.rotation);
    for (const auto& p : f.object_keypoints) put(p);
    out << "\n";
  }
  return out.str();
}

MoCapVideo load_video(const fs::path& path) {
  MoCapVideo v;
  const auto ext = path.extension().string();
  try {
    if (ext == ".csv") {
      v = video_from_csv(io::read_text(path));
    } else {
      v = video_from_json(io::read_json(path));
    }
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (v.id.empty()) v.id = path.stem().string();
  return v;
}

void save_video(const MoCapVideo& video, const fs::path& path) {
  if (path.extension() == ".csv") {
    io::write_text(path, video_to_csv(video));
  } else {
    io::write_json(path, video_to_json(video));
  }
}

void WindowConfig::validate() const {
  if (step == 0 || subsample == 0 || window == 0) throw ConfigError("window, step and subsample must be positive");
  if (window % subsample != 0) throw ConfigError("window must be a multiple of subsample");
  if (input_frames < 2 || input_frames >= frames()) {
    throw ConfigError("input_frames must leave at least one target frame and two input frames");
  }
  if (!(labels.rest_threshold >= 0.0) || !(labels.rotation_scale >= 0.0)) {
    throw ConfigError("rest_threshold and rotation_scale must be non-negative");
  }
}

json to_json(const WindowConfig& cfg) {
  return {{"window", cfg.window}, {"step", cfg.step}, {"subsample", cfg.subsample},
          {"input_frames", cfg.input_frames}, {"rest_threshold", cfg.labels.rest_threshold},
          {"rotation_scale", cfg.labels.rotation_scale}};
}

WindowConfig window_config_from_json(const json& j) {
  static const std::set<std::string> known = {"window", "step", "subsample", "input_frames", "rest_threshold",
                                              "rotation_scale"};
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown window option '" + k + "'");
  }
  WindowConfig c;
  try {
    c.window = j.value("window", c.window);
    c.step = j.value("step", c.step);
    c.subsample = j.value("subsample", c.subsample);
    c.input_frames = j.value("input_frames", c.input_frames);
    c.labels.rest_threshold = j.value("rest_threshold", c.labels.rest_threshold);
    c.labels.rotation_scale = j.value("rotation_scale", c.labels.rotation_scale);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("window options: ") + e.what());
  }
  c.validate();
  return c;
}

double motion_magnitude(const PoseDelta& d, const LabelConfig& cfg) {
  return std::max(d.translation.norm(), cfg.rotation_scale * d.rotation.norm());
}

bool is_moving(const PoseDelta& d, const LabelConfig& cfg) { return !(motion_magnitude(d, cfg) < cfg.rest_threshold); }

Labels compute_labels(std::span<const Pose> poses, std::size_t k, std::size_t horizon, const LabelConfig& cfg) {
  if (k + horizon >= poses.size()) throw DataError("missing pose at frame " + std::to_string(poses.size()));
  for (std::size_t t = k; t <= k + horizon; ++t) {
    if (!finite(poses[t].translation) || !finite(poses[t].rotation)) {
      throw DataError("missing pose at frame " + std::to_string(t));
    }
  }
  Labels out;
  for (std::size_t d = 1; d <= horizon; ++d) {
    const PoseDelta delta = pose_change(poses[k], poses[k + d]);
    out.deltas.push_back(delta);
    out.motion.push_back(is_moving(delta, cfg) ? 1 : 0);
  }
  return out;
}

std::size_t count_windows(std::size_t length, const WindowConfig& cfg) {
  if (length < cfg.window) return 0;
  return (length - cfg.window) / cfg.step + 1;
}

std::vector<InteractionWindow> extract_windows(const MoCapVideo& video, const WindowConfig& cfg, ExtractStats* stats,
                                               bool keep_moving) {
  cfg.validate();
  std::vector<InteractionWindow> out;
  const std::size_t count = count_windows(video.size(), cfg);
  const std::size_t kept_frames = cfg.frames();
  const std::size_t k = cfg.input_frames - 1;
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t start = w * cfg.step;
    InteractionWindow win;
    win.start_frame = start;
    std::vector<Pose> poses;
    for (std::size_t i = 0; i < kept_frames; ++i) {
      win.frames.push_back(video.frames[start + i * cfg.subsample]);
      poses.push_back(win.frames.back().object_pose);
    }
    if (!keep_moving && is_moving(pose_change(poses[k - 1], poses[k]), cfg.labels)) continue;
    win.labels = compute_labels(poses, k, cfg.target_frames(), cfg.labels);
    win.video_id = video.id;
    win.id = video.id + "_f" + std::to_string(start);
    win.object_id = video.object_id;
    win.object_class = video.object_class;
    win.action_label = video.action_label;
    out.push_back(std::move(win));
  }
  if (stats) {
    stats->candidates += count;
    stats->kept += out.size();
  }
  return out;
}

json window_to_json(const InteractionWindow& w) {
  json frames = json::array();
  for (const auto& f : w.frames) frames.push_back(frame_json(f));
  json deltas = json::array();
  for (const auto& d : w.labels.deltas) {
    deltas.push_back({{"translation", vec_json(d.translation)}, {"rotation", vec_json(d.rotation)}});
  }
  return {{"id", w.id}, {"video_id", w.video_id}, {"object_id", w.object_id},
          {"object_class", w.object_class}, {"action_label", w.action_label},
          {"start_frame", w.start_frame}, {"frames", std::move(frames)},
          {"labels", {{"deltas", std::move(deltas)}, {"motion", w.labels.motion}}}};
}

InteractionWindow window_from_json(const json& j) {
  InteractionWindow w;
  try {
    w.id = j.at("id").get<std::string>();
    w.video_id = j.value("video_id", "");
    w.object_id = j.at("object_id").get<std::string>();
    w.object_class = j.value("object_class", "");
    w.action_label = j.value("action_label", "");
    w.start_frame = j.value("start_frame", std::size_t{0});
    const auto& frames = j.at("frames");
    for (std::size_t t = 0; t < frames.size(); ++t) w.frames.push_back(frame_from(frames[t], t));
    for (const auto& d : j.at("labels").at("deltas")) {
      w.labels.deltas.push_back({vec_from(d.at("translation"), "delta"), vec_from(d.at("rotation"), "delta")});
    }
    w.labels.motion = j.at("labels").at("motion").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("window: ") + e.what());
  }
  if (w.labels.motion.size() != w.labels.deltas.size() || w.labels.deltas.size() >= w.frames.size()) {
    throw DataError("window " + w.id + ": label count does not match frames");
  }
  return w;
}

void save_windows(const std::vector<InteractionWindow>& windows, const fs::path& path) {
  json a = json::array();
  for (const auto& w : windows) a.push_back(window_to_json(w));
  io::write_json(path, {{"format", "homotion-windows"}, {"windows", std::move(a)}});
}

std::vector<InteractionWindow> load_windows(const fs::path& path) {
  const json j = io::read_json(path);
  if (!j.contains("windows")) throw DataError(path.string() + ": not a window file");
  std::vector<InteractionWindow> out;
  for (const auto& w : j.at("windows")) out.push_back(window_from_json(w));
  return out;
}

std::vector<InteractionWindow> load_window_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("window directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<InteractionWindow> out;
  for (const auto& f : files) {
    const json j = io::read_json(f);
    if (!j.is_object() || j.value("format", "") != "homotion-windows") continue;
    for (const auto& w : j.at("windows")) out.push_back(window_from_json(w));
  }
  return out;
}

SplitManifest make_splits(const std::vector<InteractionWindow>& windows, const std::vector<std::string>& reserved,
                          const SplitRatios& ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9 || ratios.train < 0 || ratios.val < 0 || ratios.test < 0) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  const std::set<std::string> held(reserved.begin(), reserved.end());
  SplitManifest m;
  m.seed = seed;
  m.reserved_object_ids = reserved;
  std::vector<std::string> rest;
  std::set<std::string> seen;
  for (const auto& w : windows) {
    if (!seen.insert(w.id).second) throw DataError("duplicate window id " + w.id);
    (held.count(w.object_id) ? m.test_unseen : rest).push_back(w.id);
  }
  std::sort(rest.begin(), rest.end());
  std::sort(m.test_unseen.begin(), m.test_unseen.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = rest.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(rest[i - 1], rest[pick(rng)]);
  }
  const auto n = static_cast<double>(rest.size());
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * n));
  const auto n_val = std::min(rest.size() - n_train, static_cast<std::size_t>(std::llround(ratios.val * n)));
  if (n_train == 0) throw DataError("training split is empty: reserved objects cover all data");
  m.train.assign(rest.begin(), rest.begin() + n_train);
  m.val.assign(rest.begin() + n_train, rest.begin() + n_train + n_val);
  m.test_seen.assign(rest.begin() + n_train + n_val, rest.end());
  return m;
}

json to_json(const SplitManifest& m) {
  return {{"seed", m.seed}, {"reserved_object_ids", m.reserved_object_ids}, {"train", m.train},
          {"val", m.val}, {"test_seen", m.test_seen}, {"test_unseen", m.test_unseen}};
}

SplitManifest manifest_from_json(const json& j) {
  SplitManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.reserved_object_ids = j.at("reserved_object_ids").get<std::vector<std::string>>();
    m.train = j.at("train").get<std::vector<std::string>>();
    m.val = j.at("val").get<std::vector<std::string>>();
    m.test_seen = j.at("test_seen").get<std::vector<std::string>>();
    m.test_unseen = j.at("test_unseen").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
  return m;
}

std::vector<InteractionWindow> select(const std::vector<InteractionWindow>& windows,
                                      const std::vector<std::string>& ids) {
  std::map<std::string, const InteractionWindow*> by_id;
  for (const auto& w : windows) by_id[w.id] = &w;
  std::vector<InteractionWindow> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("unknown window id " + id);
    out.push_back(*it->second);
  }
  return out;
}

void DescriptorRegistry::add(const std::string& object_id, rigidsim::DynamicDescriptor d) {
  items_[object_id] = std::move(d);
}

bool DescriptorRegistry::contains(const std::string& object_id) const { return items_.count(object_id) > 0; }

const rigidsim::DynamicDescriptor& DescriptorRegistry::at(const std::string& object_id) const {
  const auto it = items_.find(object_id);
  if (it == items_.end()) throw DataError("no descriptor for object '" + object_id + "'");
  return it->second;
}

DescriptorRegistry DescriptorRegistry::load_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("descriptor directory not found: " + dir.string());
  DescriptorRegistry r;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".json") continue;
    const json j = io::read_json(e.path());
    if (!j.is_object() || j.value("format", "") != "homotion-descriptor") continue;
    r.add(e.path().stem().string(), rigidsim::descriptor_from_json(j));
  }
  return r;
}

ObjectInstance make_instance(const rigidsim::ConceptualModel& model, const std::string& object_id, double scale) {
  if (!(scale > 0.0)) throw ConfigError("object scale must be positive");
  rigidsim::validate(model);
  ObjectInstance inst{object_id, model};
  const Vec3 c = centroid(model.keypoints);
  for (auto& p : inst.model.keypoints) {
    p.x() = c.x() + scale * (p.x() - c.x());
    p.y() = c.y() + scale * (p.y() - c.y());
    p.z() = scale * p.z();
  }
  return inst;
}

namespace {

const std::vector<std::pair<std::string, Template>>& template_table() {
  static const std::vector<std::pair<std::string, Template>> table = {
      {"push", Template::kPush},           {"pull", Template::kPull},
      {"move_left", Template::kMoveLeft},  {"move_right", Template::kMoveRight},
      {"rotate_cw", Template::kRotateCw},  {"rotate_ccw", Template::kRotateCcw},
      {"tilt", Template::kTilt},           {"lift_carry", Template::kLiftCarry},
      {"lift_place", Template::kLiftPlace}, {"lift_rotate", Template::kLiftRotate},
  };
  return table;
}

// Joint offsets from the hip for an upright actor facing +x, left along +y.
const std::map<std::string, Vec3>& canonical_stance() {
  static const std::map<std::string, Vec3> stance = {
      {"hips", {0, 0, 0}},           {"spine", {0, 0, 150}},        {"chest", {0, 0, 330}},
      {"neck", {0, 0, 500}},         {"head", {20, 0, 620}},        {"l_shoulder", {0, 180, 460}},
      {"l_elbow", {0, 200, 180}},    {"l_wrist", {10, 210, -60}},   {"l_hand", {20, 210, -140}},
      {"r_shoulder", {0, -180, 460}}, {"r_elbow", {0, -200, 180}},  {"r_wrist", {10, -210, -60}},
      {"r_hand", {20, -210, -140}},  {"l_upleg", {0, 100, -50}},    {"l_knee", {0, 100, -480}},
      {"l_ankle", {0, 100, -880}},   {"l_foot", {120, 100, -940}},  {"r_upleg", {0, -100, -50}},
      {"r_knee", {0, -100, -480}},   {"r_ankle", {0, -100, -880}},  {"r_foot", {120, -100, -940}},
  };
  return stance;
}

constexpr double kHipHeight = 950.0;  // mm

// Rigid motion of the object as a function of progress u in [0, 1].
struct MotionPlan {
  Template tmpl;
  double distance = 0.0;  // mm
  double angle = 0.0;     // rad
  double height = 0.0;    // mm
  Vec3 pivot = Vec3::Zero();

  // Rotation and centroid at progress u, given the rest centroid c0.
  std::pair<Mat3, Vec3> at(double u, const Vec3& c0) const {
    const double s = smoothstep5(u);
    auto phase = [u](double a, double b) { return smoothstep5((u - a) / (b - a)); };
    switch (tmpl) {
      case Template::kPush: return {Mat3::Identity(), c0 + Vec3(distance * s, 0, 0)};
      case Template::kPull: return {Mat3::Identity(), c0 - Vec3(distance * s, 0, 0)};
      case Template::kMoveLeft: return {Mat3::Identity(), c0 + Vec3(0, distance * s, 0)};
      case Template::kMoveRight: return {Mat3::Identity(), c0 - Vec3(0, distance * s, 0)};
      case Template::kRotateCw: return {rot_z(-angle * s), c0};
      case Template::kRotateCcw: return {rot_z(angle * s), c0};
      case Template::kTilt: {
        const Mat3 r = rot_y(angle * s);
        return {r, pivot + r * (c0 - pivot)};
      }
      case Template::kLiftCarry: {
        return {Mat3::Identity(), c0 + Vec3(distance * phase(0.4, 1.0), 0, height * phase(0.0, 0.4))};
      }
      case Template::kLiftPlace: {
        const double z = height * (phase(0.0, 1.0 / 3.0) - phase(2.0 / 3.0, 1.0));
        return {Mat3::Identity(), c0 + Vec3(0, distance * phase(1.0 / 3.0, 2.0 / 3.0), z)};
      }
      case Template::kLiftRotate: {
        const double z = height * (phase(0.0, 1.0 / 3.0) - phase(2.0 / 3.0, 1.0));
        return {rot_z(angle * phase(1.0 / 3.0, 2.0 / 3.0)), c0 + Vec3(0, 0, z)};
      }
    }
    return {Mat3::Identity(), c0};
  }
};

}  // namespace

const std::vector<std::string>& template_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, _] : template_table()) n.push_back(name);
    return n;
  }();
  return names;
}

Template parse_template(const std::string& name) {
  for (const auto& [n, t] : template_table()) {
    if (n == name) return t;
  }
  throw ConfigError("unknown template '" + name + "'");
}

const char* template_name(Template t) {
  for (const auto& [n, tt] : template_table()) {
    if (tt == t) return n.c_str();
  }
  return "?";
}

MoCapVideo synth_generate(Template tmpl, const ObjectInstance& object, const graphs::SkeletonTopology& skeleton,
                          const SynthConfig& cfg, std::uint64_t seed, SynthTimeline* timeline) {
  rigidsim::validate(object.model);
  graphs::validate(skeleton);
  if (!(cfg.frame_rate > 0.0) || !(cfg.noise >= 0.0) || !(cfg.duration > 0.0)) {
    throw ConfigError("synth: frame_rate and duration must be positive and noise non-negative");
  }
  const auto& stance = canonical_stance();
  std::vector<Vec3> offsets;
  for (const auto& name : skeleton.joints) {
    const auto it = stance.find(name);
    if (it == stance.end()) throw ConfigError("synth: no canonical stance for joint '" + name + "'");
    offsets.push_back(it->second);
  }

  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  // Object at rest, footprint centred near the origin.
  std::vector<Vec3> model_mm;
  for (const auto& p : object.model.keypoints) model_mm.push_back(p * 1000.0);
  const Vec3 c_model = centroid(model_mm);
  std::vector<Vec3> local;
  for (const auto& p : model_mm) local.push_back(p - c_model);
  const Vec3 c0(uniform(-150, 150), uniform(-150, 150), c_model.z());
  double min_x = 0, max_x = 0;
  for (const auto& p : local) {
    min_x = std::min(min_x, p.x());
    max_x = std::max(max_x, p.x());
  }

  MotionPlan plan{tmpl};
  plan.distance = uniform(300, 600);
  plan.angle = uniform(std::numbers::pi / 4, std::numbers::pi / 2);
  plan.height = uniform(200, 300);
  if (tmpl == Template::kTilt) {
    plan.angle = uniform(0.25, 0.5);
    plan.pivot = Vec3(c0.x() + max_x, c0.y(), 0.0);
  }

  SynthTimeline tl;
  tl.reach_end = uniform(0.6, 1.0);
  tl.motion_start = tl.reach_end + uniform(0.5, 1.2);
  const double available = cfg.duration - tl.motion_start - 0.3;
  if (available < 0.5) throw ConfigError("synth: duration too short for the motion");
  tl.motion_end = tl.motion_start + std::min(uniform(1.5, 2.5), available);

  const Vec3 hip0(c0.x() + min_x - 450.0, c0.y(), kHipHeight);
  const Vec3 l_rest = hip0 + offsets[skeleton.left_hand];
  const Vec3 r_rest = hip0 + offsets[skeleton.right_hand];
  // Grasp keypoints: nearest the hands' forward reach targets.
  const Vec3 l_reach = hip0 + Vec3(450, 250, 0);
  const Vec3 r_reach = hip0 + Vec3(450, -250, 0);
  auto nearest = [&](const Vec3& target, std::size_t skip) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < local.size(); ++i) {
      const double d = (c0 + local[i] - target).norm();
      if (i != skip && d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  };
  tl.left_grasp = nearest(l_reach, local.size());
  tl.right_grasp = nearest(r_reach, tl.left_grasp);

  const std::size_t shoulder_l = skeleton.index_of("l_shoulder");
  const std::size_t shoulder_r = skeleton.index_of("r_shoulder");
  const std::size_t elbow_l = skeleton.index_of("l_elbow");
  const std::size_t elbow_r = skeleton.index_of("r_elbow");
  const std::size_t wrist_l = skeleton.index_of("l_wrist");
  const std::size_t wrist_r = skeleton.index_of("r_wrist");

  MoCapVideo v;
  v.frame_rate = cfg.frame_rate;
  v.object_id = object.object_id;
  v.object_class = object.model.class_name;
  v.action_label = template_name(tmpl);
  const auto frames = static_cast<std::size_t>(std::llround(cfg.duration * cfg.frame_rate));
  std::normal_distribution<double> jitter(0.0, 1.0);
  auto noisy = [&](Vec3 p) {
    if (cfg.noise > 0.0) p += cfg.noise * Vec3(jitter(rng), jitter(rng), jitter(rng));
    return p;
  };

  for (std::size_t t = 0; t < frames; ++t) {
    const double time = static_cast<double>(t) / cfg.frame_rate;
    const double u = (time - tl.motion_start) / (tl.motion_end - tl.motion_start);
    const auto [rot, c] = plan.at(std::clamp(u, 0.0, 1.0), c0);
    Frame f;
    f.object_pose.translation = c;
    f.object_pose.rotation = matrix_to_rotvec(rot);
    std::vector<Vec3> kps;
    for (const auto& p : local) kps.push_back(rot * p + c);

    const Vec3 hip(hip0.x() + c.x() - c0.x(), hip0.y() + c.y() - c0.y(), kHipHeight);
    std::vector<Vec3> joints;
    for (const auto& o : offsets) joints.push_back(hip + o);
    const double reach = smoothstep5(time / tl.reach_end);
    const Vec3 l_hand = l_rest + reach * (kps[tl.left_grasp] - l_rest) + (hip - hip0);
    const Vec3 r_hand = r_rest + reach * (kps[tl.right_grasp] - r_rest) + (hip - hip0);
    auto pose_arm = [&](std::size_t hand, std::size_t wrist, std::size_t elbow, std::size_t shoulder,
                        const Vec3& target) {
      const Vec3 s = joints[shoulder];
      const Vec3 dir = (s - target).normalized();
      joints[hand] = target;
      joints[wrist] = target + 80.0 * dir;
      joints[elbow] = 0.5 * (s + joints[wrist]) + Vec3(0, 0, -60);
    };
    if (reach > 0.0) {
      pose_arm(skeleton.left_hand, wrist_l, elbow_l, shoulder_l, reach >= 1.0 ? kps[tl.left_grasp] : l_hand);
      pose_arm(skeleton.right_hand, wrist_r, elbow_r, shoulder_r, reach >= 1.0 ? kps[tl.right_grasp] : r_hand);
    }
    for (auto& j : joints) f.skeleton.push_back(noisy(j));
    for (auto& k : kps) f.object_keypoints.push_back(noisy(k));
    v.frames.push_back(std::move(f));
  }
  if (timeline) *timeline = tl;
  return v;
}

}  // namespace homotion::dataset
