#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homotion/geometry.hpp"
#include "homotion/graphs.hpp"
#include "homotion/rigidsim.hpp"

namespace homotion::dataset {

// One MoCap frame. Positions in millimeters, rotation vector in radians.
struct Frame {
  std::vector<Vec3> skeleton;
  Pose object_pose;
  std::vector<Vec3> object_keypoints;
};

struct MoCapVideo {
  std::string id;
  double frame_rate = 120.0;
  std::string object_id;
  std::string object_class;
  std::string action_label;
  std::vector<Frame> frames;

  std::size_t size() const { return frames.size(); }
};

// Throws DataError on inconsistent joint/keypoint counts, non-finite values
// or a non-positive frame rate.
void validate(const MoCapVideo& video);

// Largest deviation, in mm, of keypoints from R * local + t, with local
// keypoints taken from the first frame.
double rigid_consistency_error(const MoCapVideo& video);

MoCapVideo video_from_json(const nlohmann::json& j);
nlohmann::json video_to_json(const MoCapVideo& video);

// CSV: `# key: value` metadata lines, a header row, then one row per frame:
// t, j0x..j{N-1}z, px py pz, rx ry rz (or qw qx qy qz), k0x..k{M-1}z.
MoCapVideo video_from_csv(const std::string& text);
std::string video_to_csv(const MoCapVideo& video);

// Dispatches on extension (.json / .csv). The id defaults to the file stem.
MoCapVideo load_video(const std::filesystem::path& path);
void save_video(const MoCapVideo& video, const std::filesystem::path& path);

struct LabelConfig {
  double rest_threshold = 5.0;  // mm
  double rotation_scale = 100.0;  // mm per rad
};

struct WindowConfig {
  std::size_t window = 240;
  std::size_t step = 12;
  std::size_t subsample = 12;
  std::size_t input_frames = 10;
  LabelConfig labels;

  std::size_t frames() const { return window / subsample; }
  std::size_t target_frames() const { return frames() - input_frames; }
  void validate() const;
};

nlohmann::json to_json(const WindowConfig& cfg);
WindowConfig window_config_from_json(const nlohmann::json& j);

struct Labels {
  std::vector<PoseDelta> deltas;  // delta = 1..H, relative to frame K
  std::vector<int> motion;        // 1 moving, 0 stationary
};

double motion_magnitude(const PoseDelta& d, const LabelConfig& cfg);
bool is_moving(const PoseDelta& d, const LabelConfig& cfg);

// Labels for poses[k + 1 .. k + horizon] against poses[k].
Labels compute_labels(std::span<const Pose> poses, std::size_t k, std::size_t horizon, const LabelConfig& cfg);

struct InteractionWindow {
  std::string id;
  std::string video_id;
  std::string object_id;
  std::string object_class;
  std::string action_label;
  std::size_t start_frame = 0;
  std::vector<Frame> frames;  // input frames followed by target frames
  Labels labels;

  std::size_t input_frames() const { return frames.size() - labels.deltas.size(); }
  std::size_t target_frames() const { return labels.deltas.size(); }
  // Index of frame K, the last input frame.
  std::size_t k() const { return input_frames() - 1; }
};

// floor((L - window) / step) + 1, or 0 for a short video.
std::size_t count_windows(std::size_t length, const WindowConfig& cfg);

struct ExtractStats {
  std::size_t candidates = 0;
  std::size_t kept = 0;
};

// Drops windows whose object moves between the last two input frames by more
// than the rest threshold, unless keep_moving is set.
std::vector<InteractionWindow> extract_windows(const MoCapVideo& video, const WindowConfig& cfg,
                                               ExtractStats* stats = nullptr, bool keep_moving = false);

nlohmann::json window_to_json(const InteractionWindow& w);
InteractionWindow window_from_json(const nlohmann::json& j);

// A window file holds every window extracted from one video.
void save_windows(const std::vector<InteractionWindow>& windows, const std::filesystem::path& path);
std::vector<InteractionWindow> load_windows(const std::filesystem::path& path);
// All *.json window files below `dir`, in sorted path order.
std::vector<InteractionWindow> load_window_dir(const std::filesystem::path& dir);

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test_seen;
  std::vector<std::string> test_unseen;
  std::vector<std::string> reserved_object_ids;
  std::uint64_t seed = 0;
};

struct SplitRatios {
  double train = 0.72;
  double val = 0.18;
  double test = 0.10;
};

SplitManifest make_splits(const std::vector<InteractionWindow>& windows, const std::vector<std::string>& reserved,
                          const SplitRatios& ratios, std::uint64_t seed);

nlohmann::json to_json(const SplitManifest& m);
SplitManifest manifest_from_json(const nlohmann::json& j);

// Windows whose ids are listed, in list order. DataError for an unknown id.
std::vector<InteractionWindow> select(const std::vector<InteractionWindow>& windows,
                                      const std::vector<std::string>& ids);

// Dynamic descriptors keyed by object id.
class DescriptorRegistry {
 public:
  void add(const std::string& object_id, rigidsim::DynamicDescriptor d);
  bool contains(const std::string& object_id) const;
  const rigidsim::DynamicDescriptor& at(const std::string& object_id) const;
  std::size_t size() const { return items_.size(); }
  const std::map<std::string, rigidsim::DynamicDescriptor>& items() const { return items_; }

  // Every descriptor file <object_id>.json in `dir`; other JSON files are skipped.
  static DescriptorRegistry load_dir(const std::filesystem::path& dir);

 private:
  std::map<std::string, rigidsim::DynamicDescriptor> items_;
};

// An object instance: a conceptual model scaled about its footprint centre.
struct ObjectInstance {
  std::string object_id;
  rigidsim::ConceptualModel model;
};

ObjectInstance make_instance(const rigidsim::ConceptualModel& model, const std::string& object_id, double scale);

enum class Template {
  kPush,
  kPull,
  kMoveLeft,
  kMoveRight,
  kRotateCw,
  kRotateCcw,
  kTilt,
  kLiftCarry,
  kLiftPlace,
  kLiftRotate,
};

const std::vector<std::string>& template_names();
Template parse_template(const std::string& name);
const char* template_name(Template t);

struct SynthConfig {
  double duration = 6.3;  // s
  double frame_rate = 120.0;
  double noise = 2.0;  // mm, standard deviation of marker jitter
};

// Timeline of a generated clip, in seconds.
struct SynthTimeline {
  double reach_end = 0.0;
  double motion_start = 0.0;
  double motion_end = 0.0;
  std::size_t left_grasp = 0;
  std::size_t right_grasp = 0;
};

MoCapVideo synth_generate(Template tmpl, const ObjectInstance& object, const graphs::SkeletonTopology& skeleton,
                          const SynthConfig& cfg, std::uint64_t seed, SynthTimeline* timeline = nullptr);

}  // namespace homotion::dataset
