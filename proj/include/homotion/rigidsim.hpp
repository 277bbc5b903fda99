#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homotion/geometry.hpp"

// Object dynamic descriptors: the response of a keypoint-abstracted rigid
// body to unit impulses at each keypoint along five local directions.
namespace homotion::rigidsim {

inline constexpr std::size_t kNumKeypoints = 12;
inline constexpr std::size_t kNumDirections = 5;
inline constexpr std::size_t kDescriptorSize = kNumKeypoints * kNumDirections * 6;

// Keypoints in meters, local frame, resting on the floor plane z = 0.
struct ConceptualModel {
  std::string class_name;
  std::vector<Vec3> keypoints;
  std::vector<double> masses;  // kg; empty means 1 kg each
  std::optional<char> symmetry_plane;  // 'x' or 'y', informational

  double mass(std::size_t i) const { return masses.empty() ? 1.0 : masses[i]; }
};

// Throws ConfigError on a malformed model.
void validate(const ConceptualModel& model);

enum class Direction : std::size_t { kForward = 0, kBackward, kLeft, kRight, kUp };

// forward +x, backward -x, left +y, right -y, up +z.
const std::array<Vec3, kNumDirections>& direction_set();
const char* direction_name(std::size_t j);

struct ImpulseSpec {
  std::size_t keypoint = 0;
  std::size_t direction = 0;
  double magnitude = 1.0;  // N*s
};

struct SimConfig {
  double dt = 1.0 / 240.0;
  double horizon = 0.5;
  double gravity = 9.81;
  double floor_height = 0.0;
  double restitution = 0.0;
  double friction = 0.5;
  bool floor_enabled = true;
  bool gravity_enabled = true;
  int contact_passes = 10;

  void validate() const;
};

nlohmann::json to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const nlohmann::json& j);

struct MassProperties {
  double total_mass = 0.0;
  Vec3 com = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();  // about the COM
  bool singular = false;        // collinear keypoints
};

MassProperties mass_properties(const ConceptualModel& model);

// Kinetic energy around one contact-resolution pass.
struct ContactEvent {
  long step = 0;
  double energy_before = 0.0;
  double energy_after = 0.0;
};

struct SimTrace {
  std::vector<ContactEvent> contacts;
  std::size_t steps = 0;
};

PoseDelta simulate_impulse(const ConceptualModel& model, const ImpulseSpec& spec, const SimConfig& cfg,
                           SimTrace* trace = nullptr);

// 360 values in (keypoint, direction, [tx ty tz rx ry rz]) order, meters and
// radians.
struct DynamicDescriptor {
  std::vector<double> values;
  std::string model_hash;

  static std::size_t index(std::size_t keypoint, std::size_t direction, std::size_t component) {
    return (keypoint * kNumDirections + direction) * 6 + component;
  }
};

// Runs all 60 impulse simulations on up to `jobs` threads; results are
// written to fixed slots, so the output does not depend on `jobs`.
DynamicDescriptor compute_descriptor(const ConceptualModel& model, const SimConfig& cfg, unsigned jobs = 1);

std::string model_hash(const ConceptualModel& model);

// File forms use millimeters for positions and translations.
nlohmann::json model_to_json(const ConceptualModel& model);
ConceptualModel model_from_json(const nlohmann::json& j);
ConceptualModel load_model(const std::filesystem::path& path);
void save_model(const ConceptualModel& model, const std::filesystem::path& path);

nlohmann::json descriptor_to_json(const DynamicDescriptor& d, const SimConfig& cfg,
                                  const std::string& class_name);
DynamicDescriptor descriptor_from_json(const nlohmann::json& j);
DynamicDescriptor load_descriptor(const std::filesystem::path& path);

}  // namespace homotion::rigidsim
