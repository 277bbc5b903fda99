#include "homotion/rigidsim.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <exception>

#include "homotion/errors.hpp"
#include "homotion/hash.hpp"
#include "homotion/io.hpp"
#include "homotion/parallel.hpp"

namespace homotion::rigidsim {

namespace {

constexpr double kContactTolerance = 1e-5;  // m

Mat3 skew(const Vec3& v) {
  Mat3 k;
  k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return k;
}

// Pseudo-inverse of a symmetric PSD matrix; near-zero eigenvalues are dropped.
Mat3 pseudo_inverse_psd(const Mat3& m, bool* singular) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(m);
  const auto& ev = es.eigenvalues();
  const double cutoff = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Vec3 inv = Vec3::Zero();
  bool sing = false;
  for (int i = 0; i < 3; ++i) {
    if (ev(i) > cutoff) {
      inv(i) = 1.0 / ev(i);
    } else {
      sing = true;
    }
  }
  if (singular) *singular = sing;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

struct BodyState {
  Vec3 com;
  Mat3 orientation = Mat3::Identity();
  Vec3 velocity = Vec3::Zero();
  Vec3 angular_momentum = Vec3::Zero();
};

}  // namespace

void validate(const ConceptualModel& model) {
  if (model.keypoints.size() != kNumKeypoints) {
    throw ConfigError("conceptual model '" + model.class_name + "' has " +
                      std::to_string(model.keypoints.size()) + " keypoints, expected 12");
  }
  if (!model.masses.empty() && model.masses.size() != kNumKeypoints) {
    throw ConfigError("conceptual model '" + model.class_name + "' mass list must have 12 entries");
  }
  double min_z = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < model.keypoints.size(); ++i) {
    if (!model.keypoints[i].allFinite()) {
      throw ConfigError("conceptual model '" + model.class_name + "' keypoint " + std::to_string(i) +
                        " is not finite");
    }
    if (!(model.mass(i) > 0.0) || !std::isfinite(model.mass(i))) {
      throw ConfigError("conceptual model '" + model.class_name + "' mass " + std::to_string(i) +
                        " must be positive");
    }
    min_z = std::min(min_z, model.keypoints[i].z());
  }
  if (min_z < -1e-12) {
    throw ConfigError("conceptual model '" + model.class_name + "' is below the floor plane (min z " +
                      std::to_string(min_z) + " m)");
  }
}

const std::array<Vec3, kNumDirections>& direction_set() {
  static const std::array<Vec3, kNumDirections> dirs = {Vec3::UnitX(), Vec3(-1, 0, 0), Vec3::UnitY(),
                                                        Vec3(0, -1, 0), Vec3::UnitZ()};
  return dirs;
}

const char* direction_name(std::size_t j) {
  static const char* names[kNumDirections] = {"forward", "backward", "left", "right", "up"};
  return j < kNumDirections ? names[j] : "invalid";
}

void SimConfig::validate() const {
  if (!(dt > 0.0)) throw ConfigError("sim dt must be > 0");
  if (!(horizon >= dt)) throw ConfigError("sim horizon must be >= dt");
  if (!(friction >= 0.0)) throw ConfigError("friction coefficient must be >= 0");
  if (!(restitution >= 0.0 && restitution <= 1.0)) throw ConfigError("restitution must lie in [0, 1]");
  if (contact_passes < 1) throw ConfigError("contact_passes must be >= 1");
}

nlohmann::json to_json(const SimConfig& cfg) {
  return {{"dt", cfg.dt},
          {"horizon", cfg.horizon},
          {"gravity", cfg.gravity},
          {"floor_height", cfg.floor_height},
          {"restitution", cfg.restitution},
          {"friction", cfg.friction},
          {"floor_enabled", cfg.floor_enabled},
          {"gravity_enabled", cfg.gravity_enabled},
          {"contact_passes", cfg.contact_passes}};
}

SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "dt") cfg.dt = value.get<double>();
    else if (key == "horizon") cfg.horizon = value.get<double>();
    else if (key == "gravity") cfg.gravity = value.get<double>();
    else if (key == "floor_height") cfg.floor_height = value.get<double>();
    else if (key == "restitution") cfg.restitution = value.get<double>();
    else if (key == "friction") cfg.friction = value.get<double>();
    else if (key == "floor_enabled") cfg.floor_enabled = value.get<bool>();
    else if (key == "gravity_enabled") cfg.gravity_enabled = value.get<bool>();
    else if (key == "contact_passes") cfg.contact_passes = value.get<int>();
    else throw ConfigError("unknown sim config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

MassProperties mass_properties(const ConceptualModel& model) {
  MassProperties mp;
  for (std::size_t i = 0; i < model.keypoints.size(); ++i) {
    mp.total_mass += model.mass(i);
    mp.com += model.mass(i) * model.keypoints[i];
  }
  mp.com /= mp.total_mass;
  for (std::size_t i = 0; i < model.keypoints.size(); ++i) {
    const Vec3 r = model.keypoints[i] - mp.com;
    mp.inertia += model.mass(i) * (r.squaredNorm() * Mat3::Identity() - r * r.transpose());
  }
  pseudo_inverse_psd(mp.inertia, &mp.singular);
  return mp;
}

PoseDelta simulate_impulse(const ConceptualModel& model, const ImpulseSpec& spec, const SimConfig& cfg,
                           SimTrace* trace) {
  validate(model);
  cfg.validate();
  if (spec.keypoint >= kNumKeypoints || spec.direction >= kNumDirections) {
    throw ConfigError("impulse indices out of range: keypoint " + std::to_string(spec.keypoint) +
                      ", direction " + std::to_string(spec.direction));
  }
  if (spec.magnitude < 0.0 || !std::isfinite(spec.magnitude)) {
    throw ConfigError("impulse magnitude must be finite and non-negative");
  }

  const MassProperties mp = mass_properties(model);
  const double mass = mp.total_mass;
  const Mat3 inertia_inv_body = pseudo_inverse_psd(mp.inertia, nullptr);

  std::vector<Vec3> offsets(model.keypoints.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) offsets[i] = model.keypoints[i] - mp.com;

  BodyState s;
  s.com = mp.com;

  // Instantaneous impulse at t = 0, expressed in the local frame (identity
  // orientation at rest).
  const Vec3 impulse = spec.magnitude * direction_set()[spec.direction];
  s.velocity += impulse / mass;
  s.angular_momentum += offsets[spec.keypoint].cross(impulse);

  const Vec3 up = Vec3::UnitZ();
  const long steps = std::lround(cfg.horizon / cfg.dt);
  std::vector<Vec3> world_r(offsets.size());
  std::vector<Vec3> contact_impulse(offsets.size());
  std::vector<bool> active(offsets.size());

  auto inertia_inv_world = [&] { return Mat3(s.orientation * inertia_inv_body * s.orientation.transpose()); };
  auto kinetic = [&](const Mat3& iinv) {
    return 0.5 * mass * s.velocity.squaredNorm() + 0.5 * s.angular_momentum.dot(iinv * s.angular_momentum);
  };

  for (long step = 0; step < steps; ++step) {
    if (cfg.gravity_enabled) s.velocity.z() -= cfg.gravity * cfg.dt;

    if (cfg.floor_enabled) {
      const Mat3 iinv = inertia_inv_world();
      for (std::size_t i = 0; i < offsets.size(); ++i) world_r[i] = s.orientation * offsets[i];
      for (int pass = 0; pass < cfg.contact_passes; ++pass) {
        const Vec3 omega = iinv * s.angular_momentum;
        std::size_t n_active = 0;
        for (std::size_t i = 0; i < offsets.size(); ++i) {
          active[i] = false;
          const Vec3& r = world_r[i];
          if (s.com.z() + r.z() > cfg.floor_height + kContactTolerance) continue;
          const Vec3 u = s.velocity + omega.cross(r);
          const double un = u.dot(up);
          if (un >= 0.0) continue;
          // Point-velocity response to a unit impulse at r.
          const Mat3 k = Mat3::Identity() / mass - skew(r) * iinv * skew(r);
          const double jn = -(1.0 + cfg.restitution) * un / up.dot(k * up);
          const Vec3 u_after = u + k * (jn * up);
          const Vec3 ut = u_after - u_after.dot(up) * up;
          Vec3 p = jn * up;
          const double ut_norm = ut.norm();
          if (ut_norm > 1e-12) {
            const Vec3 tdir = ut / ut_norm;
            const double kt = tdir.dot(k * tdir);
            const double alpha = std::min(ut_norm / kt, cfg.friction * jn);
            p -= alpha * tdir;
          }
          contact_impulse[i] = p;
          active[i] = true;
          ++n_active;
        }
        if (n_active == 0) break;
        // Each contact's impulse alone is dissipative; applying their mean
        // keeps the pass dissipative (kinetic energy is convex) and treats
        // contacts symmetrically.
        const double before = trace ? kinetic(iinv) : 0.0;
        const double w = 1.0 / static_cast<double>(n_active);
        Vec3 dp = Vec3::Zero();
        Vec3 dl = Vec3::Zero();
        for (std::size_t i = 0; i < offsets.size(); ++i) {
          if (!active[i]) continue;
          dp += contact_impulse[i];
          dl += world_r[i].cross(contact_impulse[i]);
        }
        s.velocity += w * dp / mass;
        s.angular_momentum += w * dl;
        if (trace) trace->contacts.push_back({step, before, kinetic(iinv)});
      }
    }

    const Vec3 omega = inertia_inv_world() * s.angular_momentum;
    s.com += s.velocity * cfg.dt;
    s.orientation = rotvec_to_matrix(omega * cfg.dt) * s.orientation;

    if (cfg.floor_enabled) {
      double min_z = std::numeric_limits<double>::infinity();
      for (const auto& r : offsets) min_z = std::min(min_z, s.com.z() + (s.orientation * r).z());
      if (min_z < cfg.floor_height) s.com.z() += cfg.floor_height - min_z;
    }

    if (!s.com.allFinite() || !s.orientation.allFinite() || !s.velocity.allFinite() ||
        !s.angular_momentum.allFinite()) {
      throw SimulationError("non-finite rigid-body state", step);
    }
  }
  if (trace) trace->steps = static_cast<std::size_t>(steps);

  PoseDelta delta;
  delta.translation = s.com - mp.com;
  delta.rotation = matrix_to_rotvec(s.orientation);
  return delta;
}

DynamicDescriptor compute_descriptor(const ConceptualModel& model, const SimConfig& cfg, unsigned jobs) {
  validate(model);
  cfg.validate();
  DynamicDescriptor d;
  d.values.assign(kDescriptorSize, 0.0);
  d.model_hash = model_hash(model);

  constexpr std::size_t kTasks = kNumKeypoints * kNumDirections;
  std::vector<std::exception_ptr> errors(kTasks);
  auto run = [&](std::size_t task) {
    const std::size_t m = task / kNumDirections;
    const std::size_t j = task % kNumDirections;
    try {
      const PoseDelta delta = simulate_impulse(model, {m, j, 1.0}, cfg);
      for (int c = 0; c < 3; ++c) {
        d.values[DynamicDescriptor::index(m, j, c)] = delta.translation(c);
        d.values[DynamicDescriptor::index(m, j, 3 + c)] = delta.rotation(c);
      }
    } catch (const SimulationError& e) {
      errors[task] = std::make_exception_ptr(SimulationError(
          std::string(e.what()) + " at keypoint " + std::to_string(m) + ", direction " + direction_name(j),
          e.step()));
    } catch (...) {
      errors[task] = std::current_exception();
    }
  };

  parallel_for(kTasks, jobs, run);
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return d;
}

nlohmann::json model_to_json(const ConceptualModel& model) {
  nlohmann::json j;
  j["class_name"] = model.class_name;
  j["units"] = "mm";
  j["keypoints"] = nlohmann::json::array();
  for (const auto& p : model.keypoints) j["keypoints"].push_back({p.x() * 1000.0, p.y() * 1000.0, p.z() * 1000.0});
  if (!model.masses.empty()) j["masses"] = model.masses;
  if (model.symmetry_plane) j["symmetry_plane"] = std::string(1, *model.symmetry_plane);
  return j;
}

ConceptualModel model_from_json(const nlohmann::json& j) {
  ConceptualModel model;
  try {
    model.class_name = j.at("class_name").get<std::string>();
    for (const auto& p : j.at("keypoints")) {
      const auto v = p.get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError("keypoint must have 3 coordinates");
      model.keypoints.emplace_back(v[0] / 1000.0, v[1] / 1000.0, v[2] / 1000.0);
    }
    if (j.contains("masses")) model.masses = j.at("masses").get<std::vector<double>>();
    if (j.contains("symmetry_plane")) {
      const auto s = j.at("symmetry_plane").get<std::string>();
      if (s.size() != 1) throw ConfigError("symmetry_plane must be a single axis letter");
      model.symmetry_plane = s[0];
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed conceptual model: ") + e.what());
  }
  validate(model);
  return model;
}

ConceptualModel load_model(const std::filesystem::path& path) { return model_from_json(io::read_json(path)); }

void save_model(const ConceptualModel& model, const std::filesystem::path& path) {
  io::write_json(path, model_to_json(model));
}

std::string model_hash(const ConceptualModel& model) { return hex64(fnv1a64(model_to_json(model).dump())); }

nlohmann::json descriptor_to_json(const DynamicDescriptor& d, const SimConfig& cfg, const std::string& class_name) {
  std::vector<double> values(d.values);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i % 6 < 3) values[i] *= 1000.0;
  }
  return {{"format", "homotion-descriptor"},
          {"class_name", class_name},
          {"model_hash", d.model_hash},
          {"sim_config", to_json(cfg)},
          {"units", {{"translation", "mm"}, {"rotation", "rad"}}},
          {"layout", "keypoint(12) x direction(forward,backward,left,right,up) x [tx,ty,tz,rx,ry,rz]"},
          {"values", values}};
}

DynamicDescriptor descriptor_from_json(const nlohmann::json& j) {
  DynamicDescriptor d;
  try {
    d.model_hash = j.value("model_hash", "");
    d.values = j.at("values").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed descriptor: ") + e.what());
  }
  if (d.values.size() != kDescriptorSize) {
    throw DataError("descriptor has " + std::to_string(d.values.size()) + " values, expected 360");
  }
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    if (!std::isfinite(d.values[i])) throw DataError("descriptor value " + std::to_string(i) + " is not finite");
    if (i % 6 < 3) d.values[i] /= 1000.0;
  }
  return d;
}

DynamicDescriptor load_descriptor(const std::filesystem::path& path) {
  return descriptor_from_json(io::read_json(path));
}

}  // namespace homotion::rigidsim
