#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

namespace homotion {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// 6DoF change: translation plus rotation vector (axis * angle, radians).
struct PoseDelta {
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();
};

// Object pose: world = R(rotation) * local + translation.
struct Pose {
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();
};

Mat3 rotvec_to_matrix(const Vec3& r);
Vec3 matrix_to_rotvec(const Mat3& rot);
// Quaternion (w, x, y, z), any norm; folded onto the w >= 0 hemisphere.
Vec3 quaternion_to_rotvec(double w, double x, double y, double z);
// Angle of R_a * R_b^T.
double geodesic_angle(const Mat3& a, const Mat3& b);

// Pose change of `to` relative to `from`: translation difference
// and rotation vector of R_to * R_from^T.
PoseDelta pose_change(const Pose& from, const Pose& to);

struct RigidFit {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

// Least-squares rigid transform with dst ~= R * src + t (Kabsch).
RigidFit best_fit_rigid(std::span<const Vec3> src, std::span<const Vec3> dst);

Vec3 centroid(std::span<const Vec3> points);

}  // namespace homotion
