#include "homotion/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <cmath>

#include "homotion/errors.hpp"

namespace homotion {

Mat3 rotvec_to_matrix(const Vec3& r) {
  const double theta = r.norm();
  if (theta < 1e-12) {
    Mat3 k;
    k << 0, -r.z(), r.y(), r.z(), 0, -r.x(), -r.y(), r.x(), 0;
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  return Eigen::AngleAxisd(theta, r / theta).toRotationMatrix();
}

Vec3 matrix_to_rotvec(const Mat3& rot) {
  Eigen::Quaterniond q(rot);
  q.normalize();
  return quaternion_to_rotvec(q.w(), q.x(), q.y(), q.z());
}

Vec3 quaternion_to_rotvec(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (!(n > 0.0)) throw DataError("zero-norm quaternion");
  if (w < 0.0) {
    w = -w;
    x = -x;
    y = -y;
    z = -z;
  }
  w /= n;
  const Vec3 v(x / n, y / n, z / n);
  const double s = v.norm();
  if (s < 1e-300) return Vec3::Zero();
  const double angle = 2.0 * std::atan2(s, w);
  return v * (angle / s);
}

double geodesic_angle(const Mat3& a, const Mat3& b) { return matrix_to_rotvec(a * b.transpose()).norm(); }

PoseDelta pose_change(const Pose& from, const Pose& to) {
  PoseDelta d;
  d.translation = to.translation - from.translation;
  d.rotation = matrix_to_rotvec(rotvec_to_matrix(to.rotation) * rotvec_to_matrix(from.rotation).transpose());
  return d;
}

Vec3 centroid(std::span<const Vec3> points) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
}

RigidFit best_fit_rigid(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size() || src.empty()) {
    throw ContractError("best_fit_rigid needs two equally sized, non-empty point sets");
  }
  const Vec3 cs = centroid(src);
  const Vec3 cd = centroid(dst);
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1.0;
  RigidFit fit;
  fit.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  fit.translation = cd - fit.rotation * cs;
  return fit;
}

}  // namespace homotion
