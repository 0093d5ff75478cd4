#include "nbslam/geometry.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/SVD>

namespace nbslam {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

RigidTransform3 RigidTransform3::from_matrix(const Mat34& m) {
  return {m.leftCols<3>(), m.col(3)};
}

RigidTransform3 RigidTransform3::exp(const Vec6& twist) {
  const Vec3 v = twist.head<3>();
  const Vec3 w = twist.tail<3>();
  const double theta = w.norm();
  const Mat3 wx = skew(w);
  Mat3 r;
  Mat3 jac;
  if (theta < 1e-8) {
    r = Mat3::Identity() + wx + 0.5 * wx * wx;
    jac = Mat3::Identity() + 0.5 * wx + wx * wx / 6.0;
  } else {
    const double t2 = theta * theta;
    const double a = std::sin(theta) / theta;
    const double b = (1.0 - std::cos(theta)) / t2;
    const double c = (theta - std::sin(theta)) / (t2 * theta);
    r = Mat3::Identity() + a * wx + b * wx * wx;
    jac = Mat3::Identity() + b * wx + c * wx * wx;
  }
  return {r, jac * v};
}

RigidTransform3 RigidTransform3::rotation_y(double angle) {
  Mat3 r;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  r << c, 0.0, s,
       0.0, 1.0, 0.0,
       -s, 0.0, c;
  return {r, Vec3::Zero()};
}

RigidTransform3 RigidTransform3::inverse() const {
  const Mat3 rt = rotation.transpose();
  return {rt, -(rt * translation)};
}

RigidTransform3 RigidTransform3::operator*(const RigidTransform3& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

Mat34 RigidTransform3::matrix() const {
  Mat34 m;
  m.leftCols<3>() = rotation;
  m.col(3) = translation;
  return m;
}

bool RigidTransform3::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

void RigidTransform3::orthonormalize() {
  Eigen::JacobiSVD<Mat3> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  rotation = r;
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (!(baseline > 0.0)) throw std::invalid_argument("intrinsics: baseline must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("intrinsics: image size must be positive");
  if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
    throw std::invalid_argument("intrinsics: principal point outside the image");
  }
}

CameraIntrinsics CameraIntrinsics::at_level(int level) const {
  CameraIntrinsics k = *this;
  const double scale = std::ldexp(1.0, -level);
  k.fx = fx * scale;
  k.fy = fy * scale;
  k.cx = (cx + 0.5) * scale - 0.5;
  k.cy = (cy + 0.5) * scale - 0.5;
  k.width = width >> level;
  k.height = height >> level;
  return k;
}

double CameraIntrinsics::horizontal_fov() const {
  return 2.0 * std::atan2(0.5 * width, fx);
}

std::optional<Vec2> project(const CameraIntrinsics& k, const Vec3& p) {
  if (!(p.z() > 0.0)) return std::nullopt;
  return Vec2(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy);
}

Vec3 back_project(const CameraIntrinsics& k, const Vec2& px, double inv_depth) {
  if (!(inv_depth > 0.0)) throw std::invalid_argument("back_project: inverse depth must be positive");
  const double z = 1.0 / inv_depth;
  return {(px.x() - k.cx) / k.fx * z, (px.y() - k.cy) / k.fy * z, z};
}

RigidTransform3 relative_transform(const RigidTransform3& t_i, const RigidTransform3& t_j) {
  return t_j.inverse() * t_i;
}

PlanarVelocity velocity_from_relative(const RigidTransform3& t_ji, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("velocity_from_relative: dt must be positive");
  const Mat3& r = t_ji.rotation;
  const Vec3& t = t_ji.translation;
  PlanarVelocity vel;
  vel.rotational = std::atan2(r(2, 0), std::sqrt(r(2, 1) * r(2, 1) + r(2, 2) * r(2, 2))) / dt;
  vel.translational = std::sqrt(t(0) * t(0) + t(2) * t(2)) / dt;
  vel.dt = dt;
  return vel;
}

}  // namespace nbslam
