#pragma once

#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace nbslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

/// Rigid body transform in SE(3). Poses are camera-to-world.
/// Camera frame: x right, y down, z forward.
struct RigidTransform3 {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  RigidTransform3() = default;
  RigidTransform3(const Mat3& r, const Vec3& t) : rotation(r), translation(t) {}

  static RigidTransform3 identity() { return {}; }
  static RigidTransform3 from_matrix(const Mat34& m);

  /// Exponential map of a twist (translation part first, then rotation).
  static RigidTransform3 exp(const Vec6& twist);
  /// Rotation of `angle` radians about the camera y axis.
  static RigidTransform3 rotation_y(double angle);

  RigidTransform3 inverse() const;
  RigidTransform3 operator*(const RigidTransform3& other) const;
  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }

  Mat34 matrix() const;

  /// Orthonormality and determinant within `tol`.
  bool is_valid(double tol = 1e-9) const;
  /// Projects the rotation onto SO(3) (closest rotation in Frobenius norm).
  void orthonormalize();
};

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double baseline = 0.0;  // meters
  int width = 0;
  int height = 0;

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;
  /// Intrinsics for pyramid level `level` built by 2x2 averaging.
  CameraIntrinsics at_level(int level) const;
  /// Horizontal field of view in radians.
  double horizontal_fov() const;
};

struct PlanarVelocity {
  double rotational = 0.0;     // rad/s, positive turns the forward axis towards camera +x
  double translational = 0.0;  // m/s
  double dt = 0.0;             // s
};

/// Pinhole projection. Empty when the point is not in front of the camera.
std::optional<Vec2> project(const CameraIntrinsics& k, const Vec3& p);

/// Inverse of project for a pixel with inverse depth `inv_depth` (1/m).
/// Throws std::invalid_argument when inv_depth <= 0.
Vec3 back_project(const CameraIntrinsics& k, const Vec2& px, double inv_depth);

/// T_ji = T_j^-1 * T_i, mapping points of frame i into frame j.
RigidTransform3 relative_transform(const RigidTransform3& t_i, const RigidTransform3& t_j);

/// Planar rotational / translational velocity from the relative transform of two keyframes.
/// Throws std::invalid_argument when dt <= 0.
PlanarVelocity velocity_from_relative(const RigidTransform3& t_ji, double dt);

Mat3 skew(const Vec3& v);

}  // namespace nbslam
