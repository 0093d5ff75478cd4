#pragma once

#include <array>
#include <optional>
#include <vector>

#include "nbslam/geometry.hpp"
#include "nbslam/image.hpp"

namespace nbslam::vo {

/// Brightness transfer I' = e^a * I + b is undone by the residual model (I - b) * e^-a.
struct AffineBrightness {
  double a = 0.0;
  double b = 0.0;
};

struct FrameData {
  Image left;
  Image right;
  double timestamp = 0.0;
  AffineBrightness left_affine;
  AffineBrightness right_affine;
};

/// Residual pattern: centre, the four axis neighbours at distance two and three diagonals.
inline constexpr std::array<std::array<int, 2>, 8> kPattern = {
    {{0, -2}, {-1, -1}, {1, -1}, {-2, 0}, {0, 0}, {2, 0}, {-1, 1}, {0, 2}}};
inline constexpr int kPatternSize = static_cast<int>(kPattern.size());

struct VoConfig {
  int pyramid_levels = 4;
  double huber_gamma = 9.0;
  double gradient_c = 25.0;
  double lambda = 1.0;  // static stereo coupling
  double g_const = 7.0;
  int window_size = 7;
  int block_rows = 24;  // selection grid, blocks scale with the image
  int block_cols = 32;
  int border = 4;
  int stereo_search_range = 128;     // pixels
  double stereo_max_sad = 12.0;      // mean absolute difference per pattern pixel
  double stereo_min_contrast = 4.0;  // intensity range inside the pattern
  double stereo_disparity_sigma = 0.5;
  double flow_threshold = 64.0;  // mean squared flow, px^2
  double brightness_threshold = 0.2;
  int max_iterations = 50;
  double convergence_eps = 1e-6;
  int joint_iterations = 6;
  double epipolar_search_px = 8.0;
  double epipolar_pixel_sigma = 0.5;
  double epipolar_max_error = 20.0;  // rms per pattern pixel

  void validate() const;
};

struct ActivePoint {
  int host_keyframe = 0;  // keyframe id
  Vec2 pixel = Vec2::Zero();
  double inverse_depth = 1.0;
  double inverse_depth_variance = 1.0;
  bool mature = false;  // active in the joint optimisation once observed from a later keyframe
};

struct PyramidFrame {
  FrameData frame;
  std::vector<Image> left_pyramid;

  static PyramidFrame build(FrameData frame, int levels);
};

struct Keyframe {
  int id = 0;
  PyramidFrame data;
  RigidTransform3 pose;  // camera to world
  AffineBrightness left_affine;
  AffineBrightness right_affine;
  std::vector<ActivePoint> points;

  double timestamp() const { return data.frame.timestamp; }
};

struct KeyframeWindow {
  CameraIntrinsics intrinsics;
  VoConfig config;
  std::vector<Keyframe> keyframes;  // oldest first
  int next_keyframe_id = 0;

  const Keyframe* find(int id) const;
  Keyframe* find(int id);
  size_t point_count() const;
};

// ---------------------------------------------------------------------------
// Point selection and static stereo

/// c^2 / (c^2 + |grad I|^2) with a central-difference gradient.
double gradient_weight(const Image& image, int x, int y, double c);

/// One pixel per block: the block's largest gradient if it exceeds the block median plus g_const.
/// The grid has block_rows x block_cols blocks; ties go to the first pixel in raster order.
std::vector<Vec2> select_candidate_points(const Image& image, int block_rows, int block_cols, double g_const,
                                          int border = 4);

struct StereoParams {
  double max_sad = 12.0;
  double min_contrast = 4.0;
  double ambiguity_ratio = 1.5;  // competing minimum must exceed ratio * best + 1
  double min_epipolar_gradient = 1.0;  // rms horizontal gradient over the matched pattern
};

/// Sub-pixel disparity of a left pixel against a rectified right image, searched over
/// integer shifts 0..search_range. Empty for rejected or non-positive disparities.
std::optional<double> static_stereo_disparity(const Image& left, const Image& right, const Vec2& pixel,
                                              int search_range, const StereoParams& params = {});

/// disparity / (fx * baseline).
std::optional<double> static_stereo_depth(const Image& left, const Image& right, const Vec2& pixel,
                                          const CameraIntrinsics& k, int search_range,
                                          const StereoParams& params = {});

// ---------------------------------------------------------------------------
// Photometric residuals

double huber_norm(double r, double gamma);
/// IRLS weight of the Huber norm.
double huber_weight(double r, double gamma);

struct PatternResidual {
  double residual = 0.0;  // I_j[p'] - b_j - e^(a_j - a_i) (I_i[p] - b_i)
  double weight = 0.0;    // gradient weight of the host pixel
  double energy = 0.0;    // weight * huber(residual)
  bool valid = false;
  Vec2 projected = Vec2::Zero();
  // Derivatives of `residual`. Pose twists perturb world-to-camera transforms on the left.
  Vec6 d_target_pose = Vec6::Zero();
  Vec6 d_host_pose = Vec6::Zero();
  double d_inverse_depth = 0.0;
  double d_host_a = 0.0;
  double d_host_b = 0.0;
  double d_target_a = 0.0;
  double d_target_b = 0.0;
};

struct PointResidual {
  std::array<PatternResidual, kPatternSize> terms;
  int valid_count = 0;
  double energy = 0.0;
};

/// Evaluates the pattern of `pixel` (level coordinates) in `host` against `target`.
/// t_ji maps host camera coordinates into target camera coordinates.
PointResidual photometric_residual(const Image& host, const Image& target, const Vec2& pixel, double inverse_depth,
                                   const RigidTransform3& t_ji, const CameraIntrinsics& k,
                                   const AffineBrightness& host_affine, const AffineBrightness& target_affine,
                                   double gamma, double gradient_c, bool with_jacobian = false);

// ---------------------------------------------------------------------------
// Tracking, frame management, optimisation

struct TrackResult {
  RigidTransform3 pose;  // camera to world
  AffineBrightness affine;
  bool converged = false;
  bool lost = false;
  double energy = 0.0;
  int residual_count = 0;
};

/// Coarse-to-fine Gauss-Newton over pose and affine brightness of `frame` with depths fixed.
TrackResult track_frame(const KeyframeWindow& window, const PyramidFrame& frame, const RigidTransform3& initial_pose,
                        const AffineBrightness& initial_affine = {});

/// Mean squared flow of the latest keyframe's points above the threshold (strict), or a
/// brightness change |a| above its threshold.
bool needs_keyframe(const KeyframeWindow& window, const RigidTransform3& pose, const AffineBrightness& affine,
                    double flow_threshold, double brightness_threshold);

/// Mean squared pixel displacement of the latest keyframe's points under `pose`.
double mean_squared_flow(const KeyframeWindow& window, const RigidTransform3& pose);

/// Epipolar refinement of the immature points of the latest keyframe. Returns the number of updates.
int refine_nonkeyframe(KeyframeWindow& window, const PyramidFrame& frame, const RigidTransform3& pose,
                       const AffineBrightness& affine);

/// Scalar precision-weighted fusion of two inverse depth estimates.
struct DepthEstimate {
  double inverse_depth = 0.0;
  double variance = 0.0;
};
DepthEstimate fuse_inverse_depth(DepthEstimate a, DepthEstimate b);

struct JointResult {
  double initial_energy = 0.0;
  double final_energy = 0.0;
  int accepted_iterations = 0;
  double max_update = 0.0;  // largest absolute step component that was applied
};

/// Total window energy: temporal terms of mature points plus lambda times their static terms.
double window_energy(const KeyframeWindow& window);

/// Gauss-Newton over keyframe poses, affine parameters and inverse depths. The first keyframe's
/// pose and left affine parameters fix the gauge.
JointResult joint_optimize(KeyframeWindow& window, int iterations);

/// Drops one keyframe when the window exceeds its size, then prunes points no longer observed.
/// Returns the id of the dropped keyframe, if any.
std::optional<int> marginalize(KeyframeWindow& window);

/// Velocity between the two latest keyframes.
PlanarVelocity emit_velocity(const KeyframeWindow& window);

/// Selects points on a frame and initialises them from static stereo.
std::vector<ActivePoint> initialize_points(const PyramidFrame& frame, int host_id, const CameraIntrinsics& k,
                                           const VoConfig& cfg);

// ---------------------------------------------------------------------------

struct FrameResult {
  int frame_index = 0;
  double timestamp = 0.0;
  RigidTransform3 pose;
  AffineBrightness affine;
  bool is_keyframe = false;
  bool tracking_lost = false;
  std::optional<PlanarVelocity> velocity;  // set on keyframes after the first
};

/// Stereo odometry front end driving the window.
class StereoOdometry {
 public:
  StereoOdometry(const CameraIntrinsics& k, const VoConfig& cfg);

  FrameResult process(FrameData frame);

  const KeyframeWindow& window() const { return window_; }

 private:
  void add_keyframe(PyramidFrame frame, const RigidTransform3& pose, const AffineBrightness& affine);

  KeyframeWindow window_;
  int frame_index_ = 0;
  std::optional<RigidTransform3> last_pose_;
  std::optional<RigidTransform3> prev_pose_;
  AffineBrightness last_affine_;
};

}  // namespace nbslam::vo
