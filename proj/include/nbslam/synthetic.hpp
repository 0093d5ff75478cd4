#pragma once

#include <cstdint>
#include <vector>

#include "nbslam/dso_vo.hpp"
#include "nbslam/experience_map.hpp"
#include "nbslam/geometry.hpp"
#include "nbslam/image.hpp"

namespace nbslam::synth {

struct Wave {
  double kx = 0.0;  // rad per meter
  double ky = 0.0;
  double phase = 0.0;
  double amplitude = 0.0;
};

/// Smooth band-limited texture: base + sum of plane waves with random directions and phases.
struct PlaneTexture {
  double base = 128.0;
  std::vector<Wave> waves;

  double intensity(double x, double y) const;

  /// Periods log-uniform in [min_period, max_period] meters, amplitudes proportional to the period
  /// and scaled to the standard deviation `stddev`.
  static PlaneTexture random(std::uint64_t seed, int count = 48, double min_period = 0.06, double max_period = 1.5,
                             double stddev = 40.0);
};

/// Fronto-parallel textured plane z = depth in world coordinates.
struct PlaneScene {
  PlaneTexture texture;
  double depth = 3.0;
};

/// Renders the plane as seen by a camera with camera-to-world `pose`, then applies e^a * I + b.
Image render_view(const PlaneScene& scene, const CameraIntrinsics& k, const RigidTransform3& pose,
                  const vo::AffineBrightness& affine = {});

/// Left camera at `pose`, right camera displaced by +baseline along the left camera's x axis.
vo::FrameData render_stereo(const PlaneScene& scene, const CameraIntrinsics& k, const RigidTransform3& pose,
                            double timestamp, const vo::AffineBrightness& left_affine = {},
                            const vo::AffineBrightness& right_affine = {});

/// Ground-plane pose (x, y, theta) to a camera pose: map x is camera z, map y is camera x.
RigidTransform3 camera_pose_from_planar(const experience_map::PlanarPose& p);
experience_map::PlanarPose planar_from_camera_pose(const RigidTransform3& t);

struct TraceStep {
  double timestamp = 0.0;
  double rotational = 0.0;
  double translational = 0.0;
  int view = -1;  // view label, -1 when no image is seen
};

struct Trajectory {
  std::vector<TraceStep> steps;
  std::vector<experience_map::PlanarPose> poses;  // pose after each step, poses[0] follows steps[0]
  experience_map::PlanarPose start;
};

/// Motion primitive: straight segment (length > 0) or turn in place (angle != 0).
struct Segment {
  double length = 0.0;
  double angle = 0.0;
};

struct TrajectorySpec {
  std::vector<Segment> segments;
  double speed = 1.0;      // m/s
  double turn_rate = 0.5;  // rad/s
  double dt = 0.1;
  int view_every = 0;        // distinct view label every n motion steps, 0 for none
  bool revisit_cue = false;  // a still step at the start and one at the end share view label 0
};

/// Integrates heading first, then position along the new heading, matching path integration.
Trajectory make_trajectory(const TrajectorySpec& spec);

/// Four sides of `side` meters with left turns of pi/2 in between and after the last side.
TrajectorySpec square_spec(double side, double speed, double dt, bool revisit_cue);

/// Deterministic pseudo-random image standing for a view label.
Image label_view(int label, int width = 96, int height = 32);

}  // namespace nbslam::synth
