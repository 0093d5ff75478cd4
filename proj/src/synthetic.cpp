#include "nbslam/synthetic.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "nbslam/angles.hpp"

namespace nbslam::synth {

double PlaneTexture::intensity(double x, double y) const {
  double v = base;
  for (const Wave& w : waves) v += w.amplitude * std::sin(w.kx * x + w.ky * y + w.phase);
  return v;
}

PlaneTexture PlaneTexture::random(std::uint64_t seed, int count, double min_period, double max_period,
                                  double stddev) {
  if (count < 1 || !(min_period > 0.0) || !(max_period >= min_period)) {
    throw std::invalid_argument("PlaneTexture::random: invalid parameters");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PlaneTexture t;
  const double log_lo = std::log(min_period), log_hi = std::log(max_period);
  double power = 0.0;
  for (int i = 0; i < count; ++i) {
    const double period = std::exp(log_lo + (log_hi - log_lo) * unit(rng));
    const double dir = kTwoPi * unit(rng);
    const double k = kTwoPi / period;
    t.waves.push_back({k * std::cos(dir), k * std::sin(dir), kTwoPi * unit(rng), period});
    power += 0.5 * period * period;
  }
  const double scale = stddev / std::sqrt(power);
  for (Wave& w : t.waves) w.amplitude *= scale;
  return t;
}

Image render_view(const PlaneScene& scene, const CameraIntrinsics& k, const RigidTransform3& pose,
                  const vo::AffineBrightness& affine) {
  Image img(k.width, k.height);
  const double gain = std::exp(affine.a);
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Vec3 ray = pose.rotation * Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      double value = scene.texture.base;
      if (ray.z() > 0.0) {
        const double s = (scene.depth - pose.translation.z()) / ray.z();
        if (s > 0.0) {
          const Vec3 p = pose.translation + s * ray;
          value = scene.texture.intensity(p.x(), p.y());
        }
      }
      img.at(u, v) = static_cast<float>(gain * value + affine.b);
    }
  }
  return img;
}

vo::FrameData render_stereo(const PlaneScene& scene, const CameraIntrinsics& k, const RigidTransform3& pose,
                            double timestamp, const vo::AffineBrightness& left_affine,
                            const vo::AffineBrightness& right_affine) {
  vo::FrameData f;
  f.left = render_view(scene, k, pose, left_affine);
  const RigidTransform3 right = pose * RigidTransform3(Mat3::Identity(), Vec3(k.baseline, 0.0, 0.0));
  f.right = render_view(scene, k, right, right_affine);
  f.timestamp = timestamp;
  return f;
}

RigidTransform3 camera_pose_from_planar(const experience_map::PlanarPose& p) {
  RigidTransform3 t = RigidTransform3::rotation_y(p.theta);
  t.translation = Vec3(p.y, 0.0, p.x);
  return t;
}

experience_map::PlanarPose planar_from_camera_pose(const RigidTransform3& t) {
  return {t.translation.z(), t.translation.x(), std::atan2(t.rotation(0, 2), t.rotation(2, 2))};
}

Trajectory make_trajectory(const TrajectorySpec& spec) {
  if (!(spec.dt > 0.0) || !(spec.speed > 0.0) || !(spec.turn_rate > 0.0)) {
    throw std::invalid_argument("trajectory: dt, speed and turn_rate must be positive");
  }
  Trajectory out;
  experience_map::PlanarPose pose = out.start;
  double theta = 0.0;  // unwrapped
  double t = 0.0;
  int motion_steps = 0;
  int next_label = spec.revisit_cue ? 1 : 0;

  auto push = [&](double omega, double v, int view) {
    t += spec.dt;
    theta += omega * spec.dt;
    pose.x += v * spec.dt * std::cos(theta);
    pose.y += v * spec.dt * std::sin(theta);
    pose.theta = wrap_pi(theta);
    out.steps.push_back({t, omega, v, view});
    out.poses.push_back(pose);
  };

  if (spec.revisit_cue) push(0.0, 0.0, 0);
  for (const Segment& seg : spec.segments) {
    int n = 0;
    double omega = 0.0, v = 0.0;
    if (seg.length > 0.0) {
      n = static_cast<int>(std::ceil(seg.length / (spec.speed * spec.dt) - 1e-9));
      v = seg.length / (n * spec.dt);
    } else if (seg.angle != 0.0) {
      n = static_cast<int>(std::ceil(std::abs(seg.angle) / (spec.turn_rate * spec.dt) - 1e-9));
      omega = seg.angle / (n * spec.dt);
    }
    for (int i = 0; i < n; ++i) {
      ++motion_steps;
      const int view = (spec.view_every > 0 && motion_steps % spec.view_every == 0) ? next_label++ : -1;
      push(omega, v, view);
    }
  }
  if (spec.revisit_cue) push(0.0, 0.0, 0);
  return out;
}

TrajectorySpec square_spec(double side, double speed, double dt, bool revisit_cue) {
  TrajectorySpec s;
  for (int i = 0; i < 4; ++i) {
    s.segments.push_back({side, 0.0});
    s.segments.push_back({0.0, kPi / 2.0});
  }
  s.speed = speed;
  s.dt = dt;
  s.revisit_cue = revisit_cue;
  return s;
}

Image label_view(int label, int width, int height) {
  std::seed_seq seq{0x5eedu, static_cast<unsigned>(label), static_cast<unsigned>(label >> 16)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 255.0);
  Image img(width, height);
  for (float& v : img.data()) v = static_cast<float>(unit(rng));
  return img;
}

}  // namespace nbslam::synth
