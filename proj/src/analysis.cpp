#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "kv.hpp"
#include "nbslam/image.hpp"
#include "nbslam/pipeline.hpp"
#include "nbslam/synthetic.hpp"

namespace nbslam::pipeline {

namespace fs = std::filesystem;

RateUnit parse_rate_unit(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("rate unit: expected hd:<phase> or grid:<px>,<py>");
  const std::string kind = text.substr(0, colon);
  const std::string args = text.substr(colon + 1);
  RateUnit u;
  if (kind == "hd") {
    u.kind = RateUnit::Kind::HeadDirection;
    u.preferred[0] = kv::parse_number<double>(kv::trim(args));
  } else if (kind == "grid") {
    const auto comma = args.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("rate unit: grid needs two phases");
    u.kind = RateUnit::Kind::Grid;
    u.preferred[0] = kv::parse_number<double>(kv::trim(args.substr(0, comma)));
    u.preferred[1] = kv::parse_number<double>(kv::trim(args.substr(comma + 1)));
  } else {
    throw std::invalid_argument("rate unit: unknown kind '" + kind + "'");
  }
  return u;
}

RateMap firing_rate_map(const std::vector<PhaseLogEntry>& log, const RateUnit& unit, double tuning_sigma,
                        double bin_size, int min_occupancy) {
  if (!(tuning_sigma > 0.0) || !(bin_size > 0.0)) {
    throw std::invalid_argument("firing_rate_map: tuning_sigma and bin_size must be positive");
  }
  RateMap m;
  m.bin_size = bin_size;
  if (log.empty()) return m;
  double min_x = log[0].x, max_x = log[0].x, min_y = log[0].y, max_y = log[0].y;
  for (const PhaseLogEntry& e : log) {
    min_x = std::min(min_x, e.x);
    max_x = std::max(max_x, e.x);
    min_y = std::min(min_y, e.y);
    max_y = std::max(max_y, e.y);
  }
  m.origin_x = std::floor(min_x / bin_size) * bin_size;
  m.origin_y = std::floor(min_y / bin_size) * bin_size;
  m.nx = static_cast<int>(std::floor((max_x - m.origin_x) / bin_size)) + 1;
  m.ny = static_cast<int>(std::floor((max_y - m.origin_y) / bin_size)) + 1;
  const size_t cells = static_cast<size_t>(m.nx) * m.ny;
  std::vector<double> sum(cells, 0.0);
  m.occupancy.assign(cells, 0);

  const double inv = 1.0 / (2.0 * tuning_sigma * tuning_sigma);
  auto tuning = [inv](double phase, double preferred) {
    const double d = circular_distance(phase, preferred);
    return std::exp(-d * d * inv);
  };
  for (const PhaseLogEntry& e : log) {
    const int ix = std::clamp(static_cast<int>(std::floor((e.x - m.origin_x) / bin_size)), 0, m.nx - 1);
    const int iy = std::clamp(static_cast<int>(std::floor((e.y - m.origin_y) / bin_size)), 0, m.ny - 1);
    double activity = 0.0;
    if (unit.kind == RateUnit::Kind::HeadDirection) {
      activity = tuning(e.hd_phase, unit.preferred[0]);
    } else {
      activity = tuning(e.grid_phase[0], unit.preferred[0]) * tuning(e.grid_phase[1], unit.preferred[1]);
    }
    const size_t idx = static_cast<size_t>(iy) * m.nx + ix;
    sum[idx] += activity;
    ++m.occupancy[idx];
  }
  m.rate.assign(cells, std::numeric_limits<double>::quiet_NaN());
  for (size_t i = 0; i < cells; ++i) {
    if (m.occupancy[i] >= std::max(min_occupancy, 1)) m.rate[i] = sum[i] / m.occupancy[i];
  }
  return m;
}

void write_rate_pgm(const fs::path& path, const RateMap& map) {
  if (map.nx == 0 || map.ny == 0) throw std::invalid_argument("write_rate_pgm: empty rate map");
  double peak = 0.0;
  for (double r : map.rate) {
    if (!std::isnan(r)) peak = std::max(peak, r);
  }
  Image img(map.nx, map.ny);
  for (int iy = 0; iy < map.ny; ++iy) {
    for (int ix = 0; ix < map.nx; ++ix) {
      const double r = map.at(ix, iy);
      img.at(ix, map.ny - 1 - iy) = (std::isnan(r) || peak <= 0.0) ? 0.0f : static_cast<float>(255.0 * r / peak);
    }
  }
  write_pgm(path, img);
}

void write_rate_csv(std::ostream& out, const RateMap& map) {
  const auto prec = out.precision(17);
  out << "ix,iy,x,y,occupancy,rate\n";
  for (int iy = 0; iy < map.ny; ++iy) {
    for (int ix = 0; ix < map.nx; ++ix) {
      const double r = map.at(ix, iy);
      out << ix << ',' << iy << ',' << map.origin_x + (ix + 0.5) * map.bin_size << ','
          << map.origin_y + (iy + 0.5) * map.bin_size << ',' << map.occupancy[static_cast<size_t>(iy) * map.nx + ix]
          << ',';
      if (std::isnan(r)) {
        out << "nan";
      } else {
        out << r;
      }
      out << '\n';
    }
  }
  out.precision(prec);
}

// ---------------------------------------------------------------------------

TrajectoryStats compute_stats(const std::vector<double>& errors) {
  TrajectoryStats s;
  s.n = static_cast<int>(errors.size());
  if (errors.empty()) return s;
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  s.min = sorted.front();
  s.max = sorted.back();
  s.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double sum = 0.0, sq = 0.0;
  for (double e : sorted) {
    sum += e;
    sq += e * e;
  }
  s.mean = sum / n;
  s.rmse = std::sqrt(sq / n);
  return s;
}

Evaluation evaluate(const std::vector<experience_map::Experience>& experiences,
                    const std::vector<RigidTransform3>& ground_truth, const std::vector<double>& timestamps) {
  if (ground_truth.empty()) throw std::invalid_argument("evaluate: empty ground truth");
  if (experiences.empty()) throw std::invalid_argument("evaluate: empty map");
  if (timestamps.size() != ground_truth.size()) {
    throw std::invalid_argument("evaluate: ground truth and timestamps differ in length");
  }
  const size_t n = experiences.size();
  Eigen::Matrix2Xd est(2, n), truth(2, n);
  double truth_theta0 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double t = experiences[i].timestamp;
    const auto it = std::lower_bound(timestamps.begin(), timestamps.end(), t);
    size_t j = static_cast<size_t>(it - timestamps.begin());
    if (j == timestamps.size() || (j > 0 && t - timestamps[j - 1] <= timestamps[j] - t)) {
      j = j == 0 ? 0 : j - 1;
    }
    const experience_map::PlanarPose g = synth::planar_from_camera_pose(ground_truth[j]);
    est.col(i) << experiences[i].x, experiences[i].y;
    truth.col(i) << g.x, g.y;
    if (i == 0) truth_theta0 = g.theta;
  }

  Evaluation out;
  const Eigen::Rotation2Dd rot(truth_theta0 - experiences[0].theta);
  std::vector<double> errors(n);
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d p = rot * (est.col(i) - est.col(0)) + truth.col(0);
    errors[i] = (p - truth.col(i)).norm();
  }
  out.anchored = compute_stats(errors);

  if (n >= 2) {
    const Eigen::Matrix3d fit = Eigen::umeyama(est, truth, false);
    for (size_t i = 0; i < n; ++i) {
      const Eigen::Vector2d p = fit.topLeftCorner<2, 2>() * est.col(i) + fit.topRightCorner<2, 1>();
      errors[i] = (p - truth.col(i)).norm();
    }
    out.fitted = compute_stats(errors);
  } else {
    out.fitted = out.anchored;
  }
  return out;
}

void write_stats_json(std::ostream& out, const Evaluation& eval) {
  auto stats = [](const TrajectoryStats& s) {
    nlohmann::ordered_json j;
    j["n"] = s.n;
    j["mean_m"] = s.mean;
    j["median_m"] = s.median;
    j["rmse_m"] = s.rmse;
    j["min_m"] = s.min;
    j["max_m"] = s.max;
    return j;
  };
  nlohmann::ordered_json j;
  j["anchored"] = stats(eval.anchored);
  j["fitted_rigid_secondary"] = stats(eval.fitted);
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

WorldSpec parse_world_spec(std::istream& in) {
  WorldSpec s;
  std::string type = "trajectory";
  CameraIntrinsics& k = s.intrinsics;
  const std::map<std::string, kv::Setter> setters = {
      {"type", kv::bind(type)},
      {"fx", kv::bind(k.fx)},
      {"fy", kv::bind(k.fy)},
      {"cx", kv::bind(k.cx)},
      {"cy", kv::bind(k.cy)},
      {"baseline", kv::bind(k.baseline)},
      {"width", kv::bind(k.width)},
      {"height", kv::bind(k.height)},
      {"frames", kv::bind(s.frames)},
      {"forward_step", kv::bind(s.forward_step)},
      {"yaw_step", kv::bind(s.yaw_step)},
      {"plane_depth", kv::bind(s.plane_depth)},
      {"brightness_offset", kv::bind(s.brightness_offset)},
      {"brightness_gain", kv::bind(s.brightness_gain)},
      {"frame_dt", kv::bind(s.frame_dt)},
      {"shape", kv::bind(s.shape)},
      {"side", kv::bind(s.side)},
      {"speed", kv::bind(s.speed)},
      {"turn_rate", kv::bind(s.turn_rate)},
      {"dt", kv::bind(s.dt)},
      {"revisit_cue", kv::bind(s.revisit_cue)},
      {"view_every", kv::bind(s.view_every)},
  };
  kv::parse(in, setters, "world spec");
  if (type == "photometric") {
    s.kind = WorldSpec::Kind::Photometric;
  } else if (type == "trajectory") {
    s.kind = WorldSpec::Kind::Trajectory;
  } else {
    throw std::runtime_error("world spec: unknown type '" + type + "'");
  }
  return s;
}

std::vector<TraceRecord> trajectory_trace(const WorldSpec& spec, std::vector<experience_map::PlanarPose>* poses) {
  synth::TrajectorySpec ts;
  if (spec.shape == "square") {
    ts = synth::square_spec(spec.side, spec.speed, spec.dt, spec.revisit_cue);
  } else if (spec.shape == "straight") {
    ts.segments = {{spec.side, 0.0}};
  } else if (spec.shape == "out_and_back") {
    ts.segments = {{spec.side, 0.0}, {0.0, kPi}, {spec.side, 0.0}};
  } else {
    throw std::invalid_argument("world spec: unknown shape '" + spec.shape + "'");
  }
  ts.speed = spec.speed;
  ts.dt = spec.dt;
  ts.turn_rate = spec.turn_rate;
  ts.revisit_cue = spec.revisit_cue;
  ts.view_every = spec.view_every;
  const synth::Trajectory traj = synth::make_trajectory(ts);
  std::vector<TraceRecord> out;
  out.reserve(traj.steps.size());
  for (const synth::TraceStep& s : traj.steps) out.push_back({s.timestamp, s.rotational, s.translational, s.view});
  if (poses) *poses = traj.poses;
  return out;
}

void synthesize_world(const WorldSpec& spec, std::uint64_t seed, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  auto open = [&out_dir](const char* name) {
    std::ofstream f(out_dir / name);
    if (!f) throw std::runtime_error("cannot write " + (out_dir / name).string());
    f.precision(17);
    return f;
  };
  std::vector<RigidTransform3> poses;
  std::vector<double> times;

  if (spec.kind == WorldSpec::Kind::Trajectory) {
    std::vector<experience_map::PlanarPose> planar;
    const std::vector<TraceRecord> trace = trajectory_trace(spec, &planar);
    {
      auto f = open("trace.csv");
      write_velocity_trace(f, trace);
    }
    for (size_t i = 0; i < trace.size(); ++i) {
      times.push_back(trace[i].timestamp);
      poses.push_back(synth::camera_pose_from_planar(planar[i]));
    }
  } else {
    const CameraIntrinsics& k = spec.intrinsics;
    k.validate();
    if (spec.frames < 1) throw std::invalid_argument("world spec: frames must be positive");
    const synth::PlaneScene scene{synth::PlaneTexture::random(seed), spec.plane_depth};
    fs::create_directories(out_dir / "image_0");
    fs::create_directories(out_dir / "image_1");
    experience_map::PlanarPose p;
    for (int i = 0; i < spec.frames; ++i) {
      if (i > 0) {
        p.theta += spec.yaw_step;
        p.x += spec.forward_step * std::cos(p.theta);
        p.y += spec.forward_step * std::sin(p.theta);
      }
      const RigidTransform3 pose = synth::camera_pose_from_planar(p);
      const vo::AffineBrightness affine{spec.brightness_gain * i, i > 0 ? spec.brightness_offset : 0.0};
      const double t = spec.frame_dt * i;
      const vo::FrameData f = synth::render_stereo(scene, k, pose, t, affine, affine);
      char name[16];
      std::snprintf(name, sizeof(name), "%06d.pgm", i);
      write_pgm(out_dir / "image_0" / name, f.left);
      write_pgm(out_dir / "image_1" / name, f.right);
      poses.push_back(pose);
      times.push_back(t);
    }
    auto f = open("calib.txt");
    auto row = [&f, &k](const char* key, double tx) {
      f << key << ": " << k.fx << " 0 " << k.cx << ' ' << tx << " 0 " << k.fy << ' ' << k.cy << " 0 0 0 1 0\n";
    };
    row("P0", 0.0);
    row("P1", -k.fx * k.baseline);
  }
  {
    auto f = open("times.txt");
    for (double t : times) f << t << '\n';
  }
  auto f = open("poses.txt");
  write_ground_truth(f, poses);
}

}  // namespace nbslam::pipeline
