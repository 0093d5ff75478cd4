#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nbslam/attractor.hpp"
#include "nbslam/dso_vo.hpp"
#include "nbslam/experience_map.hpp"
#include "nbslam/geometry.hpp"
#include "nbslam/local_view.hpp"

namespace nbslam::pipeline {

struct MapConfig {
  double robust_delta = 1.0;
  double angle_scale = 1.0;
  int max_iterations = 100;
};

struct RunConfig {
  std::filesystem::path dataset;
  std::optional<CameraIntrinsics> intrinsics;  // taken from the dataset's calib.txt when unset
  attractor::AttractorConfig attractor;
  local_view::LocalViewConfig local_view;
  vo::VoConfig vo;
  MapConfig map;
  double experience_threshold = 0.8;  // torus-phase distance, rad
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  int queue_capacity = 4;

  void validate() const;
};

/// Flat `key = value` text; `#` starts a comment. Unknown keys and malformed values throw
/// std::runtime_error naming the line.
RunConfig parse_config(std::istream& in, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// Writes every key understood by parse_config.
void write_config(std::ostream& out, const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Datasets

struct StereoSequence {
  std::filesystem::path root;
  std::vector<double> timestamps;
  std::vector<std::filesystem::path> left;
  std::vector<std::filesystem::path> right;
  std::optional<CameraIntrinsics> calibration;
  int width = 0;
  int height = 0;

  size_t size() const { return timestamps.size(); }
  vo::FrameData load(size_t index) const;
};

/// `image_0/`, `image_1/` with 6-digit frame names (.png or .pgm) and `times.txt`; `calib.txt`
/// with KITTI P0/P1 rows is optional. Throws std::runtime_error naming the offending index.
StereoSequence load_stereo_sequence(const std::filesystem::path& path);

/// Twelve reals per line: a row-major 3x4 camera-to-world matrix.
std::vector<RigidTransform3> read_ground_truth(std::istream& in);
std::vector<RigidTransform3> load_ground_truth(const std::filesystem::path& path);
void write_ground_truth(std::ostream& out, const std::vector<RigidTransform3>& poses);

/// One timestamp per line.
std::vector<double> load_timestamps(const std::filesystem::path& path);

/// KITTI calib.txt: `P0:` and `P1:` projection rows; baseline = -P1[3] / P1[0].
CameraIntrinsics read_calibration(std::istream& in, int width, int height);

struct TraceRecord {
  double timestamp = 0.0;
  double rotational = 0.0;
  double translational = 0.0;
  int view = -1;  // view label, -1 for no view
};

/// CSV with header `timestamp,rotational,translational,view`.
std::vector<TraceRecord> read_velocity_trace(std::istream& in);
std::vector<TraceRecord> load_velocity_trace(const std::filesystem::path& path);
void write_velocity_trace(std::ostream& out, const std::vector<TraceRecord>& trace);

// ---------------------------------------------------------------------------
// Evaluation

struct TrajectoryStats {
  double mean = 0.0;
  double median = 0.0;
  double rmse = 0.0;
  double min = 0.0;
  double max = 0.0;
  int n = 0;
};

TrajectoryStats compute_stats(const std::vector<double>& errors);

struct Evaluation {
  TrajectoryStats anchored;  // first pose and heading aligned
  TrajectoryStats fitted;    // least-squares rigid fit
};

/// Each experience is paired with the ground-truth pose nearest in time. Throws on empty input.
Evaluation evaluate(const std::vector<experience_map::Experience>& experiences,
                    const std::vector<RigidTransform3>& ground_truth, const std::vector<double>& timestamps);

void write_stats_json(std::ostream& out, const Evaluation& eval);

// ---------------------------------------------------------------------------
// Run

struct FrameLogEntry {
  int frame_index = 0;
  double timestamp = 0.0;
  bool keyframe = false;
  bool tracking_lost = false;
  RigidTransform3 pose;
  vo::AffineBrightness affine;
  std::optional<PlanarVelocity> velocity;  // keyframes after the first
};

/// Network and odometry state after one decision cycle (a keyframe or a trace step).
struct PhaseLogEntry {
  int cycle = 0;
  double timestamp = 0.0;
  double x = 0.0;  // dead-reckoned pose in the map frame
  double y = 0.0;
  double theta = 0.0;
  double hd_phase = 0.0;
  std::array<double, 2> grid_phase{0.0, 0.0};
  double hd_integrator_weight = 0.0;
  double hd_calibration_weight = 0.0;
  double grid_integrator_weight = 0.0;
  double grid_calibration_weight = 0.0;
  int template_id = -1;  // matched or learned template, -1 without a view
  bool cue = false;
  bool loop_closed = false;
  int experience_id = -1;
};

struct RunSummary {
  int frames = 0;
  int keyframes = 0;
  int lost_frames = 0;
  int cycles = 0;
  int templates = 0;
  int experiences = 0;
  int links = 0;
  int loop_closures = 0;
  double path_length = 0.0;
};

struct RunOutput {
  experience_map::MapGraph map;
  local_view::TemplateStore templates;
  std::vector<FrameLogEntry> frames;
  std::vector<PhaseLogEntry> phases;
  RunSummary summary;
  std::optional<Evaluation> evaluation;  // when the dataset holds poses.txt and times.txt
};

/// Attractor, local view and experience map driven by one velocity per decision cycle.
class MapBuilder {
 public:
  MapBuilder(const RunConfig& cfg, double horizontal_fov);

  /// `view` is the image seen in this cycle, if any.
  const PhaseLogEntry& cycle(const PlanarVelocity& vel, double timestamp, const Image* view);

  /// Final optimisation pass.
  void finish();

  const experience_map::MapGraph& map() const { return map_; }
  const local_view::TemplateStore& templates() const { return store_; }
  const std::vector<PhaseLogEntry>& log() const { return log_; }
  const attractor::NetworkState& state() const { return state_; }
  int loop_closures() const { return loop_closures_; }
  double path_length() const { return path_length_; }

 private:
  RunConfig cfg_;
  double fov_;
  attractor::NetworkState state_;
  experience_map::MapGraph map_;
  local_view::TemplateStore store_;
  std::vector<PhaseLogEntry> log_;
  experience_map::PlanarPose pose_;
  double theta_unwrapped_ = 0.0;
  int current_experience_ = -1;
  int loop_closures_ = 0;
  double path_length_ = 0.0;
};

/// Stereo mode: a loader thread feeds frames through a bounded queue into odometry and mapping.
RunOutput run(const RunConfig& cfg);
/// Velocity-trace mode: bypasses odometry; views are synthetic label images.
RunOutput run_trace(const RunConfig& cfg, const std::vector<TraceRecord>& trace);

/// Writes experiences.csv, links.csv, frames.csv, keyframes.csv, phases.csv, templates.txt,
/// config.txt and stats.json.
void write_outputs(const std::filesystem::path& dir, const RunOutput& out, const RunConfig& cfg);

/// Every consumed frame: frame,timestamp,keyframe,tracking_lost,tx,ty,tz
void write_frame_log(std::ostream& out, const std::vector<FrameLogEntry>& frames);
/// Keyframes only: timestamp, 3x4 row-major pose, a, b, omega, v
void write_keyframe_log(std::ostream& out, const std::vector<FrameLogEntry>& frames);
void write_phase_log(std::ostream& out, const std::vector<PhaseLogEntry>& phases);
std::vector<PhaseLogEntry> read_phase_log(std::istream& in);

// ---------------------------------------------------------------------------
// Firing-rate maps

struct RateUnit {
  enum class Kind { HeadDirection, Grid } kind = Kind::HeadDirection;
  std::array<double, 2> preferred{0.0, 0.0};  // grid units use both, HD units the first
};

/// `hd:<phase>` or `grid:<px>,<py>`.
RateUnit parse_rate_unit(const std::string& text);

struct RateMap {
  double origin_x = 0.0;  // lower corner of bin (0, 0)
  double origin_y = 0.0;
  double bin_size = 1.0;
  int nx = 0;
  int ny = 0;
  std::vector<double> rate;       // row-major by y, NaN for empty bins
  std::vector<int> occupancy;

  double at(int ix, int iy) const { return rate[static_cast<size_t>(iy) * nx + ix]; }
};

/// Unit activity exp(-d^2 / (2 sigma^2)) with d the wrapped phase distance (product over torus
/// axes), averaged per spatial bin. Bins visited fewer than `min_occupancy` times are empty.
RateMap firing_rate_map(const std::vector<PhaseLogEntry>& log, const RateUnit& unit, double tuning_sigma,
                        double bin_size, int min_occupancy = 1);

/// Rates scaled to 0..255, empty bins black; row 0 is the largest y.
void write_rate_pgm(const std::filesystem::path& path, const RateMap& map);
/// ix,iy,x,y,occupancy,rate
void write_rate_csv(std::ostream& out, const RateMap& map);

// ---------------------------------------------------------------------------
// Synthetic worlds

struct WorldSpec {
  enum class Kind { Photometric, Trajectory } kind = Kind::Trajectory;
  // photometric
  CameraIntrinsics intrinsics{320.0, 320.0, 159.5, 119.5, 0.5, 320, 240};
  int frames = 10;
  double forward_step = 0.1;  // m per frame
  double yaw_step = 0.0;      // rad per frame
  double plane_depth = 6.0;
  double brightness_offset = 0.0;  // added to every frame after the first
  double brightness_gain = 0.0;    // log gain per frame
  double frame_dt = 0.1;
  // trajectory
  std::string shape = "square";  // square | straight | out_and_back
  double side = 25.0;
  double speed = 1.0;
  double turn_rate = 0.5;
  double dt = 0.1;
  bool revisit_cue = true;
  int view_every = 0;
};

/// Flat key-value text like the run configuration.
WorldSpec parse_world_spec(std::istream& in);

/// Photometric: image_0/, image_1/, times.txt, calib.txt, poses.txt.
/// Trajectory: trace.csv, times.txt, poses.txt. Deterministic given the seed.
void synthesize_world(const WorldSpec& spec, std::uint64_t seed, const std::filesystem::path& out_dir);

/// Velocity trace and ground-truth planar poses of a trajectory spec.
std::vector<TraceRecord> trajectory_trace(const WorldSpec& spec, std::vector<experience_map::PlanarPose>* poses = nullptr);

}  // namespace nbslam::pipeline
