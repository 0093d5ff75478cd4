#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace nbslam::experience_map {

struct Experience {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;  // [-pi, pi)
  int template_id = -1;
  double hd_phase = 0.0;
  std::array<double, 2> grid_phase{0.0, 0.0};
  double timestamp = 0.0;
};

struct ExperienceLink {
  int from_id = 0;
  int to_id = 0;
  double d = 0.0;
  double heading_rad = 0.0;
  double facing_rad = 0.0;
  double dt = 0.0;
  bool loop_closure = false;
};

struct PlanarPose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

struct MapGraph {
  std::vector<Experience> experiences;
  std::vector<ExperienceLink> links;
  double robust_delta = 1.0;  // Huber threshold on the link residual norm
  double angle_scale = 1.0;   // metres per radian in the residual norm
};

struct NewExperience {
  int id = 0;
  std::optional<ExperienceLink> link;
};

/// Appends an experience at `pose` and links it from `prev_id` using the odometric displacement.
/// `prev_id` is ignored (and may be empty) only for the first experience.
NewExperience add_experience(MapGraph& graph, const PlanarPose& pose, int template_id, double hd_phase,
                             std::array<double, 2> grid_phase, double timestamp, std::optional<int> prev_id);

/// Adds a constraint between two existing experiences. Throws on unknown or equal endpoints.
void add_link(MapGraph& graph, const ExperienceLink& link);

/// Zero-distance link saying `current_id` revisits `matched_id`, rotated by `relative_facing`.
/// Returns false when the identical loop link already exists.
bool close_loop(MapGraph& graph, int current_id, int matched_id, double relative_facing);

/// Unscaled link residual (x, y, wrapped angle).
Eigen::Vector3d residual(const Experience& e_i, const Experience& e_j, const ExperienceLink& link);

struct OptimizeResult {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
};

/// Total robust cost 1/2 * sum rho(|r|^2), with the angle residual scaled by angle_scale.
double total_cost(const MapGraph& graph);

/// Iteratively reweighted Gauss-Newton with Levenberg damping. Experience 0 is held fixed.
OptimizeResult optimize(MapGraph& graph, int max_iterations = 100);

/// CSV: id,x,y,theta,template_id,timestamp
void write_experiences_csv(std::ostream& out, const MapGraph& graph);
/// CSV: from,to,d,heading_rad,facing_rad
void write_links_csv(std::ostream& out, const MapGraph& graph);
/// Parses the experience CSV written by write_experiences_csv.
std::vector<Experience> read_experiences_csv(std::istream& in);

}  // namespace nbslam::experience_map
