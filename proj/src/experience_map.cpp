#include "nbslam/experience_map.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "nbslam/angles.hpp"

namespace nbslam::experience_map {

namespace {

void require_id(const MapGraph& graph, int id, const char* what) {
  if (id < 0 || id >= static_cast<int>(graph.experiences.size())) {
    throw std::out_of_range(std::string(what) + ": unknown experience id " + std::to_string(id));
  }
}

double huber(double sq_norm, double delta) {
  if (sq_norm <= delta * delta) return sq_norm;
  return 2.0 * delta * std::sqrt(sq_norm) - delta * delta;
}

double huber_weight(double sq_norm, double delta) {
  if (sq_norm <= delta * delta) return 1.0;
  return delta / std::sqrt(sq_norm);
}

Eigen::Vector3d scaled_residual(const MapGraph& g, const ExperienceLink& link) {
  Eigen::Vector3d r = residual(g.experiences[link.from_id], g.experiences[link.to_id], link);
  r.z() *= g.angle_scale;
  return r;
}

}  // namespace

NewExperience add_experience(MapGraph& graph, const PlanarPose& pose, int template_id, double hd_phase,
                             std::array<double, 2> grid_phase, double timestamp, std::optional<int> prev_id) {
  Experience e;
  e.id = static_cast<int>(graph.experiences.size());
  e.x = pose.x;
  e.y = pose.y;
  e.theta = wrap_pi(pose.theta);
  e.template_id = template_id;
  e.hd_phase = hd_phase;
  e.grid_phase = grid_phase;
  e.timestamp = timestamp;

  NewExperience out;
  out.id = e.id;
  if (!graph.experiences.empty()) {
    if (!prev_id) throw std::invalid_argument("add_experience: previous experience required");
    require_id(graph, *prev_id, "add_experience");
    const Experience& prev = graph.experiences[*prev_id];
    const double dx = e.x - prev.x;
    const double dy = e.y - prev.y;
    ExperienceLink link;
    link.from_id = prev.id;
    link.to_id = e.id;
    link.d = std::hypot(dx, dy);
    link.heading_rad = wrap_pi(std::atan2(dy, dx) - prev.theta);
    link.facing_rad = wrap_pi(e.theta - prev.theta);
    link.dt = timestamp - prev.timestamp;
    out.link = link;
  }
  graph.experiences.push_back(e);
  if (out.link) graph.links.push_back(*out.link);
  return out;
}

void add_link(MapGraph& graph, const ExperienceLink& link) {
  require_id(graph, link.from_id, "add_link");
  require_id(graph, link.to_id, "add_link");
  if (link.from_id == link.to_id) throw std::invalid_argument("add_link: endpoints must differ");
  if (!(link.d >= 0.0)) throw std::invalid_argument("add_link: negative distance");
  graph.links.push_back(link);
}

bool close_loop(MapGraph& graph, int current_id, int matched_id, double relative_facing) {
  require_id(graph, current_id, "close_loop");
  require_id(graph, matched_id, "close_loop");
  if (current_id == matched_id) throw std::invalid_argument("close_loop: current and matched experience coincide");
  const double facing = wrap_pi(relative_facing);
  for (const ExperienceLink& l : graph.links) {
    if (l.loop_closure && l.from_id == current_id && l.to_id == matched_id && l.facing_rad == facing) return false;
  }
  ExperienceLink link;
  link.from_id = current_id;
  link.to_id = matched_id;
  link.d = 0.0;
  link.heading_rad = 0.0;
  link.facing_rad = facing;
  link.dt = graph.experiences[matched_id].timestamp - graph.experiences[current_id].timestamp;
  link.loop_closure = true;
  graph.links.push_back(link);
  return true;
}

Eigen::Vector3d residual(const Experience& e_i, const Experience& e_j, const ExperienceLink& link) {
  const double a = e_i.theta + link.heading_rad;
  return {e_j.x - e_i.x - link.d * std::cos(a), e_j.y - e_i.y - link.d * std::sin(a),
          wrap_pi(e_j.theta - e_i.theta - link.facing_rad)};
}

double total_cost(const MapGraph& graph) {
  double cost = 0.0;
  for (const ExperienceLink& link : graph.links) {
    cost += 0.5 * huber(scaled_residual(graph, link).squaredNorm(), graph.robust_delta);
  }
  return cost;
}

OptimizeResult optimize(MapGraph& graph, int max_iterations) {
  OptimizeResult result;
  const int n = static_cast<int>(graph.experiences.size());
  double cost = total_cost(graph);
  result.initial_cost = cost;
  result.final_cost = cost;
  if (n < 2 || graph.links.empty() || cost == 0.0) {
    result.converged = true;
    return result;
  }

  const int dim = 3 * (n - 1);
  const double s = graph.angle_scale;
  double lambda = 1e-4;
  constexpr int kMaxDampingRetries = 8;

  // Column of a variable, or -1 for the gauge experience.
  auto col = [](int id, int k) { return id == 0 ? -1 : 3 * (id - 1) + k; };

  for (int iter = 0; iter < max_iterations; ++iter) {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(graph.links.size() * 36);
    Eigen::VectorXd gradient = Eigen::VectorXd::Zero(dim);

    for (const ExperienceLink& link : graph.links) {
      const Experience& ei = graph.experiences[link.from_id];
      const Eigen::Vector3d r = scaled_residual(graph, link);
      const double w = huber_weight(r.squaredNorm(), graph.robust_delta);
      const double a = ei.theta + link.heading_rad;

      Eigen::Matrix<double, 3, 6> jac = Eigen::Matrix<double, 3, 6>::Zero();
      jac(0, 0) = -1.0;
      jac(1, 1) = -1.0;
      jac(0, 2) = link.d * std::sin(a);
      jac(1, 2) = -link.d * std::cos(a);
      jac(2, 2) = -s;
      jac(0, 3) = 1.0;
      jac(1, 4) = 1.0;
      jac(2, 5) = s;

      const int ids[2] = {link.from_id, link.to_id};
      const Eigen::Matrix<double, 6, 6> h = w * jac.transpose() * jac;
      const Eigen::Matrix<double, 6, 1> b = w * jac.transpose() * r;
      for (int p = 0; p < 6; ++p) {
        const int cp = col(ids[p / 3], p % 3);
        if (cp < 0) continue;
        gradient[cp] += b[p];
        for (int q = 0; q < 6; ++q) {
          const int cq = col(ids[q / 3], q % 3);
          if (cq < 0) continue;
          triplets.emplace_back(cp, cq, h(p, q));
        }
      }
    }

    Eigen::SparseMatrix<double> hessian(dim, dim);
    hessian.setFromTriplets(triplets.begin(), triplets.end());
    const Eigen::VectorXd diag = hessian.diagonal();

    bool accepted = false;
    std::vector<Experience> candidate;
    double new_cost = cost;
    for (int attempt = 0; attempt <= kMaxDampingRetries; ++attempt) {
      Eigen::SparseMatrix<double> damped = hessian;
      for (int k = 0; k < dim; ++k) damped.coeffRef(k, k) += lambda * (diag[k] + 1e-9);
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(damped);
      if (solver.info() != Eigen::Success) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd delta = solver.solve(-gradient);
      if (solver.info() != Eigen::Success || !delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      candidate = graph.experiences;
      for (int id = 1; id < n; ++id) {
        Experience& e = candidate[id];
        e.x += delta[col(id, 0)];
        e.y += delta[col(id, 1)];
        e.theta = wrap_pi(e.theta + delta[col(id, 2)]);
      }
      MapGraph trial{std::move(candidate), graph.links, graph.robust_delta, graph.angle_scale};
      new_cost = total_cost(trial);
      candidate = std::move(trial.experiences);
      if (new_cost <= cost) {
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }

    result.iterations = iter + 1;
    if (!accepted) {
      // No damped step reduces the cost: stationary unless the gradient is still significant.
      result.converged = gradient.lpNorm<Eigen::Infinity>() <= 1e-9 * (1.0 + cost);
      break;
    }
    graph.experiences = std::move(candidate);
    const double rel = (cost - new_cost) / std::max(cost, 1e-300);
    cost = new_cost;
    lambda = std::max(lambda * 0.1, 1e-12);
    if (rel < 1e-9) {
      result.converged = true;
      break;
    }
  }
  result.final_cost = cost;
  return result;
}

void write_experiences_csv(std::ostream& out, const MapGraph& graph) {
  const auto prec = out.precision(17);
  out << "id,x,y,theta,template_id,timestamp\n";
  for (const Experience& e : graph.experiences) {
    out << e.id << ',' << e.x << ',' << e.y << ',' << e.theta << ',' << e.template_id << ',' << e.timestamp << '\n';
  }
  out.precision(prec);
}

void write_links_csv(std::ostream& out, const MapGraph& graph) {
  const auto prec = out.precision(17);
  out << "from,to,d,heading_rad,facing_rad\n";
  for (const ExperienceLink& l : graph.links) {
    out << l.from_id << ',' << l.to_id << ',' << l.d << ',' << l.heading_rad << ',' << l.facing_rad << '\n';
  }
  out.precision(prec);
}

std::vector<Experience> read_experiences_csv(std::istream& in) {
  std::vector<Experience> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.rfind("id,", 0) == 0) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    Experience e;
    if (!(ss >> e.id >> e.x >> e.y >> e.theta >> e.template_id >> e.timestamp)) {
      throw std::runtime_error("experience CSV: malformed line " + std::to_string(line_no));
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace nbslam::experience_map
