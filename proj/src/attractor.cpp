#include "nbslam/attractor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nbslam::attractor {

void AttractorConfig::validate() const {
  if (!(total_energy > 0.0)) throw std::invalid_argument("attractor: total_energy must be positive");
  if (!(delta_inte >= 0.0 && delta_inte < 1.0) || !(delta_cali >= 0.0 && delta_cali < 1.0)) {
    throw std::invalid_argument("attractor: inhibition deltas must lie in [0, 1)");
  }
  if (!(familiarity_threshold > 0.0)) throw std::invalid_argument("attractor: familiarity_threshold must be positive");
  if (!(weight_floor > 0.0)) throw std::invalid_argument("attractor: weight_floor must be positive");
  if (!(2.0 * weight_floor < total_energy)) throw std::invalid_argument("attractor: weight_floor too large for total_energy");
  if (!(grid_gain > 0.0)) throw std::invalid_argument("attractor: grid_gain must be positive");
}

NetworkState NetworkState::initial(const AttractorConfig& cfg) {
  const double half = 0.5 * cfg.total_energy;
  NetworkState s;
  s.hd_integrator = {0.0, half};
  s.hd_calibration = {0.0, half};
  s.grid_integrator = {0.0, 0.0, half, half};
  s.grid_calibration = {0.0, 0.0, half, half};
  return s;
}

PhaseEstimate fuse_circular(PhaseEstimate a, PhaseEstimate b, double period) {
  const double total = a.weight + b.weight;
  const double offset = circular_difference(a.mu, b.mu, period);
  const double mu = a.mu + offset * (b.weight / total);
  return {wrap_period(mu, period), total};
}

InhibitedWeights global_inhibition(double inte_w, double cali_w, double total_energy) {
  const double inte = total_energy * inte_w / (inte_w + cali_w);
  return {inte, total_energy - inte};
}

InhibitedWeights mutual_inhibition(double inte_w, double cali_w, double delta_inte, double delta_cali,
                                   double weight_floor) {
  return {std::max(inte_w - delta_inte * cali_w, weight_floor),
          std::max(cali_w - delta_cali * inte_w, weight_floor)};
}

RingBump path_integrate_ring(RingBump bump, double omega, double dt) {
  bump.mu = wrap_two_pi(bump.mu + omega * dt);
  return bump;
}

TorusBump path_integrate_torus(TorusBump bump, double heading, double speed, double dt, double grid_gain) {
  const double dist = grid_gain * speed * dt;
  bump.mu_x = wrap_two_pi(bump.mu_x + dist * std::cos(heading));
  bump.mu_y = wrap_two_pi(bump.mu_y + dist * std::sin(heading));
  return bump;
}

RingBump inject_cue(RingBump cali, double inject_mu, double inject_weight) {
  const PhaseEstimate f = fuse_circular({cali.mu, cali.weight}, {inject_mu, inject_weight});
  return {f.mu, f.weight};
}

TorusBump inject_cue(TorusBump cali, std::array<double, 2> inject_mu, double inject_weight) {
  const PhaseEstimate fx = fuse_circular({cali.mu_x, cali.weight_x}, {inject_mu[0], inject_weight});
  const PhaseEstimate fy = fuse_circular({cali.mu_y, cali.weight_y}, {inject_mu[1], inject_weight});
  return {fx.mu, fy.mu, fx.weight, fy.weight};
}

RingPhase estimate_phase(const RingBump& inte, const RingBump& cali, double threshold) {
  const PhaseEstimate f = fuse_circular({inte.mu, inte.weight}, {cali.mu, cali.weight});
  return {f.mu, f.weight, circular_distance(f.mu, cali.mu) <= threshold};
}

TorusPhase estimate_phase(const TorusBump& inte, const TorusBump& cali, double threshold) {
  const PhaseEstimate fx = fuse_circular({inte.mu_x, inte.weight_x}, {cali.mu_x, cali.weight_x});
  const PhaseEstimate fy = fuse_circular({inte.mu_y, inte.weight_y}, {cali.mu_y, cali.weight_y});
  TorusPhase out;
  out.mu = {fx.mu, fy.mu};
  out.weight = {fx.weight, fy.weight};
  out.familiar = circular_distance(fx.mu, cali.mu_x) <= threshold && circular_distance(fy.mu, cali.mu_y) <= threshold;
  return out;
}

namespace {

// Mutual then global inhibition. The floor is re-applied after normalisation
// so that neither precision drops below it while the pair still sums to E.
InhibitedWeights inhibit(double inte_w, double cali_w, const AttractorConfig& cfg) {
  const InhibitedWeights m = mutual_inhibition(inte_w, cali_w, cfg.delta_inte, cfg.delta_cali, cfg.weight_floor);
  InhibitedWeights g = global_inhibition(m.inte, m.cali, cfg.total_energy);
  if (g.inte < cfg.weight_floor) {
    g = {cfg.weight_floor, cfg.total_energy - cfg.weight_floor};
  } else if (g.cali < cfg.weight_floor) {
    g = {cfg.total_energy - cfg.weight_floor, cfg.weight_floor};
  }
  return g;
}

}  // namespace

StepResult step(const NetworkState& state, const AttractorConfig& cfg, const PlanarVelocity& vel,
                const std::optional<Cue>& cue) {
  NetworkState s = state;

  s.hd_integrator = path_integrate_ring(s.hd_integrator, vel.rotational, vel.dt);
  s.hd_calibration = path_integrate_ring(s.hd_calibration, vel.rotational, vel.dt);
  const double heading = fuse_circular({s.hd_integrator.mu, s.hd_integrator.weight},
                                       {s.hd_calibration.mu, s.hd_calibration.weight}).mu;

  s.grid_integrator = path_integrate_torus(s.grid_integrator, heading, vel.translational, vel.dt, cfg.grid_gain);
  s.grid_calibration = path_integrate_torus(s.grid_calibration, heading, vel.translational, vel.dt, cfg.grid_gain);

  if (cue) {
    s.hd_calibration = inject_cue(s.hd_calibration, cue->hd_phase, cue->inject_weight);
    s.grid_calibration = inject_cue(s.grid_calibration, cue->grid_phase, cue->inject_weight);
  }

  const InhibitedWeights hd = inhibit(s.hd_integrator.weight, s.hd_calibration.weight, cfg);
  s.hd_integrator.weight = hd.inte;
  s.hd_calibration.weight = hd.cali;
  const InhibitedWeights gx = inhibit(s.grid_integrator.weight_x, s.grid_calibration.weight_x, cfg);
  const InhibitedWeights gy = inhibit(s.grid_integrator.weight_y, s.grid_calibration.weight_y, cfg);
  s.grid_integrator.weight_x = gx.inte;
  s.grid_calibration.weight_x = gx.cali;
  s.grid_integrator.weight_y = gy.inte;
  s.grid_calibration.weight_y = gy.cali;

  const RingPhase hd_phase = estimate_phase(s.hd_integrator, s.hd_calibration, cfg.familiarity_threshold);
  if (hd_phase.familiar) s.hd_integrator.mu = hd_phase.mu;
  const TorusPhase grid_phase = estimate_phase(s.grid_integrator, s.grid_calibration, cfg.familiarity_threshold);
  if (grid_phase.familiar) {
    s.grid_integrator.mu_x = grid_phase.mu[0];
    s.grid_integrator.mu_y = grid_phase.mu[1];
  }

  StepResult out;
  out.state = s;
  out.hd_estimate = hd_phase.mu;
  out.grid_estimate = grid_phase.mu;
  out.loop_closed = cue.has_value() && hd_phase.familiar && grid_phase.familiar;
  return out;
}

double torus_distance(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return std::hypot(circular_distance(a[0], b[0]), circular_distance(a[1], b[1]));
}

}  // namespace nbslam::attractor
