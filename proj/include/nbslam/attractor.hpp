#pragma once

#include <array>
#include <optional>

#include "nbslam/angles.hpp"
#include "nbslam/geometry.hpp"

namespace nbslam::attractor {

/// Gaussian activity packet on a ring; weight is the precision 1/sigma^2.
struct RingBump {
  double mu = 0.0;
  double weight = 1.0;
};

/// Gaussian activity packet on a torus with independent axes.
struct TorusBump {
  double mu_x = 0.0;
  double mu_y = 0.0;
  double weight_x = 1.0;
  double weight_y = 1.0;
};

struct AttractorConfig {
  double total_energy = 2.0;
  double delta_inte = 0.05;
  double delta_cali = 0.05;
  double familiarity_threshold = 0.1;  // rad
  double weight_floor = 1e-6;
  double grid_gain = kGridGainDefault;  // rad per meter

  static constexpr double kGridGainDefault = 0.15707963267948966;  // 2*pi / 40 m

  void validate() const;
};

struct NetworkState {
  RingBump hd_integrator;
  RingBump hd_calibration;
  TorusBump grid_integrator;
  TorusBump grid_calibration;

  /// Both networks at phase zero with the energy split evenly.
  static NetworkState initial(const AttractorConfig& cfg);
};

/// Phase and precision pair on one periodic axis.
struct PhaseEstimate {
  double mu = 0.0;
  double weight = 0.0;
};

struct InhibitedWeights {
  double inte = 0.0;
  double cali = 0.0;
};

/// Visual cue bound to a view template.
struct Cue {
  double hd_phase = 0.0;
  std::array<double, 2> grid_phase{0.0, 0.0};
  double inject_weight = 0.0;
};

struct StepResult {
  NetworkState state;
  double hd_estimate = 0.0;
  std::array<double, 2> grid_estimate{0.0, 0.0};
  bool loop_closed = false;
};

/// Precision-weighted fusion of two circular Gaussians. The second mean is
/// moved to its representative nearest the first before averaging.
PhaseEstimate fuse_circular(PhaseEstimate a, PhaseEstimate b, double period = kTwoPi);

InhibitedWeights global_inhibition(double inte_w, double cali_w, double total_energy);

InhibitedWeights mutual_inhibition(double inte_w, double cali_w, double delta_inte, double delta_cali,
                                   double weight_floor);

RingBump path_integrate_ring(RingBump bump, double omega, double dt);

TorusBump path_integrate_torus(TorusBump bump, double heading, double speed, double dt, double grid_gain);

RingBump inject_cue(RingBump cali, double inject_mu, double inject_weight);
TorusBump inject_cue(TorusBump cali, std::array<double, 2> inject_mu, double inject_weight);

struct RingPhase {
  double mu = 0.0;
  double weight = 0.0;
  bool familiar = false;
};

struct TorusPhase {
  std::array<double, 2> mu{0.0, 0.0};
  std::array<double, 2> weight{0.0, 0.0};
  bool familiar = false;
};

/// Fused phase of integrator and calibration bumps, and whether the fused
/// phase lies within `threshold` of the calibration phase on every axis.
RingPhase estimate_phase(const RingBump& inte, const RingBump& cali, double threshold);
TorusPhase estimate_phase(const TorusBump& inte, const TorusBump& cali, double threshold);

/// One decision cycle of both networks:
///   integrate HD -> estimate heading -> integrate grid along that heading
///   -> inject cue -> mutual then global inhibition -> estimate phases.
/// A familiar estimate is copied into the integrator mean.
StepResult step(const NetworkState& state, const AttractorConfig& cfg, const PlanarVelocity& vel,
                const std::optional<Cue>& cue);

/// Geodesic distance on the torus between two grid phases.
double torus_distance(const std::array<double, 2>& a, const std::array<double, 2>& b);

}  // namespace nbslam::attractor
