#include <doctest.h>

#include <cmath>
#include <random>

#include "nbslam/attractor.hpp"
#include "oracles.hpp"

using namespace nbslam;
using namespace nbslam::attractor;

TEST_CASE("fuse_circular examples") {
  const PhaseEstimate same = fuse_circular({0.0, 1.0}, {0.0, 1.0});
  CHECK(same.mu == doctest::Approx(0.0));
  CHECK(same.weight == doctest::Approx(2.0));

  const PhaseEstimate mean = fuse_circular({1.0, 1.0}, {2.0, 3.0});
  CHECK(mean.mu == doctest::Approx(1.75));
  CHECK(mean.weight == doctest::Approx(4.0));

  const PhaseEstimate wrap = fuse_circular({6.2, 1.0}, {0.1, 1.0}, kTwoPi);
  const double unwrapped = 0.5 * ((6.2 - kTwoPi) + 0.1);
  CHECK(wrap.mu == doctest::Approx(unwrapped).epsilon(1e-12));
  CHECK(wrap.mu == doctest::Approx(0.0084).epsilon(1e-2));
  CHECK(oracle::ring_distance(wrap.mu, oracle::ring_kernel_product_argmax(6.2, 1.0, 0.1, 1.0, 1000000)) <=
        2.0 * kTwoPi / 1e6);
}

TEST_CASE("fuse_circular is symmetric and stays in range") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi), weight(0.01, 50.0);
  for (int i = 0; i < 10000; ++i) {
    const PhaseEstimate a{phase(rng), weight(rng)}, b{phase(rng), weight(rng)};
    const PhaseEstimate ab = fuse_circular(a, b), ba = fuse_circular(b, a);
    CHECK(ab.mu >= 0.0);
    CHECK(ab.mu < kTwoPi);
    CHECK(oracle::ring_distance(ab.mu, ba.mu) < 1e-12);
    CHECK(ab.weight == ba.weight);
  }
}

TEST_CASE("fuse_circular honours a non-default period") {
  const PhaseEstimate f = fuse_circular({9.5, 1.0}, {0.5, 1.0}, 10.0);
  CHECK(f.mu == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("global_inhibition") {
  const InhibitedWeights a = global_inhibition(3.0, 1.0, 2.0);
  CHECK(a.inte == doctest::Approx(1.5));
  CHECK(a.cali == doctest::Approx(0.5));
  for (double w : {1e-3, 0.5, 7.0, 1e4}) {
    const InhibitedWeights b = global_inhibition(w, w, 3.0);
    CHECK(b.inte == doctest::Approx(1.5));
    CHECK(b.cali == doctest::Approx(1.5));
  }
  const InhibitedWeights c = global_inhibition(1.0, 1.0, 2.0);
  CHECK(c.inte == 1.0);
  CHECK(c.cali == 1.0);
}

TEST_CASE("mutual_inhibition") {
  const InhibitedWeights a = mutual_inhibition(2.0, 1.0, 0.1, 0.3, 1e-6);
  CHECK(a.inte == doctest::Approx(1.9));
  CHECK(a.cali == doctest::Approx(0.4));
  const InhibitedWeights b = mutual_inhibition(2.0, 1.0, 0.0, 0.0, 1e-6);
  CHECK(b.inte == 2.0);
  CHECK(b.cali == 1.0);
  const InhibitedWeights c = mutual_inhibition(0.1, 10.0, 0.5, 0.05, 1e-6);
  CHECK(c.inte == 1e-6);
}

TEST_CASE("path integration") {
  const RingBump r = path_integrate_ring({6.0, 1.0}, 5.0, 0.1);
  CHECK(r.mu == doctest::Approx(6.5 - kTwoPi));
  CHECK(r.weight == 1.0);
  const RingBump still = path_integrate_ring({2.0, 3.0}, 0.0, 0.1);
  CHECK(still.mu == 2.0);
  CHECK(still.weight == 3.0);

  const TorusBump t = path_integrate_torus({1.0, 1.0, 2.0, 3.0}, 0.0, 10.0, 0.1, kTwoPi / 10.0);
  CHECK(t.mu_x - 1.0 == doctest::Approx(0.6283).epsilon(1e-4));
  CHECK(t.mu_y == doctest::Approx(1.0));
  CHECK(t.weight_x == 2.0);
  CHECK(t.weight_y == 3.0);
  const TorusBump s = path_integrate_torus({1.0, 1.0, 2.0, 3.0}, 0.4, 0.0, 0.1, kTwoPi / 10.0);
  CHECK(s.mu_x == 1.0);
  CHECK(s.mu_y == 1.0);
  const TorusBump y = path_integrate_torus({1.0, 1.0, 2.0, 3.0}, kPi / 2.0, 1.0, 1.0, 0.5);
  CHECK(y.mu_x == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.mu_y == doctest::Approx(1.5));
}

TEST_CASE("inject_cue") {
  const RingBump same = inject_cue(RingBump{2.0, 1.0}, 2.0, 5.0);
  CHECK(same.mu == doctest::Approx(2.0));
  CHECK(same.weight == doctest::Approx(6.0));
  const RingBump mean = inject_cue(RingBump{1.0, 1.0}, 2.0, 3.0);
  CHECK(mean.mu == doctest::Approx(1.75));
  CHECK(mean.weight == doctest::Approx(4.0));
  const RingBump wrap = inject_cue(RingBump{6.2, 1.0}, 0.1, 1.0);
  CHECK(wrap.mu == doctest::Approx(fuse_circular({6.2, 1.0}, {0.1, 1.0}).mu));
  const TorusBump t = inject_cue(TorusBump{1.0, 6.2, 1.0, 1.0}, {2.0, 0.1}, 3.0);
  CHECK(t.mu_x == doctest::Approx(1.75));
  CHECK(t.weight_x == doctest::Approx(4.0));
  CHECK(t.weight_y == doctest::Approx(4.0));
}

TEST_CASE("estimate_phase familiarity") {
  const RingPhase same = estimate_phase(RingBump{2.5, 1.0}, RingBump{2.5, 3.0}, 0.1);
  CHECK(same.familiar);
  CHECK(same.mu == doctest::Approx(2.5));
  const RingPhase far = estimate_phase(RingBump{0.0, 1.0}, RingBump{kPi, 1.0}, 0.1);
  CHECK_FALSE(far.familiar);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi), weight(0.01, 10.0);
  for (int i = 0; i < 1000; ++i) {
    CHECK(estimate_phase(RingBump{phase(rng), weight(rng)}, RingBump{phase(rng), weight(rng)}, kPi).familiar);
  }
  const TorusPhase tp = estimate_phase(TorusBump{1.0, 2.0, 1.0, 1.0}, TorusBump{1.0, 2.05, 1.0, 1.0}, 0.1);
  CHECK(tp.familiar);
  CHECK(tp.mu[1] == doctest::Approx(2.025));
}

TEST_CASE("step keeps a symmetric state still") {
  AttractorConfig cfg;
  const NetworkState s0 = NetworkState::initial(cfg);
  const StepResult r = step(s0, cfg, {0.0, 0.0, 0.1}, std::nullopt);
  CHECK(r.state.hd_integrator.mu == 0.0);
  CHECK(r.state.grid_calibration.mu_y == 0.0);
  CHECK(r.state.hd_integrator.weight == doctest::Approx(cfg.total_energy / 2));
  CHECK(r.state.hd_calibration.weight == doctest::Approx(cfg.total_energy / 2));
  CHECK(r.state.grid_integrator.weight_x == doctest::Approx(cfg.total_energy / 2));
  CHECK_FALSE(r.loop_closed);
}

TEST_CASE("a full turn returns the heading") {
  AttractorConfig cfg;
  NetworkState s = NetworkState::initial(cfg);
  StepResult r;
  for (int i = 0; i < 1000; ++i) {
    r = step(s, cfg, {kTwoPi / 100.0, 0.0, 0.1}, std::nullopt);
    s = r.state;
  }
  CHECK(oracle::ring_distance(r.hd_estimate, 0.0) < 1e-6);
}

TEST_CASE("a strong cue at the current phases closes the loop") {
  AttractorConfig cfg;
  NetworkState s = NetworkState::initial(cfg);
  for (int i = 0; i < 30; ++i) s = step(s, cfg, {0.1, 1.0, 0.1}, std::nullopt).state;
  const StepResult probe = step(s, cfg, {0.0, 0.0, 0.1}, std::nullopt);
  const Cue cue{probe.hd_estimate, probe.grid_estimate, 100.0};
  const StepResult r = step(s, cfg, {0.0, 0.0, 0.1}, cue);
  CHECK(r.loop_closed);
}

TEST_CASE("a distant cue is not familiar") {
  AttractorConfig cfg;
  const NetworkState s = NetworkState::initial(cfg);
  const StepResult r = step(s, cfg, {0.0, 0.0, 0.1}, Cue{kPi, {kPi, kPi}, 0.5});
  CHECK_FALSE(r.loop_closed);
}

TEST_CASE("invariants over a random run") {
  AttractorConfig cfg;
  NetworkState s = NetworkState::initial(cfg);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 5000; ++i) {
    std::optional<Cue> cue;
    if (u(rng) < 0.3) cue = Cue{u(rng) * kTwoPi, {u(rng) * kTwoPi, u(rng) * kTwoPi}, 50.0 * u(rng)};
    s = step(s, cfg, {4.0 * (u(rng) - 0.5), 3.0 * u(rng), 0.1}, cue).state;
    for (double mu : {s.hd_integrator.mu, s.hd_calibration.mu, s.grid_integrator.mu_x, s.grid_integrator.mu_y,
                      s.grid_calibration.mu_x, s.grid_calibration.mu_y}) {
      CHECK(mu >= 0.0);
      CHECK(mu < kTwoPi);
    }
    for (double w : {s.hd_integrator.weight, s.hd_calibration.weight, s.grid_integrator.weight_x,
                     s.grid_calibration.weight_y}) {
      CHECK(w >= cfg.weight_floor);
    }
    CHECK(std::abs(s.hd_integrator.weight + s.hd_calibration.weight - cfg.total_energy) <= 4.5e-16);
  }
}

TEST_CASE("torus distance and config validation") {
  CHECK(torus_distance({0.1, 0.0}, {kTwoPi - 0.2, 0.4}) == doctest::Approx(0.5));
  AttractorConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.delta_inte = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.total_energy = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.grid_gain = -1.0;
  CHECK_THROWS(cfg.validate());
}
