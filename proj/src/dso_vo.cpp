#include "nbslam/dso_vo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace nbslam::vo {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vec2 level_pixel(const Vec2& p, int level) {
  const double s = std::ldexp(1.0, -level);
  return (p.array() + 0.5) * s - 0.5;
}

/// Central difference of the bilinear surface, one pixel either side.
double host_gradient_weight(const Image& img, double x, double y, double c) {
  const double gx = 0.5 * (interpolate(img, x + 1.0, y) - interpolate(img, x - 1.0, y));
  const double gy = 0.5 * (interpolate(img, x, y + 1.0) - interpolate(img, x, y - 1.0));
  return c * c / (c * c + gx * gx + gy * gy);
}

RigidTransform3 right_from_left(double baseline) { return {Mat3::Identity(), Vec3(-baseline, 0.0, 0.0)}; }

double pattern_sad(const Image& right, const std::array<double, kPatternSize>& ref,
                   const Vec2& pixel, double disparity) {
  double sad = 0.0;
  for (int k = 0; k < kPatternSize; ++k) {
    const double x = pixel.x() + kPattern[k][0] - disparity;
    const double y = pixel.y() + kPattern[k][1];
    sad += std::abs(interpolate(right, x, y) - ref[k]);
  }
  return sad / kPatternSize;
}

}  // namespace

void VoConfig::validate() const {
  if (pyramid_levels < 1) throw std::invalid_argument("vo: pyramid_levels must be >= 1");
  if (!(huber_gamma > 0.0) || !(gradient_c > 0.0)) throw std::invalid_argument("vo: gamma and c must be positive");
  if (!(lambda >= 0.0)) throw std::invalid_argument("vo: lambda must be non-negative");
  if (window_size < 2) throw std::invalid_argument("vo: window_size must be >= 2");
  if (block_rows < 1 || block_cols < 1) throw std::invalid_argument("vo: selection grid must be positive");
  if (stereo_search_range < 1) throw std::invalid_argument("vo: stereo_search_range must be positive");
  if (!(flow_threshold >= 0.0) || !(brightness_threshold >= 0.0)) {
    throw std::invalid_argument("vo: keyframe thresholds must be non-negative");
  }
  if (max_iterations < 1 || joint_iterations < 0) throw std::invalid_argument("vo: iteration counts out of range");
}

PyramidFrame PyramidFrame::build(FrameData frame, int levels) {
  if (frame.left.empty() || frame.left.width() != frame.right.width() ||
      frame.left.height() != frame.right.height()) {
    throw std::invalid_argument("frame: left and right images must be non-empty and of equal size");
  }
  PyramidFrame out;
  out.left_pyramid = build_pyramid(frame.left, levels);
  out.frame = std::move(frame);
  return out;
}

const Keyframe* KeyframeWindow::find(int id) const {
  for (const Keyframe& kf : keyframes) {
    if (kf.id == id) return &kf;
  }
  return nullptr;
}

Keyframe* KeyframeWindow::find(int id) {
  for (Keyframe& kf : keyframes) {
    if (kf.id == id) return &kf;
  }
  return nullptr;
}

size_t KeyframeWindow::point_count() const {
  size_t n = 0;
  for (const Keyframe& kf : keyframes) n += kf.points.size();
  return n;
}

double gradient_weight(const Image& image, int x, int y, double c) {
  double gx = 0.0, gy = 0.0;
  central_gradient(image, x, y, gx, gy);
  return c * c / (c * c + gx * gx + gy * gy);
}

std::vector<Vec2> select_candidate_points(const Image& image, int block_rows, int block_cols, double g_const,
                                          int border) {
  const int w = image.width();
  const int h = image.height();
  border = std::max(border, 1);
  std::vector<Vec2> out;
  if (block_rows < 1 || block_cols < 1 || w <= 2 * border || h <= 2 * border) return out;

  std::vector<double> mag(static_cast<size_t>(w) * h, 0.0);
  for (int y = border; y < h - border; ++y) {
    for (int x = border; x < w - border; ++x) {
      double gx, gy;
      central_gradient(image, x, y, gx, gy);
      mag[static_cast<size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  }

  std::vector<double> values;
  for (int br = 0; br < block_rows; ++br) {
    const int y0 = std::max(border, static_cast<int>(static_cast<long long>(br) * h / block_rows));
    const int y1 = std::min(h - border, static_cast<int>(static_cast<long long>(br + 1) * h / block_rows));
    for (int bc = 0; bc < block_cols; ++bc) {
      const int x0 = std::max(border, static_cast<int>(static_cast<long long>(bc) * w / block_cols));
      const int x1 = std::min(w - border, static_cast<int>(static_cast<long long>(bc + 1) * w / block_cols));
      if (y1 <= y0 || x1 <= x0) continue;
      values.clear();
      double best = -1.0;
      int bx = -1, by = -1;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const double m = mag[static_cast<size_t>(y) * w + x];
          values.push_back(m);
          if (m > best) {
            best = m;
            bx = x;
            by = y;
          }
        }
      }
      auto mid = values.begin() + static_cast<long>(values.size() / 2);
      std::nth_element(values.begin(), mid, values.end());
      if (best > *mid + g_const) out.emplace_back(bx, by);
    }
  }
  std::sort(out.begin(), out.end(), [](const Vec2& a, const Vec2& b) {
    return a.y() < b.y() || (a.y() == b.y() && a.x() < b.x());
  });
  return out;
}

std::optional<double> static_stereo_disparity(const Image& left, const Image& right, const Vec2& pixel,
                                              int search_range, const StereoParams& params) {
  if (!left.contains(pixel.x(), pixel.y(), 2.0)) return std::nullopt;
  std::array<double, kPatternSize> ref{};
  double lo = kInf, hi = -kInf;
  for (int k = 0; k < kPatternSize; ++k) {
    ref[k] = interpolate(left, pixel.x() + kPattern[k][0], pixel.y() + kPattern[k][1]);
    lo = std::min(lo, ref[k]);
    hi = std::max(hi, ref[k]);
  }
  if (hi - lo < params.min_contrast) return std::nullopt;

  const int max_shift = std::min(search_range, static_cast<int>(std::floor(pixel.x() - 2.0)));
  if (max_shift < 1) return std::nullopt;
  // SAD on a half-pixel grid of shifts: index i stands for a disparity of i / 2.
  const int n = 2 * max_shift + 1;
  std::vector<double> sad(static_cast<size_t>(n));
  int best = 0;
  for (int i = 0; i < n; ++i) {
    sad[i] = pattern_sad(right, ref, pixel, 0.5 * i);
    if (sad[i] < sad[best]) best = i;
  }
  if (sad[best] > params.max_sad) return std::nullopt;
  // Best competing local minimum outside the winner's basin.
  double second = kInf;
  for (int i = 0; i < n; ++i) {
    if (std::abs(i - best) <= 2) continue;
    const bool left_ok = i == 0 || sad[i] <= sad[i - 1];
    const bool right_ok = i == n - 1 || sad[i] <= sad[i + 1];
    if (left_ok && right_ok) second = std::min(second, sad[i]);
  }
  if (second < params.ambiguity_ratio * sad[best] + 1.0) return std::nullopt;

  double disp = 0.5 * best;
  if (best > 0 && best < n - 1) {
    const double denom = sad[best - 1] - 2.0 * sad[best] + sad[best + 1];
    if (denom > 0.0) disp += 0.5 * std::clamp(0.5 * (sad[best - 1] - sad[best + 1]) / denom, -0.5, 0.5);
  }

  // Gauss-Newton on the pattern SSD, left and right sampled half a disparity either side when the
  // image allows.
  const double lo_disp = std::max(0.5 * best - 1.0, 0.0), hi_disp = std::min(0.5 * best + 1.0, pixel.x() - 2.0);
  const double c = left.contains(pixel.x() + 0.5 * hi_disp, pixel.y(), 2.0) ? 0.5 : 0.0;
  auto ssd = [&](double s) {
    double e = 0.0;
    for (int k = 0; k < kPatternSize; ++k) {
      const double x = pixel.x() + kPattern[k][0];
      const double y = pixel.y() + kPattern[k][1];
      const double r = interpolate(right, x - (1.0 - c) * s, y) - interpolate(left, x + c * s, y);
      e += r * r;
    }
    return e;
  };
  double energy = ssd(disp);
  double h = 0.0;
  for (int it = 0; it < 20; ++it) {
    double g = 0.0;
    h = 0.0;
    for (int k = 0; k < kPatternSize; ++k) {
      const double x = pixel.x() + kPattern[k][0];
      const double y = pixel.y() + kPattern[k][1];
      const Sample sr = interpolate_with_gradient(right, x - (1.0 - c) * disp, y);
      const Sample sl = interpolate_with_gradient(left, x + c * disp, y);
      const double r = sr.value - sl.value;
      const double j = -(1.0 - c) * sr.dx - c * sl.dx;
      h += j * j;
      g += j * r;
    }
    if (!(h > 0.0)) break;
    double step = -g / h;
    bool moved = false;
    for (int halving = 0; halving < 8; ++halving) {
      const double cand = std::clamp(disp + step, lo_disp, hi_disp);
      const double e = ssd(cand);
      if (e <= energy) {
        moved = std::abs(cand - disp) >= 1e-7;
        disp = cand;
        energy = e;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  if (!(disp > 0.0)) return std::nullopt;
  if (h < params.min_epipolar_gradient * params.min_epipolar_gradient * kPatternSize) return std::nullopt;
  return disp;
}

std::optional<double> static_stereo_depth(const Image& left, const Image& right, const Vec2& pixel,
                                          const CameraIntrinsics& k, int search_range, const StereoParams& params) {
  const auto disp = static_stereo_disparity(left, right, pixel, search_range, params);
  if (!disp) return std::nullopt;
  return *disp / (k.fx * k.baseline);
}

double huber_norm(double r, double gamma) {
  const double a = std::abs(r);
  return a <= gamma ? r * r : 2.0 * gamma * a - gamma * gamma;
}

double huber_weight(double r, double gamma) {
  const double a = std::abs(r);
  return a <= gamma ? 1.0 : gamma / a;
}

PointResidual photometric_residual(const Image& host, const Image& target, const Vec2& pixel, double inverse_depth,
                                   const RigidTransform3& t_ji, const CameraIntrinsics& k,
                                   const AffineBrightness& host_affine, const AffineBrightness& target_affine,
                                   double gamma, double gradient_c, bool with_jacobian) {
  PointResidual out;
  if (!(inverse_depth > 0.0)) return out;
  const double scale = std::exp(target_affine.a - host_affine.a);
  const Mat3& rot = t_ji.rotation;
  for (int n = 0; n < kPatternSize; ++n) {
    PatternResidual& term = out.terms[n];
    const double px = pixel.x() + kPattern[n][0];
    const double py = pixel.y() + kPattern[n][1];
    if (!host.contains(px, py, 1.0)) continue;
    const Vec3 xi((px - k.cx) / k.fx / inverse_depth, (py - k.cy) / k.fy / inverse_depth, 1.0 / inverse_depth);
    const Vec3 xj = rot * xi + t_ji.translation;
    if (!(xj.z() > 0.0)) continue;
    const double iz = 1.0 / xj.z();
    const double u = k.fx * xj.x() * iz + k.cx;
    const double v = k.fy * xj.y() * iz + k.cy;
    if (!target.contains(u, v)) continue;

    const Sample tj = interpolate_with_gradient(target, u, v);
    const double ii = interpolate(host, px, py);
    term.residual = tj.value - target_affine.b - scale * (ii - host_affine.b);
    term.weight = host_gradient_weight(host, px, py, gradient_c);
    term.energy = term.weight * huber_norm(term.residual, gamma);
    term.valid = true;
    term.projected = Vec2(u, v);
    ++out.valid_count;
    out.energy += term.energy;

    if (!with_jacobian) continue;
    // d I_j / d X_j through the pinhole projection.
    const Vec3 g(tj.dx * k.fx * iz, tj.dy * k.fy * iz,
                 -(tj.dx * k.fx * xj.x() + tj.dy * k.fy * xj.y()) * iz * iz);
    term.d_target_pose.head<3>() = g;
    term.d_target_pose.tail<3>() = xj.cross(g);
    const Vec3 h = rot.transpose() * g;
    term.d_host_pose.head<3>() = -h;
    term.d_host_pose.tail<3>() = h.cross(xi);
    term.d_inverse_depth = -g.dot(rot * xi) / inverse_depth;
    const double hv = scale * (ii - host_affine.b);
    term.d_target_a = -hv;
    term.d_host_a = hv;
    term.d_target_b = -1.0;
    term.d_host_b = scale;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tracking

namespace {

struct TrackPoint {
  const Keyframe* host;
  const ActivePoint* point;
};

std::vector<TrackPoint> tracking_points(const KeyframeWindow& window) {
  std::vector<TrackPoint> pts;
  for (const Keyframe& kf : window.keyframes) {
    for (const ActivePoint& p : kf.points) pts.push_back({&kf, &p});
  }
  return pts;
}

struct TrackSystem {
  Eigen::Matrix<double, 8, 8> h = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 8, 1> g = Eigen::Matrix<double, 8, 1>::Zero();
  double energy = 0.0;
  int count = 0;
};

TrackSystem track_system(const std::vector<TrackPoint>& pts, const PyramidFrame& frame, int level,
                         const CameraIntrinsics& kl, const RigidTransform3& t_cw, const AffineBrightness& affine,
                         const VoConfig& cfg, bool with_jacobian) {
  TrackSystem sys;
  const Image& target = frame.left_pyramid[level];
  for (const TrackPoint& tp : pts) {
    const RigidTransform3 t_ji = t_cw * tp.host->pose;
    const PointResidual pr = photometric_residual(tp.host->data.left_pyramid[level], target,
                                                  level_pixel(tp.point->pixel, level), tp.point->inverse_depth, t_ji,
                                                  kl, tp.host->left_affine, affine, cfg.huber_gamma, cfg.gradient_c,
                                                  with_jacobian);
    sys.energy += pr.energy;
    sys.count += pr.valid_count;
    if (!with_jacobian) continue;
    for (const PatternResidual& t : pr.terms) {
      if (!t.valid) continue;
      Eigen::Matrix<double, 8, 1> j;
      j.head<6>() = t.d_target_pose;
      j[6] = t.d_target_a;
      j[7] = t.d_target_b;
      const double w = t.weight * huber_weight(t.residual, cfg.huber_gamma);
      sys.h.noalias() += w * j * j.transpose();
      sys.g.noalias() += w * t.residual * j;
    }
  }
  return sys;
}

}  // namespace

TrackResult track_frame(const KeyframeWindow& window, const PyramidFrame& frame, const RigidTransform3& initial_pose,
                        const AffineBrightness& initial_affine) {
  const VoConfig& cfg = window.config;
  TrackResult res;
  res.pose = initial_pose;
  res.affine = initial_affine;
  const std::vector<TrackPoint> pts = tracking_points(window);
  if (pts.empty()) {
    res.lost = true;
    return res;
  }
  const int levels = std::min<int>(static_cast<int>(frame.left_pyramid.size()), cfg.pyramid_levels);

  RigidTransform3 t_cw = initial_pose.inverse();
  AffineBrightness affine = initial_affine;
  bool all_converged = true;

  for (int level = levels - 1; level >= 0; --level) {
    const CameraIntrinsics kl = window.intrinsics.at_level(level);
    TrackSystem sys = track_system(pts, frame, level, kl, t_cw, affine, cfg, true);
    double mu = 1e-4;
    int increases = 0;
    bool converged = false;
    for (int it = 0; it < cfg.max_iterations && !converged; ++it) {
      if (sys.count == 0) break;
      if (sys.energy <= 0.0 || sys.g.cwiseAbs().maxCoeff() == 0.0) {
        converged = true;
        break;
      }
      Eigen::Matrix<double, 8, 8> damped = sys.h;
      for (int d = 0; d < 8; ++d) damped(d, d) += mu * (sys.h(d, d) + 1e-9);
      Eigen::Matrix<double, 8, 1> rhs = -sys.g;
      if (level > 0) {
        // Gain is estimated on the finest level only.
        damped.row(6).setZero();
        damped.col(6).setZero();
        damped(6, 6) = 1.0;
        rhs[6] = 0.0;
      }
      const Eigen::Matrix<double, 8, 1> step = damped.ldlt().solve(rhs);
      if (!step.allFinite()) {
        mu *= 10.0;
        if (++increases >= 5) break;
        continue;
      }
      const RigidTransform3 cand_cw = RigidTransform3::exp(step.head<6>()) * t_cw;
      const AffineBrightness cand_aff{affine.a + step[6], affine.b + step[7]};
      const TrackSystem probe = track_system(pts, frame, level, kl, cand_cw, cand_aff, cfg, false);
      if (probe.count > 0 && probe.energy <= sys.energy) {
        const double rel = (sys.energy - probe.energy) / sys.energy;
        t_cw = cand_cw;
        affine = cand_aff;
        mu = std::max(mu * 0.1, 1e-10);
        increases = 0;
        sys = track_system(pts, frame, level, kl, t_cw, affine, cfg, true);
        if (rel < cfg.convergence_eps) converged = true;
      } else {
        const double rel = probe.count > 0 ? (probe.energy - sys.energy) / sys.energy : kInf;
        if (rel < cfg.convergence_eps) {
          converged = true;
          break;
        }
        mu *= 10.0;
        if (++increases >= 5) break;
      }
    }
    if (sys.count == 0) {
      res.lost = true;
      res.converged = false;
      res.pose = initial_pose;
      res.affine = initial_affine;
      return res;
    }
    all_converged = all_converged && converged;
    if (level == 0) {
      res.energy = sys.energy;
      res.residual_count = sys.count;
    }
  }
  if (res.energy > cfg.huber_gamma * cfg.huber_gamma * res.residual_count) {
    res.lost = true;
    res.converged = false;
    res.pose = initial_pose;
    res.affine = initial_affine;
    return res;
  }
  t_cw.orthonormalize();
  res.pose = t_cw.inverse();
  res.affine = affine;
  res.converged = all_converged;
  return res;
}

double mean_squared_flow(const KeyframeWindow& window, const RigidTransform3& pose) {
  if (window.keyframes.empty()) return kInf;
  const Keyframe& kf = window.keyframes.back();
  const RigidTransform3 t_ji = pose.inverse() * kf.pose;
  double sum = 0.0;
  int n = 0;
  for (const ActivePoint& p : kf.points) {
    const Vec3 xj = t_ji * back_project(window.intrinsics, p.pixel, p.inverse_depth);
    const auto q = project(window.intrinsics, xj);
    if (!q) continue;
    sum += (*q - p.pixel).squaredNorm();
    ++n;
  }
  return n == 0 ? kInf : sum / n;
}

bool needs_keyframe(const KeyframeWindow& window, const RigidTransform3& pose, const AffineBrightness& affine,
                    double flow_threshold, double brightness_threshold) {
  if (window.keyframes.empty()) return true;
  const double rel_a = affine.a - window.keyframes.back().left_affine.a;
  if (std::abs(rel_a) > brightness_threshold) return true;
  return mean_squared_flow(window, pose) > flow_threshold;
}

DepthEstimate fuse_inverse_depth(DepthEstimate a, DepthEstimate b) {
  const double wa = 1.0 / a.variance;
  const double wb = 1.0 / b.variance;
  return {(wa * a.inverse_depth + wb * b.inverse_depth) / (wa + wb), 1.0 / (wa + wb)};
}

int refine_nonkeyframe(KeyframeWindow& window, const PyramidFrame& frame, const RigidTransform3& pose,
                       const AffineBrightness& affine) {
  if (window.keyframes.empty()) return 0;
  const VoConfig& cfg = window.config;
  const CameraIntrinsics& k = window.intrinsics;
  Keyframe& kf = window.keyframes.back();
  const RigidTransform3 t_ji = pose.inverse() * kf.pose;
  const Image& host = kf.data.left_pyramid[0];
  const Image& target = frame.left_pyramid[0];
  int updates = 0;

  auto ssd = [&](const Vec2& px, double d, bool jac, double* grad, double* hess) {
    const PointResidual pr =
        photometric_residual(host, target, px, d, t_ji, k, kf.left_affine, affine, kInf, cfg.gradient_c, jac);
    if (pr.valid_count < kPatternSize) return kInf;
    double e = 0.0;
    if (grad) *grad = 0.0;
    if (hess) *hess = 0.0;
    for (const PatternResidual& t : pr.terms) {
      e += t.residual * t.residual;
      if (grad) *grad += t.d_inverse_depth * t.residual;
      if (hess) *hess += t.d_inverse_depth * t.d_inverse_depth;
    }
    return e;
  };

  for (ActivePoint& p : kf.points) {
    if (p.mature) continue;
    // Pixels per unit inverse depth along the epipolar line.
    const Vec3 ray((p.pixel.x() - k.cx) / k.fx, (p.pixel.y() - k.cy) / k.fy, 1.0);
    const Vec3 a = t_ji.rotation * ray;
    const Vec3 hom = a + t_ji.translation * p.inverse_depth;
    if (!(hom.z() > 0.0)) continue;
    const Vec2 dq(k.fx * (t_ji.translation.x() * hom.z() - hom.x() * t_ji.translation.z()) / (hom.z() * hom.z()),
                  k.fy * (t_ji.translation.y() * hom.z() - hom.y() * t_ji.translation.z()) / (hom.z() * hom.z()));
    const double len = dq.norm();
    if (len < 1e-6) continue;

    const int steps = static_cast<int>(std::ceil(cfg.epipolar_search_px));
    double best_e = kInf, best_d = p.inverse_depth;
    for (int s = -steps; s <= steps; ++s) {
      const double d = p.inverse_depth + s / len;
      if (!(d > 0.0)) continue;
      const double e = ssd(p.pixel, d, false, nullptr, nullptr);
      if (e < best_e) {
        best_e = e;
        best_d = d;
      }
    }
    if (!std::isfinite(best_e)) continue;
    for (int it = 0; it < 10; ++it) {
      double g = 0.0, h = 0.0;
      const double e = ssd(p.pixel, best_d, true, &g, &h);
      if (!(h > 0.0) || !std::isfinite(e)) break;
      const double cand = best_d - g / h;
      if (!(cand > 0.0) || std::abs(cand - best_d) * len > 2.0) break;
      const double ce = ssd(p.pixel, cand, false, nullptr, nullptr);
      if (!(ce <= best_e)) break;
      const double moved = std::abs(cand - best_d);
      best_d = cand;
      best_e = ce;
      if (moved * len < 1e-4) break;
    }
    if (std::sqrt(best_e / kPatternSize) > cfg.epipolar_max_error) continue;

    const double sigma = cfg.epipolar_pixel_sigma / len;
    const DepthEstimate fused =
        fuse_inverse_depth({p.inverse_depth, p.inverse_depth_variance}, {best_d, sigma * sigma});
    if (!(fused.inverse_depth > 0.0)) continue;
    p.inverse_depth = fused.inverse_depth;
    p.inverse_depth_variance = fused.variance;
    ++updates;
  }
  return updates;
}

// ---------------------------------------------------------------------------
// Joint optimisation

namespace {

constexpr int kFrameParams = 10;  // twist, left a, b, right a, b

struct WindowTerm {
  int host = 0;    // keyframe index
  int target = 0;  // keyframe index; equal to host for the static term
  bool stereo = false;
};

double point_energy(const KeyframeWindow& w, int host_index, const ActivePoint& p, double inverse_depth,
                    const std::vector<RigidTransform3>& t_cw) {
  const VoConfig& cfg = w.config;
  const Keyframe& h = w.keyframes[host_index];
  double e = 0.0;
  for (int j = 0; j < static_cast<int>(w.keyframes.size()); ++j) {
    if (j == host_index) continue;
    const Keyframe& t = w.keyframes[j];
    e += photometric_residual(h.data.left_pyramid[0], t.data.left_pyramid[0], p.pixel, inverse_depth,
                              t_cw[j] * h.pose, w.intrinsics, h.left_affine, t.left_affine, cfg.huber_gamma,
                              cfg.gradient_c)
             .energy;
  }
  if (cfg.lambda > 0.0) {
    e += cfg.lambda * photometric_residual(h.data.left_pyramid[0], h.data.frame.right, p.pixel, inverse_depth,
                                           right_from_left(w.intrinsics.baseline), w.intrinsics, h.left_affine,
                                           h.right_affine, cfg.huber_gamma, cfg.gradient_c)
                          .energy;
  }
  return e;
}

std::vector<RigidTransform3> world_to_camera(const KeyframeWindow& w) {
  std::vector<RigidTransform3> out;
  out.reserve(w.keyframes.size());
  for (const Keyframe& kf : w.keyframes) out.push_back(kf.pose.inverse());
  return out;
}

}  // namespace

double window_energy(const KeyframeWindow& window) {
  const std::vector<RigidTransform3> t_cw = world_to_camera(window);
  double e = 0.0;
  for (int h = 0; h < static_cast<int>(window.keyframes.size()); ++h) {
    for (const ActivePoint& p : window.keyframes[h].points) {
      if (p.mature) e += point_energy(window, h, p, p.inverse_depth, t_cw);
    }
  }
  return e;
}

JointResult joint_optimize(KeyframeWindow& window, int iterations) {
  JointResult res;
  const int nkf = static_cast<int>(window.keyframes.size());
  res.initial_energy = res.final_energy = window_energy(window);
  if (nkf < 2) return res;
  const VoConfig& cfg = window.config;
  const CameraIntrinsics& k = window.intrinsics;

  // Column of each frame parameter; the first keyframe's pose and left affine are fixed.
  std::vector<std::array<int, kFrameParams>> col(nkf);
  int nf = 0;
  for (int i = 0; i < nkf; ++i) {
    for (int m = 0; m < kFrameParams; ++m) col[i][m] = (i == 0 && m < 8) ? -1 : nf++;
  }

  struct PointRef {
    int host;
    ActivePoint* point;
  };
  std::vector<PointRef> points;
  for (int h = 0; h < nkf; ++h) {
    for (ActivePoint& p : window.keyframes[h].points) {
      if (p.mature) points.push_back({h, &p});
    }
  }
  if (points.empty()) return res;
  const int np = static_cast<int>(points.size());

  double energy = res.final_energy;
  double mu = 1e-4;
  for (int iter = 0; iter < iterations; ++iter) {
    const std::vector<RigidTransform3> t_cw = world_to_camera(window);
    Eigen::MatrixXd hff = Eigen::MatrixXd::Zero(nf, nf);
    Eigen::VectorXd bf = Eigen::VectorXd::Zero(nf);
    Eigen::MatrixXd hfp = Eigen::MatrixXd::Zero(nf, np);
    Eigen::VectorXd hpp = Eigen::VectorXd::Zero(np);
    Eigen::VectorXd bp = Eigen::VectorXd::Zero(np);

    std::array<int, 2 * kFrameParams> idx{};
    std::array<double, 2 * kFrameParams> jf{};
    for (int n = 0; n < np; ++n) {
      const int hi = points[n].host;
      const ActivePoint& p = *points[n].point;
      const Keyframe& hk = window.keyframes[hi];
      std::vector<WindowTerm> terms;
      for (int j = 0; j < nkf; ++j) {
        if (j != hi) terms.push_back({hi, j, false});
      }
      if (cfg.lambda > 0.0) terms.push_back({hi, hi, true});

      for (const WindowTerm& wt : terms) {
        const Keyframe& tk = window.keyframes[wt.target];
        const PointResidual pr =
            wt.stereo ? photometric_residual(hk.data.left_pyramid[0], hk.data.frame.right, p.pixel, p.inverse_depth,
                                             right_from_left(k.baseline), k, hk.left_affine, hk.right_affine,
                                             cfg.huber_gamma, cfg.gradient_c, true)
                      : photometric_residual(hk.data.left_pyramid[0], tk.data.left_pyramid[0], p.pixel,
                                             p.inverse_depth, t_cw[wt.target] * hk.pose, k, hk.left_affine,
                                             tk.left_affine, cfg.huber_gamma, cfg.gradient_c, true);
        const double coupling = wt.stereo ? cfg.lambda : 1.0;
        for (const PatternResidual& t : pr.terms) {
          if (!t.valid) continue;
          int m = 0;
          if (wt.stereo) {
            idx[m] = col[hi][6], jf[m++] = t.d_host_a;
            idx[m] = col[hi][7], jf[m++] = t.d_host_b;
            idx[m] = col[hi][8], jf[m++] = t.d_target_a;
            idx[m] = col[hi][9], jf[m++] = t.d_target_b;
          } else {
            for (int q = 0; q < 6; ++q) {
              idx[m] = col[hi][q], jf[m++] = t.d_host_pose[q];
              idx[m] = col[wt.target][q], jf[m++] = t.d_target_pose[q];
            }
            idx[m] = col[hi][6], jf[m++] = t.d_host_a;
            idx[m] = col[hi][7], jf[m++] = t.d_host_b;
            idx[m] = col[wt.target][6], jf[m++] = t.d_target_a;
            idx[m] = col[wt.target][7], jf[m++] = t.d_target_b;
          }
          const double w = coupling * t.weight * huber_weight(t.residual, cfg.huber_gamma);
          const double jp = t.d_inverse_depth;
          for (int a = 0; a < m; ++a) {
            if (idx[a] < 0) continue;
            bf[idx[a]] += w * jf[a] * t.residual;
            hfp(idx[a], n) += w * jf[a] * jp;
            for (int b = 0; b < m; ++b) {
              if (idx[b] >= 0) hff(idx[a], idx[b]) += w * jf[a] * jf[b];
            }
          }
          hpp[n] += w * jp * jp;
          bp[n] += w * jp * t.residual;
        }
      }
    }

    const double grad_max = std::max(bf.size() ? bf.cwiseAbs().maxCoeff() : 0.0, bp.cwiseAbs().maxCoeff());
    if (energy <= 0.0 || grad_max < 1e-12) break;

    bool accepted = false;
    for (int attempt = 0; attempt <= 5 && !accepted; ++attempt) {
      Eigen::MatrixXd s = hff;
      for (int d = 0; d < nf; ++d) s(d, d) += mu * (hff(d, d) + 1e-9);
      Eigen::VectorXd rhs = -bf;
      Eigen::VectorXd hpp_d(np);
      for (int n = 0; n < np; ++n) {
        hpp_d[n] = hpp[n] * (1.0 + mu) + 1e-12;
        s.noalias() -= hfp.col(n) * (hfp.col(n).transpose() / hpp_d[n]);
        rhs.noalias() += hfp.col(n) * (bp[n] / hpp_d[n]);
      }
      Eigen::VectorXd df = Eigen::VectorXd::Zero(nf);
      if (nf > 0) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
        if (ldlt.info() != Eigen::Success) {
          mu *= 10.0;
          continue;
        }
        df = ldlt.solve(rhs);
      }
      Eigen::VectorXd dp(np);
      for (int n = 0; n < np; ++n) dp[n] = -(bp[n] + hfp.col(n).dot(df)) / hpp_d[n];
      if (!df.allFinite() || !dp.allFinite()) {
        mu *= 10.0;
        continue;
      }

      // Trial state.
      std::vector<RigidTransform3> poses;
      std::vector<std::array<AffineBrightness, 2>> aff;
      for (int i = 0; i < nkf; ++i) {
        const Keyframe& kf = window.keyframes[i];
        Vec6 xi = Vec6::Zero();
        for (int q = 0; q < 6; ++q) {
          if (col[i][q] >= 0) xi[q] = df[col[i][q]];
        }
        RigidTransform3 cw = RigidTransform3::exp(xi) * kf.pose.inverse();
        cw.orthonormalize();
        poses.push_back(cw.inverse());
        auto add = [&](int q, double v) { return col[i][q] >= 0 ? v + df[col[i][q]] : v; };
        aff.push_back({AffineBrightness{add(6, kf.left_affine.a), add(7, kf.left_affine.b)},
                       AffineBrightness{add(8, kf.right_affine.a), add(9, kf.right_affine.b)}});
      }
      std::vector<RigidTransform3> old_poses;
      std::vector<std::array<AffineBrightness, 2>> old_aff;
      for (int i = 0; i < nkf; ++i) {
        Keyframe& kf = window.keyframes[i];
        old_poses.push_back(kf.pose);
        old_aff.push_back({kf.left_affine, kf.right_affine});
        kf.pose = poses[i];
        kf.left_affine = aff[i][0];
        kf.right_affine = aff[i][1];
      }
      std::vector<double> old_depth(np);
      for (int n = 0; n < np; ++n) {
        old_depth[n] = points[n].point->inverse_depth;
        const double nd = old_depth[n] + dp[n];
        points[n].point->inverse_depth = nd > 0.0 ? nd : 0.1 * old_depth[n];
      }
      const double new_energy = window_energy(window);
      if (new_energy <= energy) {
        accepted = true;
        const double rel = (energy - new_energy) / energy;
        energy = new_energy;
        mu = std::max(mu * 0.1, 1e-10);
        ++res.accepted_iterations;
        double step_max = df.size() ? df.cwiseAbs().maxCoeff() : 0.0;
        step_max = std::max(step_max, dp.cwiseAbs().maxCoeff());
        res.max_update = std::max(res.max_update, step_max);
        if (rel < cfg.convergence_eps) iter = iterations;
      } else {
        for (int i = 0; i < nkf; ++i) {
          Keyframe& kf = window.keyframes[i];
          kf.pose = old_poses[i];
          kf.left_affine = old_aff[i][0];
          kf.right_affine = old_aff[i][1];
        }
        for (int n = 0; n < np; ++n) points[n].point->inverse_depth = old_depth[n];
        mu *= 10.0;
      }
    }
    if (!accepted) break;
  }
  res.final_energy = energy;
  return res;
}

std::optional<int> marginalize(KeyframeWindow& window) {
  const int n = static_cast<int>(window.keyframes.size());
  if (n <= window.config.window_size || n < 3) return std::nullopt;
  auto dist = [&](int a, int b) {
    return (window.keyframes[a].pose.translation - window.keyframes[b].pose.translation).norm();
  };
  constexpr double kEps = 1e-6;
  int drop = 0;
  double best = -1.0;
  for (int i = 0; i < n - 2; ++i) {
    double inv_sum = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j != i) inv_sum += 1.0 / (dist(i, j) + kEps);
    }
    const double score = std::sqrt(dist(i, n - 1)) * inv_sum;
    if (score > best) {
      best = score;
      drop = i;
    }
  }
  const int dropped_id = window.keyframes[drop].id;
  window.keyframes.erase(window.keyframes.begin() + drop);

  // Points that neither of the two newest keyframes can see.
  const int m = static_cast<int>(window.keyframes.size());
  const Keyframe& last = window.keyframes[m - 1];
  const Keyframe& prev = window.keyframes[m - 2];
  const CameraIntrinsics& k = window.intrinsics;
  auto visible = [&](const Keyframe& host, const ActivePoint& p, const Keyframe& view) {
    if (&host == &view) return true;
    const Vec3 x = view.pose.inverse() * (host.pose * back_project(k, p.pixel, p.inverse_depth));
    const auto q = project(k, x);
    return q && q->x() >= 0.0 && q->y() >= 0.0 && q->x() <= k.width - 1 && q->y() <= k.height - 1;
  };
  for (Keyframe& kf : window.keyframes) {
    std::erase_if(kf.points,
                  [&](const ActivePoint& p) { return !visible(kf, p, last) && !visible(kf, p, prev); });
  }
  return dropped_id;
}

PlanarVelocity emit_velocity(const KeyframeWindow& window) {
  const int n = static_cast<int>(window.keyframes.size());
  if (n < 2) throw std::invalid_argument("emit_velocity: at least two keyframes required");
  const Keyframe& older = window.keyframes[n - 2];
  const Keyframe& newer = window.keyframes[n - 1];
  return velocity_from_relative(relative_transform(older.pose, newer.pose), newer.timestamp() - older.timestamp());
}

std::vector<ActivePoint> initialize_points(const PyramidFrame& frame, int host_id, const CameraIntrinsics& k,
                                           const VoConfig& cfg) {
  std::vector<ActivePoint> out;
  const Image& left = frame.left_pyramid[0];
  const StereoParams sp{cfg.stereo_max_sad, cfg.stereo_min_contrast};
  const double sigma = cfg.stereo_disparity_sigma / (k.fx * k.baseline);
  for (const Vec2& px : select_candidate_points(left, cfg.block_rows, cfg.block_cols, cfg.g_const,
                                                std::max(cfg.border, 3))) {
    const auto d = static_stereo_depth(left, frame.frame.right, px, k, cfg.stereo_search_range, sp);
    if (!d) continue;
    ActivePoint p;
    p.host_keyframe = host_id;
    p.pixel = px;
    p.inverse_depth = *d;
    p.inverse_depth_variance = sigma * sigma;
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------

StereoOdometry::StereoOdometry(const CameraIntrinsics& k, const VoConfig& cfg) {
  k.validate();
  cfg.validate();
  window_.intrinsics = k;
  window_.config = cfg;
}

void StereoOdometry::add_keyframe(PyramidFrame frame, const RigidTransform3& pose, const AffineBrightness& affine) {
  for (Keyframe& kf : window_.keyframes) {
    for (ActivePoint& p : kf.points) p.mature = true;
  }
  Keyframe kf;
  kf.id = window_.next_keyframe_id++;
  kf.pose = pose;
  kf.left_affine = affine;
  kf.right_affine = affine;
  kf.points = initialize_points(frame, kf.id, window_.intrinsics, window_.config);
  kf.data = std::move(frame);
  window_.keyframes.push_back(std::move(kf));
}

FrameResult StereoOdometry::process(FrameData frame) {
  FrameResult res;
  res.frame_index = frame_index_++;
  res.timestamp = frame.timestamp;
  if (!window_.keyframes.empty() && !(frame.timestamp > window_.keyframes.back().timestamp())) {
    throw std::invalid_argument("stereo odometry: timestamps must increase");
  }
  PyramidFrame pf = PyramidFrame::build(std::move(frame), window_.config.pyramid_levels);

  if (window_.keyframes.empty()) {
    add_keyframe(std::move(pf), RigidTransform3::identity(), {});
    res.is_keyframe = true;
    last_pose_ = RigidTransform3::identity();
    return res;
  }

  RigidTransform3 guess = *last_pose_;
  if (prev_pose_) guess = *last_pose_ * (prev_pose_->inverse() * *last_pose_);
  const TrackResult tr = track_frame(window_, pf, guess, last_affine_);
  RigidTransform3 pose = tr.pose;
  AffineBrightness affine = tr.affine;
  if (tr.lost) {
    pose = guess;
    affine = last_affine_;
    res.tracking_lost = true;
  }

  const VoConfig& cfg = window_.config;
  if (tr.lost || needs_keyframe(window_, pose, affine, cfg.flow_threshold, cfg.brightness_threshold)) {
    add_keyframe(std::move(pf), pose, affine);
    joint_optimize(window_, cfg.joint_iterations);
    marginalize(window_);
    const Keyframe& latest = window_.keyframes.back();
    pose = latest.pose;
    affine = latest.left_affine;
    res.is_keyframe = true;
    res.velocity = emit_velocity(window_);
  } else {
    refine_nonkeyframe(window_, pf, pose, affine);
  }
  res.pose = pose;
  res.affine = affine;
  prev_pose_ = last_pose_;
  last_pose_ = pose;
  last_affine_ = affine;
  return res;
}

}  // namespace nbslam::vo
