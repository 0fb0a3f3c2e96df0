#include "lear/pnp.hpp"

#include <algorithm>
#include <cmath>

namespace lear {
namespace {

constexpr double kHuberScale = 1.0;  // px
constexpr double kDegenerateAngleDeg = 1.0;

// Real roots of c4 x^4 + c3 x^3 + c2 x^2 + c1 x + c0 via the companion
// matrix, degrading gracefully to lower degrees.
std::vector<double> real_poly_roots(std::array<double, 5> c) {
  int degree = 4;
  double max_abs = 0.0;
  for (const double v : c) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs == 0.0) return {};
  while (degree > 0 && std::abs(c[static_cast<std::size_t>(degree)]) < 1e-13 * max_abs)
    --degree;
  if (degree < 1) return {};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  const double lead = c[static_cast<std::size_t>(degree)];
  for (int i = 0; i < degree; ++i) {
    companion(0, i) = -c[static_cast<std::size_t>(degree - 1 - i)] / lead;
    if (i + 1 < degree) companion(i + 1, i) = 1.0;
  }
  const Eigen::EigenSolver<Eigen::MatrixXd> solver(companion);
  std::vector<double> roots;
  for (int i = 0; i < degree; ++i) {
    const auto root = solver.eigenvalues()(i);
    if (std::abs(root.imag()) < 1e-6 * (1.0 + std::abs(root.real())))
      roots.push_back(root.real());
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

// Exact rigid alignment of three non-collinear point pairs via orthonormal
// triads: returns R, t with q_i = R p_i + t.
bool align_three(const std::array<Eigen::Vector3d, 3>& p,
                 const std::array<Eigen::Vector3d, 3>& q, PoseSE3& out) {
  const auto triad = [](const std::array<Eigen::Vector3d, 3>& x, Eigen::Matrix3d& basis) {
    const Eigen::Vector3d e1 = x[1] - x[0];
    if (e1.norm() < 1e-12) return false;
    const Eigen::Vector3d u1 = e1.normalized();
    Eigen::Vector3d e2 = x[2] - x[0];
    e2 -= e2.dot(u1) * u1;
    if (e2.norm() < 1e-12) return false;
    const Eigen::Vector3d u2 = e2.normalized();
    basis.col(0) = u1;
    basis.col(1) = u2;
    basis.col(2) = u1.cross(u2);
    return true;
  };
  Eigen::Matrix3d bp, bq;
  if (!triad(p, bp) || !triad(q, bq)) return false;
  out.rotation = bq * bp.transpose();
  out.translation = q[0] - out.rotation * p[0];
  return true;
}

double huber_cost(double err) {
  if (err <= kHuberScale) return 0.5 * err * err;
  return kHuberScale * (err - 0.5 * kHuberScale);
}

struct Reprojection {
  Eigen::Vector2d residual;
  Eigen::Vector3d p_cam;
  bool in_front = false;
};

Reprojection reproject(const PoseSE3& pose, const Correspondence& c,
                       const CameraIntrinsics& K) {
  Reprojection r;
  r.p_cam = pose.apply(c.point_3d);
  if (r.p_cam.z() <= kMinDepth) return r;
  r.in_front = true;
  r.residual = K.project(r.p_cam) - c.pixel_2d;
  return r;
}

// One robust Gauss-Newton/LM pass over the masked correspondences. Only
// cost-decreasing steps are accepted, so the robust cost is non-increasing.
PoseSE3 refine_lm(PoseSE3 pose, const std::vector<Correspondence>& corrs,
                  const CameraIntrinsics& K, const std::vector<std::uint8_t>& mask) {
  const auto cost_of = [&](const PoseSE3& p) {
    double cost = 0.0;
    for (std::size_t i = 0; i < corrs.size(); ++i) {
      if (!mask[i]) continue;
      const auto r = reproject(p, corrs[i], K);
      cost += r.in_front ? huber_cost(r.residual.norm()) : huber_cost(1e3);
    }
    return cost;
  };
  double lambda = 1e-3;
  double cost = cost_of(pose);
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t i = 0; i < corrs.size(); ++i) {
      if (!mask[i]) continue;
      const auto r = reproject(pose, corrs[i], K);
      if (!r.in_front) continue;
      const double err = r.residual.norm();
      const double w = err <= kHuberScale ? 1.0 : kHuberScale / err;
      const double x = r.p_cam.x(), y = r.p_cam.y(), z = r.p_cam.z();
      Eigen::Matrix<double, 2, 3> proj;
      proj << K.fx / z, 0, -K.fx * x / (z * z), 0, K.fy / z, -K.fy * y / (z * z);
      Eigen::Matrix<double, 3, 6> point;  // d(exp(w,t) p)/d(w,t) at 0: [-[p]x | I]
      point << 0, z, -y, 1, 0, 0, -z, 0, x, 0, 1, 0, y, -x, 0, 0, 0, 1;
      const Eigen::Matrix<double, 2, 6> jac = proj * point;
      h += w * jac.transpose() * jac;
      g += w * jac.transpose() * r.residual;
    }
    Eigen::Matrix<double, 6, 6> damped = h;
    for (int d = 0; d < 6; ++d) damped(d, d) += lambda * std::max(h(d, d), 1e-12);
    const Eigen::Matrix<double, 6, 1> delta = damped.ldlt().solve(-g);
    if (!delta.allFinite()) break;
    PoseSE3 trial;
    const Eigen::Matrix3d dr = so3_exp(delta.head<3>());
    trial.rotation = dr * pose.rotation;
    trial.translation = dr * pose.translation + delta.tail<3>();
    const double trial_cost = cost_of(trial);
    if (trial_cost < cost) {
      pose = trial;
      const double improvement = cost - trial_cost;
      cost = trial_cost;
      lambda = std::max(lambda / 10.0, 1e-12);
      if (delta.norm() < 1e-14 || improvement < 1e-16 * (1.0 + cost)) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e10) break;
    }
  }
  return pose;
}

}  // namespace

std::vector<PoseSE3> p3p_solve(const std::array<Eigen::Vector3d, 3>& bearings,
                               const std::array<Eigen::Vector3d, 3>& points) {
  const Eigen::Vector3d f1 = bearings[0].normalized();
  const Eigen::Vector3d f2 = bearings[1].normalized();
  const Eigen::Vector3d f3 = bearings[2].normalized();
  const double a = (points[1] - points[2]).norm();
  const double b = (points[0] - points[2]).norm();
  const double c = (points[0] - points[1]).norm();
  if (a < 1e-9 || b < 1e-9 || c < 1e-9) return {};
  const double p = 2.0 * f2.dot(f3);
  const double q = 2.0 * f1.dot(f3);
  const double r = 2.0 * f1.dot(f2);
  const double k1 = (a * a) / (b * b);
  const double k2 = (c * c) / (b * b);

  // u = N(v)/D(v) from the difference of the distance equations; substituting
  // back yields the quartic N^2 - r N D + M D^2 = 0.
  const double n2 = (k1 - k2) - 1.0, n1 = -(k1 - k2) * q, n0 = (k1 - k2) + 1.0;
  const double m2 = -k2, m1 = k2 * q, m0 = 1.0 - k2;
  const double d1 = -p, d0 = r;  // D(v) = d1 v + d0

  std::array<double, 5> quartic{};
  // N^2
  quartic[4] += n2 * n2;
  quartic[3] += 2 * n2 * n1;
  quartic[2] += 2 * n2 * n0 + n1 * n1;
  quartic[1] += 2 * n1 * n0;
  quartic[0] += n0 * n0;
  // - r * N * D
  quartic[3] += -r * n2 * d1;
  quartic[2] += -r * (n2 * d0 + n1 * d1);
  quartic[1] += -r * (n1 * d0 + n0 * d1);
  quartic[0] += -r * n0 * d0;
  // + M * D^2
  const double dd2 = d1 * d1, dd1 = 2 * d1 * d0, dd0 = d0 * d0;
  quartic[4] += m2 * dd2;
  quartic[3] += m2 * dd1 + m1 * dd2;
  quartic[2] += m2 * dd0 + m1 * dd1 + m0 * dd2;
  quartic[1] += m1 * dd0 + m0 * dd1;
  quartic[0] += m0 * dd0;

  std::vector<PoseSE3> solutions;
  for (const double v : real_poly_roots(quartic)) {
    if (v <= 0.0) continue;
    const double denom = d1 * v + d0;
    if (std::abs(denom) < 1e-12) continue;
    const double u = (n2 * v * v + n1 * v + n0) / denom;
    if (u <= 0.0) continue;
    const double s1_sq = 1.0 + v * v - v * q;
    if (s1_sq <= 1e-15) continue;
    const double s1 = b / std::sqrt(s1_sq);
    const double s2 = u * s1;
    const double s3 = v * s1;
    if (s1 <= kMinDepth * 1e-3 || s2 <= 0 || s3 <= 0) continue;
    const std::array<Eigen::Vector3d, 3> cam_pts{s1 * f1, s2 * f2, s3 * f3};
    PoseSE3 pose;
    if (align_three(points, cam_pts, pose)) solutions.push_back(pose);
  }
  return solutions;
}

std::vector<Correspondence> extract_correspondences(const Image& depth,
                                                    const FlowField& flow,
                                                    const CameraIntrinsics& K) {
  if (depth.height != flow.height || depth.width != flow.width)
    throw Error("shape", "extract_correspondences: depth and flow extents differ");
  if (depth.height != K.height || depth.width != K.width)
    throw Error("shape", "extract_correspondences: rasters do not match intrinsics");
  std::vector<Correspondence> out;
  const double margin = 20.0;
  for (std::int64_t v = 0; v < depth.height; ++v) {
    for (std::int64_t u = 0; u < depth.width; ++u) {
      const float z = depth.at(v, u);
      if (z <= 0.f) continue;
      const std::size_t at = static_cast<std::size_t>(v * depth.width + u);
      const double ou = static_cast<double>(u) + static_cast<double>(flow.dx[at]);
      const double ov = static_cast<double>(v) + static_cast<double>(flow.dy[at]);
      if (ou < -margin || ou > static_cast<double>(K.width - 1) + margin ||
          ov < -margin || ov > static_cast<double>(K.height - 1) + margin)
        continue;
      Correspondence c;
      c.pixel_2d = Eigen::Vector2d(ou, ov);
      c.point_3d = K.back_project(static_cast<double>(u), static_cast<double>(v),
                                  static_cast<double>(z));
      c.src_u = u;
      c.src_v = v;
      out.push_back(c);
    }
  }
  return out;
}

double robust_reprojection_cost(const PoseSE3& pose,
                                const std::vector<Correspondence>& corrs,
                                const CameraIntrinsics& K,
                                const std::vector<std::uint8_t>& mask) {
  double cost = 0.0;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    if (!mask[i]) continue;
    const auto r = reproject(pose, corrs[i], K);
    cost += r.in_front ? huber_cost(r.residual.norm()) : huber_cost(1e3);
  }
  return cost;
}

RansacResult ransac_pnp(const std::vector<Correspondence>& corrs,
                        const CameraIntrinsics& K, double reproj_threshold,
                        double confidence, int max_iters, std::uint64_t seed) {
  const std::size_t n = corrs.size();
  if (n < 4) {
    throw Error("pose_unrecoverable",
                "ransac_pnp: need at least 4 correspondences, have " + std::to_string(n));
  }
  Rng rng(Rng::mix(seed, 0x9a5c));
  const double sin_degenerate =
      std::sin(kDegenerateAngleDeg * 3.141592653589793238462643383279502884 / 180.0);

  PoseSE3 best_pose;
  std::int64_t best_inliers = -1;
  int degenerate_solves = 0;
  int iterations_run = 0;
  int needed = max_iters;

  const auto count_inliers = [&](const PoseSE3& pose) {
    std::int64_t count = 0;
    for (const auto& c : corrs) {
      const auto r = reproject(pose, c, K);
      if (r.in_front && r.residual.norm() < reproj_threshold) ++count;
    }
    return count;
  };

  for (int it = 0; it < needed && it < max_iters; ++it) {
    ++iterations_run;
    // four distinct indices
    std::array<std::size_t, 4> pick{};
    for (int k = 0; k < 4;) {
      const std::size_t idx = static_cast<std::size_t>(rng.uniform_int(n));
      bool dup = false;
      for (int j = 0; j < k; ++j) dup = dup || pick[static_cast<std::size_t>(j)] == idx;
      if (!dup) pick[static_cast<std::size_t>(k++)] = idx;
    }
    const std::array<Eigen::Vector3d, 3> pts{corrs[pick[0]].point_3d,
                                             corrs[pick[1]].point_3d,
                                             corrs[pick[2]].point_3d};
    // reject near-collinear minimal samples
    const Eigen::Vector3d e1 = pts[1] - pts[0];
    const Eigen::Vector3d e2 = pts[2] - pts[0];
    const double denom = e1.norm() * e2.norm();
    if (denom < 1e-12 || e1.cross(e2).norm() < sin_degenerate * denom) {
      ++degenerate_solves;
      continue;
    }
    const auto bearing = [&](std::size_t i) {
      return Eigen::Vector3d((corrs[i].pixel_2d.x() - K.cx) / K.fx,
                             (corrs[i].pixel_2d.y() - K.cy) / K.fy, 1.0)
          .normalized();
    };
    const std::array<Eigen::Vector3d, 3> bearings{bearing(pick[0]), bearing(pick[1]),
                                                  bearing(pick[2])};
    const auto candidates = p3p_solve(bearings, pts);
    if (candidates.empty()) {
      ++degenerate_solves;
      continue;
    }
    // disambiguate with the 4th point
    const Correspondence& fourth = corrs[pick[3]];
    const PoseSE3* chosen = nullptr;
    double best_err4 = std::numeric_limits<double>::infinity();
    for (const auto& cand : candidates) {
      const auto r = reproject(cand, fourth, K);
      const double err = r.in_front ? r.residual.norm() : 1e12;
      if (err < best_err4) {
        best_err4 = err;
        chosen = &cand;
      }
    }
    const std::int64_t inliers = count_inliers(*chosen);
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best_pose = *chosen;
      const double w =
          static_cast<double>(inliers) / static_cast<double>(n);
      if (w > 0.0 && w < 1.0) {
        const double denom_p = std::log(1.0 - std::pow(w, 4));
        if (denom_p < 0.0) {
          const int adaptive = static_cast<int>(
              std::ceil(std::log(1.0 - confidence) / denom_p));
          needed = std::clamp(adaptive, 32, max_iters);
        }
      } else if (w >= 1.0) {
        needed = std::min(needed, it + 1);
      }
    }
  }

  if (best_inliers < 4) {
    throw Error("pose_unrecoverable",
                "ransac_pnp: no valid model (" + std::to_string(iterations_run) +
                    " iterations, " + std::to_string(degenerate_solves) +
                    " degenerate samples, best inliers " +
                    std::to_string(std::max<std::int64_t>(best_inliers, 0)) + " of " +
                    std::to_string(n) + ")");
  }

  // refine over the RANSAC inliers
  RansacResult res;
  res.iterations = iterations_run;
  std::vector<std::uint8_t> mask(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = reproject(best_pose, corrs[i], K);
    mask[i] = r.in_front && r.residual.norm() < reproj_threshold;
  }
  PoseSE3 refined = refine_lm(best_pose, corrs, K, mask);
  // Trimmed polish: the 12 px consensus band can admit a few gross outliers
  // whose bounded Huber pull still biases the optimum. Re-fit on the members
  // within max(3 * median residual, Huber scale) and keep the wider set for
  // the reported mask.
  {
    std::vector<double> residuals;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      const auto r = reproject(refined, corrs[i], K);
      residuals.push_back(r.in_front ? r.residual.norm() : 1e12);
    }
    std::vector<double> sorted = residuals;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double med = sorted[sorted.size() / 2];
    const double trim = std::min(reproj_threshold, std::max(3.0 * med, kHuberScale));
    std::vector<std::uint8_t> trimmed(n, 0);
    std::int64_t kept = 0;
    std::size_t ri = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      trimmed[i] = residuals[ri++] <= trim;
      kept += trimmed[i];
    }
    if (kept < 4) trimmed = mask;
    res.pre_refine_cost = robust_reprojection_cost(refined, corrs, K, trimmed);
    refined = refine_lm(refined, corrs, K, trimmed);
    res.post_refine_cost = robust_reprojection_cost(refined, corrs, K, trimmed);
  }
  res.pose = refined;
  // report the inlier set of the refined model
  res.inlier_mask.assign(n, 0);
  std::int64_t final_inliers = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = reproject(res.pose, corrs[i], K);
    const bool in = r.in_front && r.residual.norm() < reproj_threshold;
    res.inlier_mask[i] = in;
    final_inliers += in;
  }
  res.inlier_ratio = static_cast<double>(final_inliers) / static_cast<double>(n);
  return res;
}

}  // namespace lear
