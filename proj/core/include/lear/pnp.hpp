#pragma once

#include <cstdint>
#include <vector>

#include "lear/geometry.hpp"

namespace lear {

// One 2D-3D correspondence: the observed target pixel (source pixel + flow)
// and the source pixel back-projected through its depth.
struct Correspondence {
  Eigen::Vector2d pixel_2d;  // observation in the target frame
  Eigen::Vector3d point_3d;  // camera frame of the initial pose
  std::int64_t src_u = 0, src_v = 0;
};

// Builds correspondences at every pixel with nonzero depth. Observations that
// leave the frame by more than 20 px are dropped.
std::vector<Correspondence> extract_correspondences(const Image& depth,
                                                    const FlowField& flow,
                                                    const CameraIntrinsics& K);

struct RansacResult {
  PoseSE3 pose;  // maps the 3D points' frame into the observation camera frame
  std::vector<std::uint8_t> inlier_mask;
  int iterations = 0;
  double inlier_ratio = 0.0;
  // Huber cost over the accepted inlier set before/after LM refinement.
  double pre_refine_cost = 0.0;
  double post_refine_cost = 0.0;
};

// Minimal P3P hypotheses (Grunert's distance formulation) on seeded 3-point
// samples, a 4th point for disambiguation, adaptive iteration count at the
// given confidence, then Levenberg-Marquardt over the inliers minimizing
// Huber-robustified reprojection error (scale 1 px). Deterministic in `seed`.
// Throws Error("pose_unrecoverable") with diagnostics when fewer than 4
// correspondences exist or no valid model is found.
RansacResult ransac_pnp(const std::vector<Correspondence>& corrs,
                        const CameraIntrinsics& K, double reproj_threshold = 12.0,
                        double confidence = 0.99, int max_iters = 10000,
                        std::uint64_t seed = 0);

// Up to four (R, t) solutions mapping points into the camera frame of the
// three bearings. Exposed for the oracle tests.
std::vector<PoseSE3> p3p_solve(const std::array<Eigen::Vector3d, 3>& bearings,
                               const std::array<Eigen::Vector3d, 3>& points);

// Huber-robustified reprojection cost (scale 1 px) of `pose` over the
// correspondences; used by tests to verify refinement never increases it.
double robust_reprojection_cost(const PoseSE3& pose,
                                const std::vector<Correspondence>& corrs,
                                const CameraIntrinsics& K,
                                const std::vector<std::uint8_t>& mask);

}  // namespace lear
