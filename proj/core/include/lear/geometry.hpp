#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "lear/image.hpp"
#include "lear/rng.hpp"

namespace lear {

// Pinhole model. Pixel (u, v) = (fx*x/z + cx, fy*y/z + cy); integer pixel
// coordinates address pixel centres.
struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  std::int64_t width = 0, height = 0;

  void validate() const;
  Eigen::Vector2d project(const Eigen::Vector3d& p_cam) const {
    return {fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy};
  }
  Eigen::Vector3d back_project(double u, double v, double z) const {
    return {(u - cx) / fx * z, (v - cy) / fy * z, z};
  }
  bool in_frame(const Eigen::Vector2d& px) const {
    return px.x() >= 0 && px.x() <= static_cast<double>(width - 1) && px.y() >= 0 &&
           px.y() <= static_cast<double>(height - 1);
  }
};

// Rigid transform, world-to-camera convention: p_cam = R * p_world + t.
struct PoseSE3 {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  void validate() const;  // orthonormal within 1e-9, det +1
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }
  PoseSE3 inverse() const {
    PoseSE3 inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(rotation.transpose() * translation);
    return inv;
  }
  // this ∘ other: (this.compose(other)).apply(p) == this.apply(other.apply(p))
  PoseSE3 compose(const PoseSE3& other) const {
    PoseSE3 out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }
  Eigen::Matrix4d matrix() const;
  static PoseSE3 from_matrix(const Eigen::Matrix4d& m);
};

// Rodrigues exponential of an axis-angle vector.
Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega);

struct PointCloud {
  std::vector<Eigen::Vector3d> points;  // meters, world frame

  void validate() const;  // all coordinates finite
};

constexpr double kMinDepth = 0.1;  // meters; closer points are culled

// Z-buffer render: each point with camera-frame z > z_min splats to its
// round-to-nearest pixel; smallest depth wins, ties go to the smaller point
// index. Pixels with no point hold 0.
Image render_depth(const PointCloud& cloud, const PoseSE3& pose,
                   const CameraIntrinsics& K, double z_min = kMinDepth);

// Same render but also reports the winning point index per pixel (-1 where
// empty).
struct DepthRender {
  Image depth;
  std::vector<std::int64_t> winner;  // point index per pixel
};
DepthRender render_depth_with_winners(const PointCloud& cloud, const PoseSE3& pose,
                                      const CameraIntrinsics& K,
                                      double z_min = kMinDepth);

// Ground-truth flow on the T_init projection grid: at each pixel owned by a
// z-buffer winner, flow = project(T_gt, point) - project(T_init, point).
// Targets that leave the frame stay valid; points behind the T_gt camera are
// invalidated.
FlowField gt_flow(const PointCloud& cloud, const PoseSE3& t_gt, const PoseSE3& t_init,
                  const CameraIntrinsics& K);

// Ground-truth edge map in the T_init frame: dilate the T_gt-aligned depth
// (3x3 max over nonzero entries, one pass), back-project every event pixel
// with dilated depth into 3D, reproject it through T_init ∘ T_gt^-1 and mark
// the landing pixel.
Image gt_edge_map(const Image& event_image, const Image& depth_gt, const PoseSE3& t_gt,
                  const PoseSE3& t_init, const CameraIntrinsics& K);

// 3x3 max-over-nonzero dilation used by gt_edge_map, exposed for tests.
Image dilate_nonzero_max(const Image& in, int iterations = 1);

// Independent perturbation of translation (each axis uniform in
// [-range, +range] cm) and rotation (per-axis Euler angles uniform in
// [-range, +range] deg, composed Rz*Ry*Rx and left-applied). Deterministic in
// the seed.
PoseSE3 perturb_pose(const PoseSE3& t_gt, std::uint64_t seed, double trans_range_cm,
                     double rot_range_deg);

// (translation error in cm, geodesic rotation error in degrees).
std::pair<double, double> pose_error(const PoseSE3& pred, const PoseSE3& gt);

// ---- persistence ----
// Point cloud: ASCII "x y z" per line, or binary magic "LEARPC01" + u64 count
// + f32 triplets (chosen by extension: .xyz -> text, otherwise binary).
void save_cloud(const PointCloud& cloud, const std::string& path);
PointCloud load_cloud(const std::string& path);

// Pose file: 4x4 row-major matrices, 4 lines of 4 values per pose, blocks
// separated by blank lines. World-to-camera convention.
void save_poses(const std::vector<PoseSE3>& poses, const std::string& path);
std::vector<PoseSE3> load_poses(const std::string& path);

// Intrinsics file: single line "fx fy cx cy W H".
void save_intrinsics(const CameraIntrinsics& K, const std::string& path);
CameraIntrinsics load_intrinsics(const std::string& path);

}  // namespace lear
