#pragma once

#include <cstdint>
#include <vector>

#include "lear/events.hpp"
#include "lear/geometry.hpp"

namespace lear {

struct SceneParams {
  int n_primitives = 6;          // backdrop plane + boxes/cylinders
  double extent_m = 4.0;         // half-extent of the layout region
  double points_per_m2 = 400.0;  // surface sampling density
  double crease_density_factor = 6.0;  // crease linear density vs sqrt(density)
  int n_keyframes = 16;          // trajectory keyframes (segments = n-1)
  std::uint64_t frame_interval_us = 100000;  // 10 Hz keyframes
  double orbit_step_deg = 2.0;   // camera orbit advance per keyframe
  double salt_noise_rate = 0.0;  // uniform noise events per pixel per window
};

// A generated world: full point cloud (surface points first, then crease
// points), a camera trajectory, and the seed that reproduces it.
struct SyntheticScene {
  PointCloud cloud;
  std::size_t crease_begin = 0;  // points[crease_begin..) sample creases
  std::vector<std::pair<std::uint64_t, PoseSE3>> trajectory;  // (t_us, pose)
  std::uint64_t seed = 0;
  SceneParams params;

  PointCloud crease_cloud() const {
    PointCloud c;
    c.points.assign(cloud.points.begin() + static_cast<std::ptrdiff_t>(crease_begin),
                    cloud.points.end());
    return c;
  }
};

// Deterministic scene: parametric primitives (planes, boxes, cylinders) with
// crease edges sampled densely enough that depth discontinuities carry
// contrast. The camera orbits the scene centre, always looking at it.
SyntheticScene gen_scene(std::uint64_t seed, const SceneParams& params);

// Edge-crossing event model: the pose is interpolated from a to b over
// [t_start, t_end] in `substeps` increments; each crease point that enters a
// new pixel emits one event there, polarity = sign of the depth change across
// the crossing, timestamp at the midpoint of the crossing interval. Output is
// time-sorted.
EventStream gen_events(const SyntheticScene& scene, const PoseSE3& pose_a,
                       const PoseSE3& pose_b, std::uint64_t t_start, std::uint64_t t_end,
                       const CameraIntrinsics& K, int substeps);

struct PerturbParams {
  double trans_range_cm = 50.0;
  double rot_range_deg = 5.0;
};

struct SynthFilterParams {
  bool enabled = true;
  std::uint64_t stc_window_us = 10000;
  std::uint64_t trail_window_us = 10000;
};

// One training/eval sample, fully registered at the intrinsics extent.
struct Sample {
  Image depth;        // rendered under t_init
  Image event_image;  // accumulated around t_gt
  FlowField flow_gt;
  Image edge_gt;
  PoseSE3 t_gt;
  PoseSE3 t_init;
  CameraIntrinsics K;
};

// Deterministic per (scene.seed, index). `index` addresses trajectory segment
// [index, index+1]; t_gt is the segment end pose.
Sample gen_sample(const SyntheticScene& scene, std::size_t index,
                  const PerturbParams& perturb, const CameraIntrinsics& K,
                  int event_substeps = 24,
                  const SynthFilterParams& filters = SynthFilterParams{});

// Camera intrinsics used for desk-scale rasters: ~60 deg horizontal FOV at
// (width, height).
CameraIntrinsics default_intrinsics(std::int64_t width, std::int64_t height);

}  // namespace lear
