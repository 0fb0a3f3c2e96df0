#include "lear/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace lear {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// World frame: y is up, scene contents around the origin, camera orbits and
// looks at the scene centre.
PoseSE3 look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  const Eigen::Vector3d up(0, 1, 0);
  const Eigen::Vector3d fwd = (target - eye).normalized();
  Eigen::Vector3d right = up.cross(fwd);
  if (right.norm() < 1e-9) right = Eigen::Vector3d(1, 0, 0);
  right.normalize();
  const Eigen::Vector3d img_down = right.cross(fwd).normalized() * -1.0;
  PoseSE3 pose;
  pose.rotation.row(0) = right.transpose();
  pose.rotation.row(1) = img_down.transpose();
  pose.rotation.row(2) = fwd.transpose();
  pose.translation = -(pose.rotation * eye);
  return pose;
}

void sample_quad(std::vector<Eigen::Vector3d>& out, const Eigen::Vector3d& origin,
                 const Eigen::Vector3d& ua, const Eigen::Vector3d& ub, double density,
                 Rng& rng) {
  const double area = ua.cross(ub).norm();
  const std::int64_t count = std::max<std::int64_t>(1, std::llround(area * density));
  for (std::int64_t i = 0; i < count; ++i) {
    out.push_back(origin + rng.uniform() * ua + rng.uniform() * ub);
  }
}

void sample_segment(std::vector<Eigen::Vector3d>& out, const Eigen::Vector3d& a,
                    const Eigen::Vector3d& b, double linear_density, Rng& rng) {
  const double len = (b - a).norm();
  const std::int64_t count = std::max<std::int64_t>(2, std::llround(len * linear_density));
  for (std::int64_t i = 0; i < count; ++i) {
    out.push_back(a + rng.uniform() * (b - a));
  }
}

void sample_circle(std::vector<Eigen::Vector3d>& out, const Eigen::Vector3d& center,
                   double radius, double y, double linear_density, Rng& rng) {
  const double len = 2.0 * kPi * radius;
  const std::int64_t count = std::max<std::int64_t>(4, std::llround(len * linear_density));
  for (std::int64_t i = 0; i < count; ++i) {
    const double a = rng.uniform(0.0, 2.0 * kPi);
    out.push_back(center + Eigen::Vector3d(radius * std::cos(a), y, radius * std::sin(a)));
  }
}

// Axis-aligned-in-yaw box sitting on the ground plane.
struct BoxSpec {
  Eigen::Vector3d center;  // centre of the base
  double sx, sy, sz, yaw;
  Eigen::Vector3d corner(int ix, int iy, int iz) const {
    const Eigen::Vector3d local((ix ? 0.5 : -0.5) * sx, iy ? sy : 0.0,
                                (iz ? 0.5 : -0.5) * sz);
    const Eigen::Matrix3d r =
        Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()).toRotationMatrix();
    return center + r * local;
  }
};

}  // namespace

SyntheticScene gen_scene(std::uint64_t seed, const SceneParams& params) {
  if (params.n_primitives < 1) throw Error("synth", "need at least one primitive");
  SyntheticScene scene;
  scene.seed = seed;
  scene.params = params;
  Rng rng(Rng::mix(seed, 0xa5a5));
  std::vector<Eigen::Vector3d> surface;
  std::vector<Eigen::Vector3d> crease;
  const double density = params.points_per_m2;
  const double crease_density =
      params.crease_density_factor * std::sqrt(std::max(1.0, density));
  const double e = params.extent_m;

  // Primitive 1: ground plane with its boundary as creases.
  {
    const Eigen::Vector3d origin(-e, 0, -e);
    sample_quad(surface, origin, Eigen::Vector3d(2 * e, 0, 0), Eigen::Vector3d(0, 0, 2 * e),
                density, rng);
    const Eigen::Vector3d c00(-e, 0, -e), c10(e, 0, -e), c01(-e, 0, e), c11(e, 0, e);
    sample_segment(crease, c00, c10, crease_density, rng);
    sample_segment(crease, c10, c11, crease_density, rng);
    sample_segment(crease, c11, c01, crease_density, rng);
    sample_segment(crease, c01, c00, crease_density, rng);
  }

  for (int prim = 1; prim < params.n_primitives; ++prim) {
    const double px = rng.uniform(-0.45 * e, 0.45 * e);
    const double pz = rng.uniform(-0.45 * e, 0.45 * e);
    if (prim % 2 == 1) {
      BoxSpec box;
      box.center = Eigen::Vector3d(px, 0, pz);
      box.sx = rng.uniform(0.5, 1.3);
      box.sy = rng.uniform(0.6, 1.6);
      box.sz = rng.uniform(0.5, 1.3);
      box.yaw = rng.uniform(0.0, kPi);
      // faces
      const Eigen::Vector3d c000 = box.corner(0, 0, 0), c100 = box.corner(1, 0, 0);
      const Eigen::Vector3d c010 = box.corner(0, 1, 0), c110 = box.corner(1, 1, 0);
      const Eigen::Vector3d c001 = box.corner(0, 0, 1), c101 = box.corner(1, 0, 1);
      const Eigen::Vector3d c011 = box.corner(0, 1, 1), c111 = box.corner(1, 1, 1);
      sample_quad(surface, c000, c100 - c000, c010 - c000, density, rng);  // z- side
      sample_quad(surface, c001, c101 - c001, c011 - c001, density, rng);  // z+ side
      sample_quad(surface, c000, c001 - c000, c010 - c000, density, rng);  // x- side
      sample_quad(surface, c100, c101 - c100, c110 - c100, density, rng);  // x+ side
      sample_quad(surface, c010, c110 - c010, c011 - c010, density, rng);  // top
      // 12 edges
      const std::pair<Eigen::Vector3d, Eigen::Vector3d> edges[12] = {
          {c000, c100}, {c001, c101}, {c010, c110}, {c011, c111},
          {c000, c001}, {c100, c101}, {c010, c011}, {c110, c111},
          {c000, c010}, {c100, c110}, {c001, c011}, {c101, c111}};
      for (const auto& [a, b] : edges) sample_segment(crease, a, b, crease_density, rng);
    } else {
      const double radius = rng.uniform(0.25, 0.6);
      const double height = rng.uniform(0.6, 1.6);
      const Eigen::Vector3d center(px, 0, pz);
      // lateral surface
      const double area = 2.0 * kPi * radius * height;
      const std::int64_t count =
          std::max<std::int64_t>(1, std::llround(area * density));
      for (std::int64_t i = 0; i < count; ++i) {
        const double a = rng.uniform(0.0, 2.0 * kPi);
        const double y = rng.uniform(0.0, height);
        surface.push_back(center + Eigen::Vector3d(radius * std::cos(a), y,
                                                   radius * std::sin(a)));
      }
      // top disc
      const std::int64_t disc =
          std::max<std::int64_t>(1, std::llround(kPi * radius * radius * density));
      for (std::int64_t i = 0; i < disc; ++i) {
        const double a = rng.uniform(0.0, 2.0 * kPi);
        const double r = radius * std::sqrt(rng.uniform());
        surface.push_back(center +
                          Eigen::Vector3d(r * std::cos(a), height, r * std::sin(a)));
      }
      // rims
      sample_circle(crease, center, radius, height, crease_density, rng);
      sample_circle(crease, center, radius, 0.0, crease_density, rng);
    }
  }

  scene.cloud.points = std::move(surface);
  scene.crease_begin = scene.cloud.points.size();
  scene.cloud.points.insert(scene.cloud.points.end(), crease.begin(), crease.end());
  scene.cloud.validate();

  // Orbit trajectory, always facing the scene centre.
  const double orbit_radius = 1.6 * e;
  const double theta0 = rng.uniform(0.0, 2.0 * kPi);
  const Eigen::Vector3d target(0, 0.6, 0);
  for (int i = 0; i < params.n_keyframes; ++i) {
    const double theta = theta0 + i * params.orbit_step_deg * kPi / 180.0;
    const double radius = orbit_radius * (1.0 + 0.05 * std::sin(0.35 * i));
    const double h = 1.4 + 0.25 * std::sin(0.7 * i);
    const Eigen::Vector3d eye(radius * std::cos(theta), h, radius * std::sin(theta));
    const std::uint64_t t = 1000000 + std::uint64_t(i) * params.frame_interval_us;
    scene.trajectory.emplace_back(t, look_at(eye, target));
  }
  return scene;
}

EventStream gen_events(const SyntheticScene& scene, const PoseSE3& pose_a,
                       const PoseSE3& pose_b, std::uint64_t t_start, std::uint64_t t_end,
                       const CameraIntrinsics& K, int substeps) {
  if (substeps < 2) throw Error("synth", "gen_events: substeps must be >= 2");
  if (t_start >= t_end) throw Error("synth", "gen_events: empty time window");
  K.validate();
  EventStream out;
  out.width = static_cast<std::uint32_t>(K.width);
  out.height = static_cast<std::uint32_t>(K.height);

  const std::size_t n_crease = scene.cloud.points.size() - scene.crease_begin;
  // Interpolate the camera centre linearly and the rotation by slerp.
  const Eigen::Vector3d center_a = -(pose_a.rotation.transpose() * pose_a.translation);
  const Eigen::Vector3d center_b = -(pose_b.rotation.transpose() * pose_b.translation);
  const Eigen::Quaterniond qa(pose_a.rotation), qb(pose_b.rotation);

  std::vector<std::int64_t> cur_pixel(n_crease, -1);
  std::vector<double> cur_depth(n_crease, 0.0);
  std::vector<double> step_time(static_cast<std::size_t>(substeps));
  for (int s = 0; s < substeps; ++s) {
    const double f = static_cast<double>(s) / static_cast<double>(substeps - 1);
    step_time[static_cast<std::size_t>(s)] =
        static_cast<double>(t_start) + f * static_cast<double>(t_end - t_start);
  }

  for (int s = 0; s < substeps; ++s) {
    const double f = static_cast<double>(s) / static_cast<double>(substeps - 1);
    PoseSE3 pose;
    pose.rotation = qa.slerp(f, qb).toRotationMatrix();
    const Eigen::Vector3d center = (1.0 - f) * center_a + f * center_b;
    pose.translation = -(pose.rotation * center);
    for (std::size_t j = 0; j < n_crease; ++j) {
      const Eigen::Vector3d& pw = scene.cloud.points[scene.crease_begin + j];
      const Eigen::Vector3d pc = pose.apply(pw);
      std::int64_t pixel = -1;
      if (pc.z() > kMinDepth) {
        const Eigen::Vector2d px = K.project(pc);
        const std::int64_t u = std::llround(px.x());
        const std::int64_t v = std::llround(px.y());
        if (u >= 0 && u < K.width && v >= 0 && v < K.height) pixel = v * K.width + u;
      }
      if (pixel >= 0 && cur_pixel[j] >= 0 && pixel != cur_pixel[j]) {
        // crossing between substeps s-1 and s
        const double tc = 0.5 * (step_time[static_cast<std::size_t>(s - 1)] +
                                 step_time[static_cast<std::size_t>(s)]);
        Event e;
        e.t_us = static_cast<std::uint64_t>(tc);
        e.x = static_cast<std::uint16_t>(pixel % K.width);
        e.y = static_cast<std::uint16_t>(pixel / K.width);
        e.polarity = (pc.z() - cur_depth[j]) < 0.0 ? -1 : 1;
        out.events.push_back(e);
      }
      if (pixel >= 0) {
        cur_pixel[j] = pixel;
        cur_depth[j] = pc.z();
      } else {
        cur_pixel[j] = -1;
      }
    }
  }

  if (scene.params.salt_noise_rate > 0.0) {
    Rng noise_rng(Rng::mix(scene.seed, t_start));
    const std::int64_t n_noise = std::llround(scene.params.salt_noise_rate *
                                              static_cast<double>(K.width * K.height));
    for (std::int64_t i = 0; i < n_noise; ++i) {
      Event e;
      e.t_us = t_start + noise_rng.uniform_int(t_end - t_start);
      e.x = static_cast<std::uint16_t>(noise_rng.uniform_int(std::uint64_t(K.width)));
      e.y = static_cast<std::uint16_t>(noise_rng.uniform_int(std::uint64_t(K.height)));
      e.polarity = noise_rng.uniform() < 0.5 ? -1 : 1;
      out.events.push_back(e);
    }
  }

  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
  return out;
}

Sample gen_sample(const SyntheticScene& scene, std::size_t index,
                  const PerturbParams& perturb, const CameraIntrinsics& K,
                  int event_substeps, const SynthFilterParams& filters) {
  if (index + 1 >= scene.trajectory.size())
    throw Error("range", "gen_sample: segment index " + std::to_string(index) +
                             " out of range (trajectory has " +
                             std::to_string(scene.trajectory.size()) + " keyframes)");
  const auto& [t_a, pose_a] = scene.trajectory[index];
  const auto& [t_b, pose_b] = scene.trajectory[index + 1];
  Sample s;
  s.K = K;
  s.t_gt = pose_b;
  s.t_init = perturb_pose(pose_b, Rng::mix(scene.seed, 0x5eed0000 + index),
                          perturb.trans_range_cm, perturb.rot_range_deg);

  EventStream events = gen_events(scene, pose_a, pose_b, t_a, t_b, K, event_substeps);
  if (filters.enabled) {
    events = trail_filter(stc_filter(events, filters.stc_window_us),
                          filters.trail_window_us);
  }
  s.event_image = make_event_image(events, t_a, t_b, K.height, K.width);
  s.depth = render_depth(scene.cloud, s.t_init, K);
  s.flow_gt = gt_flow(scene.cloud, s.t_gt, s.t_init, K);
  const Image depth_gt = render_depth(scene.cloud, s.t_gt, K);
  s.edge_gt = gt_edge_map(s.event_image, depth_gt, s.t_gt, s.t_init, K);
  return s;
}

CameraIntrinsics default_intrinsics(std::int64_t width, std::int64_t height) {
  CameraIntrinsics K;
  K.width = width;
  K.height = height;
  K.fx = 0.9 * static_cast<double>(width);
  K.fy = K.fx;
  K.cx = static_cast<double>(width - 1) / 2.0;
  K.cy = static_cast<double>(height - 1) / 2.0;
  return K;
}

}  // namespace lear
