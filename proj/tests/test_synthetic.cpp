#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "lear/synthetic.hpp"

using namespace lear;

namespace {

SceneParams small_params() {
  SceneParams p;
  p.n_primitives = 4;
  p.extent_m = 4.0;
  p.points_per_m2 = 150.0;
  p.n_keyframes = 6;
  return p;
}

TEST(GenScene, DeterministicInSeed) {
  const auto a = gen_scene(42, small_params());
  const auto b = gen_scene(42, small_params());
  ASSERT_EQ(a.cloud.points.size(), b.cloud.points.size());
  for (std::size_t i = 0; i < a.cloud.points.size(); ++i)
    EXPECT_EQ(a.cloud.points[i], b.cloud.points[i]);
  ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    EXPECT_EQ(a.trajectory[i].first, b.trajectory[i].first);
    EXPECT_EQ(a.trajectory[i].second.rotation, b.trajectory[i].second.rotation);
  }
  const auto c = gen_scene(43, small_params());
  EXPECT_NE(a.cloud.points.size(), c.cloud.points.size());
}

TEST(GenScene, SinglePlaneIsCoplanar) {
  SceneParams p = small_params();
  p.n_primitives = 1;
  const auto scene = gen_scene(7, p);
  ASSERT_FALSE(scene.cloud.points.empty());
  for (const auto& pt : scene.cloud.points) EXPECT_NEAR(pt.y(), 0.0, 1e-9);
}

TEST(GenScene, DensityScalesPointCount) {
  SceneParams p = small_params();
  const auto a = gen_scene(5, p);
  p.points_per_m2 *= 2.0;
  const auto b = gen_scene(5, p);
  const double surface_a = static_cast<double>(a.crease_begin);
  const double surface_b = static_cast<double>(b.crease_begin);
  EXPECT_GT(surface_b, 2.0 * surface_a * 0.9);
  EXPECT_LT(surface_b, 2.0 * surface_a * 1.1);
}

TEST(GenScene, TrajectoryTimestampsStrictlyIncrease) {
  const auto scene = gen_scene(3, small_params());
  for (std::size_t i = 1; i < scene.trajectory.size(); ++i)
    EXPECT_GT(scene.trajectory[i].first, scene.trajectory[i - 1].first);
}

TEST(GenEvents, NoMotionNoEvents) {
  const auto scene = gen_scene(42, small_params());
  const auto K = default_intrinsics(64, 48);
  const auto& pose = scene.trajectory[0].second;
  const auto events = gen_events(scene, pose, pose, 0, 100000, K, 8);
  EXPECT_TRUE(events.events.empty());
}

TEST(GenEvents, SingleSweepingPointEmitsPerPixelEntry) {
  // One crease point, camera translating sideways: k pixels -> k-1 events.
  SyntheticScene scene;
  scene.seed = 1;
  scene.params = small_params();
  scene.cloud.points.emplace_back(0.0, 0.0, 4.0);
  scene.crease_begin = 0;
  const auto K = default_intrinsics(64, 48);
  PoseSE3 a;  // identity, point straight ahead
  PoseSE3 b = a;
  // move camera so the projection sweeps horizontally by ~6 px
  const double shift_px = 6.0;
  const double dx = shift_px * 4.0 / K.fx;
  b.translation = Eigen::Vector3d(dx, 0, 0);
  const auto events = gen_events(scene, a, b, 0, 100000, K, 64);
  // count distinct pixels the projection passes through
  std::set<std::int64_t> pixels;
  for (int s = 0; s < 64; ++s) {
    const double f = static_cast<double>(s) / 63.0;
    PoseSE3 pose = a;
    pose.translation = Eigen::Vector3d(dx * f, 0, 0);
    const auto px = K.project(pose.apply(scene.cloud.points[0]));
    pixels.insert(std::llround(px.y()) * K.width + std::llround(px.x()));
  }
  EXPECT_EQ(events.events.size(), pixels.size() - 1);
  for (std::size_t i = 1; i < events.events.size(); ++i)
    EXPECT_GE(events.events[i].t_us, events.events[i - 1].t_us);
}

TEST(GenEvents, EventsLieNearCreaseProjections) {
  const auto scene = gen_scene(11, small_params());
  const auto K = default_intrinsics(64, 48);
  const auto& [t0, pose_a] = scene.trajectory[0];
  const auto& [t1, pose_b] = scene.trajectory[1];
  const auto events = gen_events(scene, pose_a, pose_b, t0, t1, K, 12);
  ASSERT_GT(events.events.size(), 50u);
  // every event pixel within 1 px of some crease projection (end pose)
  const auto crease = scene.crease_cloud();
  std::vector<std::uint8_t> near(static_cast<std::size_t>(K.width * K.height), 0);
  for (int step = 0; step < 12; ++step) {
    const double f = step / 11.0;
    const Eigen::Vector3d ca = -(pose_a.rotation.transpose() * pose_a.translation);
    const Eigen::Vector3d cb = -(pose_b.rotation.transpose() * pose_b.translation);
    const Eigen::Quaterniond qa(pose_a.rotation), qb(pose_b.rotation);
    PoseSE3 pose;
    pose.rotation = qa.slerp(f, qb).toRotationMatrix();
    pose.translation = -(pose.rotation * ((1 - f) * ca + f * cb));
    for (const auto& p : crease.points) {
      const Eigen::Vector3d pc = pose.apply(p);
      if (pc.z() <= kMinDepth) continue;
      const auto px = K.project(pc);
      const std::int64_t u = std::llround(px.x()), v = std::llround(px.y());
      for (std::int64_t ddy = -1; ddy <= 1; ++ddy)
        for (std::int64_t ddx = -1; ddx <= 1; ++ddx) {
          const std::int64_t uu = u + ddx, vv = v + ddy;
          if (uu >= 0 && uu < K.width && vv >= 0 && vv < K.height)
            near[vv * K.width + uu] = 1;
        }
    }
  }
  for (const auto& e : events.events) {
    EXPECT_TRUE(near[e.y * K.width + e.x]);
  }
}

TEST(GenSample, ZeroPerturbationGivesZeroFlow) {
  const auto scene = gen_scene(42, small_params());
  const auto K = default_intrinsics(64, 48);
  PerturbParams none{0.0, 0.0};
  const auto s = gen_sample(scene, 0, none, K);
  EXPECT_GT(s.flow_gt.valid_count(), 0);
  for (std::int64_t i = 0; i < s.flow_gt.pixels(); ++i) {
    if (s.flow_gt.valid[i]) {
      EXPECT_EQ(s.flow_gt.dx[i], 0.f);
      EXPECT_EQ(s.flow_gt.dy[i], 0.f);
    }
  }
  EXPECT_EQ(s.t_gt.rotation, s.t_init.rotation);
}

TEST(GenSample, DepthCoverageOnFixtureScene) {
  const auto scene = gen_scene(42, small_params());
  const auto K = default_intrinsics(64, 48);
  const auto s = gen_sample(scene, 1, PerturbParams{}, K);
  std::int64_t valid = 0;
  for (const float v : s.depth.v) valid += v > 0;
  EXPECT_GE(static_cast<double>(valid) / static_cast<double>(s.depth.pixels()), 0.3);
}

TEST(GenSample, DeterministicAcrossCalls) {
  const auto scene = gen_scene(42, small_params());
  const auto K = default_intrinsics(64, 48);
  const auto a = gen_sample(scene, 2, PerturbParams{}, K);
  const auto b = gen_sample(scene, 2, PerturbParams{}, K);
  EXPECT_EQ(a.depth.v, b.depth.v);
  EXPECT_EQ(a.event_image.v, b.event_image.v);
  EXPECT_EQ(a.flow_gt.dx, b.flow_gt.dx);
  EXPECT_EQ(a.edge_gt.v, b.edge_gt.v);
  EXPECT_EQ(a.t_init.translation, b.t_init.translation);
}

TEST(GenSample, IndexOutOfRangeThrows) {
  const auto scene = gen_scene(42, small_params());
  const auto K = default_intrinsics(64, 48);
  EXPECT_THROW(gen_sample(scene, 99, PerturbParams{}, K), Error);
}

TEST(GenSample, EventSupportNearCreases) {
  // >= 90% of event pixels within 2 px of a crease projection (gt pose)
  const auto scene = gen_scene(42, small_params());
  const auto K = default_intrinsics(64, 48);
  const auto s = gen_sample(scene, 1, PerturbParams{}, K);
  const auto crease = scene.crease_cloud();
  std::vector<std::uint8_t> near(static_cast<std::size_t>(K.width * K.height), 0);
  for (const auto& p : crease.points) {
    const Eigen::Vector3d pc = s.t_gt.apply(p);
    if (pc.z() <= kMinDepth) continue;
    const auto px = K.project(pc);
    const std::int64_t u = std::llround(px.x()), v = std::llround(px.y());
    for (std::int64_t ddy = -2; ddy <= 2; ++ddy)
      for (std::int64_t ddx = -2; ddx <= 2; ++ddx) {
        const std::int64_t uu = u + ddx, vv = v + ddy;
        if (uu >= 0 && uu < K.width && vv >= 0 && vv < K.height)
          near[vv * K.width + uu] = 1;
      }
  }
  std::int64_t support = 0, covered = 0;
  for (std::int64_t i = 0; i < s.event_image.pixels(); ++i) {
    if (s.event_image.v[i] > 0) {
      ++support;
      covered += near[i];
    }
  }
  ASSERT_GT(support, 20);
  EXPECT_GE(static_cast<double>(covered) / static_cast<double>(support), 0.9);
}

}  // namespace
