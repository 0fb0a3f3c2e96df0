#include <gtest/gtest.h>

#include <cmath>

#include "lear/pnp.hpp"
#include "lear/rng.hpp"

using namespace lear;

namespace {

CameraIntrinsics test_intrinsics() {
  CameraIntrinsics K;
  K.fx = K.fy = 120.0;
  K.cx = 64.0;
  K.cy = 48.0;
  K.width = 128;
  K.height = 96;
  return K;
}

PoseSE3 random_pose(Rng& rng, double rot_scale = 0.4, double trans_scale = 0.5) {
  const Eigen::Vector3d axis =
      Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1))
          .normalized();
  PoseSE3 p;
  p.rotation =
      Eigen::AngleAxisd(rng.uniform(-rot_scale, rot_scale), axis).toRotationMatrix();
  p.translation = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1),
                                  rng.uniform(-1, 1)) *
                  trans_scale;
  return p;
}

// Points in front of both cameras with exact projections under `pose`.
std::vector<Correspondence> exact_correspondences(Rng& rng, const PoseSE3& pose,
                                                  const CameraIntrinsics& K, int count) {
  std::vector<Correspondence> out;
  while (static_cast<int>(out.size()) < count) {
    Eigen::Vector3d p(rng.uniform(-2.5, 2.5), rng.uniform(-2, 2), rng.uniform(2.5, 8));
    const Eigen::Vector3d pc = pose.apply(p);
    if (pc.z() < 0.5) continue;
    const Eigen::Vector2d px = K.project(pc);
    if (!K.in_frame(px)) continue;
    Correspondence c;
    c.pixel_2d = px;
    c.point_3d = p;
    out.push_back(c);
  }
  return out;
}

TEST(P3p, RecoversExactPose) {
  Rng rng(1);
  int recovered = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto pose = random_pose(rng);
    std::array<Eigen::Vector3d, 3> pts, bearings;
    bool ok = true;
    for (int i = 0; i < 3; ++i) {
      pts[static_cast<std::size_t>(i)] = Eigen::Vector3d(
          rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(3, 7));
      const Eigen::Vector3d pc = pose.apply(pts[static_cast<std::size_t>(i)]);
      if (pc.z() < 0.5) ok = false;
      bearings[static_cast<std::size_t>(i)] = pc.normalized();
    }
    if (!ok) continue;
    const auto sols = p3p_solve(bearings, pts);
    ASSERT_FALSE(sols.empty()) << "trial " << trial;
    double best = 1e30;
    for (const auto& s : sols) {
      const double err = (s.rotation - pose.rotation).norm() +
                         (s.translation - pose.translation).norm();
      best = std::min(best, err);
    }
    EXPECT_LT(best, 1e-6) << "trial " << trial;
    ++recovered;
  }
  EXPECT_GT(recovered, 40);
}

TEST(RansacPnp, NoiselessRecovery) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pose = random_pose(rng);
    const auto corrs = exact_correspondences(rng, pose, test_intrinsics(), 100);
    const auto res = ransac_pnp(corrs, test_intrinsics(), 12.0, 0.99, 10000, trial);
    const auto [tc, rd] = pose_error(res.pose, pose);
    EXPECT_LT(tc, 1e-4) << "trial " << trial;  // 1e-6 m
    EXPECT_LT(rd, 1e-4) << "trial " << trial;  // deg
    EXPECT_DOUBLE_EQ(res.inlier_ratio, 1.0);
  }
}

TEST(RansacPnp, ThirtyPercentOutliers) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pose = random_pose(rng);
    auto corrs = exact_correspondences(rng, pose, test_intrinsics(), 100);
    const int n_out = 30;
    std::vector<bool> is_outlier(corrs.size(), false);
    for (int i = 0; i < n_out; ++i) {
      const std::size_t idx = static_cast<std::size_t>(rng.uniform_int(corrs.size()));
      corrs[idx].pixel_2d =
          Eigen::Vector2d(rng.uniform(0, 127), rng.uniform(0, 95));
      is_outlier[idx] = true;
    }
    const auto res = ransac_pnp(corrs, test_intrinsics(), 12.0, 0.99, 10000, 100 + trial);
    const auto [tc, rd] = pose_error(res.pose, pose);
    EXPECT_LT(tc, 0.01) << "trial " << trial;  // cm
    EXPECT_LT(rd, 0.01) << "trial " << trial;  // deg
    // recall over the true inliers
    std::int64_t true_in = 0, recalled = 0;
    for (std::size_t i = 0; i < corrs.size(); ++i) {
      if (is_outlier[i]) continue;
      ++true_in;
      recalled += res.inlier_mask[i];
    }
    EXPECT_GE(static_cast<double>(recalled) / static_cast<double>(true_in), 0.99);
  }
}

TEST(RansacPnp, TooFewCorrespondencesThrows) {
  Rng rng(4);
  const auto pose = random_pose(rng);
  auto corrs = exact_correspondences(rng, pose, test_intrinsics(), 3);
  try {
    ransac_pnp(corrs, test_intrinsics());
    FAIL() << "expected pose_unrecoverable";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "pose_unrecoverable");
  }
}

TEST(RansacPnp, DegenerateCollinearSamplesThrow) {
  // all points on one 3D line: every minimal sample is degenerate
  std::vector<Correspondence> corrs;
  const auto K = test_intrinsics();
  for (int i = 0; i < 20; ++i) {
    Correspondence c;
    c.point_3d = Eigen::Vector3d(0.1 * i, 0.05 * i, 4.0 + 0.1 * i);
    c.pixel_2d = K.project(c.point_3d);
    corrs.push_back(c);
  }
  try {
    ransac_pnp(corrs, K, 12.0, 0.99, 200, 7);
    FAIL() << "expected pose_unrecoverable";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "pose_unrecoverable");
    EXPECT_NE(std::string(e.what()).find("degenerate"), std::string::npos);
  }
}

TEST(RansacPnp, DeterministicInSeed) {
  Rng rng(5);
  const auto pose = random_pose(rng);
  auto corrs = exact_correspondences(rng, pose, test_intrinsics(), 80);
  for (int i = 0; i < 20; ++i) {
    const std::size_t idx = static_cast<std::size_t>(rng.uniform_int(corrs.size()));
    corrs[idx].pixel_2d = Eigen::Vector2d(rng.uniform(0, 127), rng.uniform(0, 95));
  }
  const auto a = ransac_pnp(corrs, test_intrinsics(), 12.0, 0.99, 10000, 42);
  const auto b = ransac_pnp(corrs, test_intrinsics(), 12.0, 0.99, 10000, 42);
  EXPECT_EQ(a.pose.rotation, b.pose.rotation);
  EXPECT_EQ(a.pose.translation, b.pose.translation);
  EXPECT_EQ(a.inlier_mask, b.inlier_mask);
}

TEST(RansacPnp, RefinementNeverIncreasesRobustCost) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto pose = random_pose(rng);
    auto corrs = exact_correspondences(rng, pose, test_intrinsics(), 60);
    // mild noise so LM has something to polish
    for (auto& c : corrs) {
      c.pixel_2d += Eigen::Vector2d(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
    }
    const auto res = ransac_pnp(corrs, test_intrinsics(), 12.0, 0.99, 5000, trial);
    EXPECT_LE(res.post_refine_cost, res.pre_refine_cost + 1e-12) << "trial " << trial;
  }
}

TEST(RansacPnp, ThresholdIsStrict) {
  Rng rng(7);
  PoseSE3 identity;
  auto corrs = exact_correspondences(rng, identity, test_intrinsics(), 60);
  // one correspondence pushed just past the threshold, one just inside
  corrs[0].pixel_2d += Eigen::Vector2d(12.5, 0.0);
  corrs[1].pixel_2d += Eigen::Vector2d(11.5, 0.0);
  const auto res = ransac_pnp(corrs, test_intrinsics(), 12.0, 0.99, 10000, 3);
  const auto [tc, rd] = pose_error(res.pose, identity);
  ASSERT_LT(tc, 0.05);
  EXPECT_EQ(res.inlier_mask[0], 0);
  EXPECT_EQ(res.inlier_mask[1], 1);
}

TEST(ExtractCorrespondences, EmptyDepthGivesEmptyList) {
  const auto K = test_intrinsics();
  Image depth(K.height, K.width);
  FlowField flow(K.height, K.width);
  EXPECT_TRUE(extract_correspondences(depth, flow, K).empty());
}

TEST(ExtractCorrespondences, CountMatchesNonzeroDepthMinusDropped) {
  const auto K = test_intrinsics();
  Image depth(K.height, K.width);
  FlowField flow(K.height, K.width);
  Rng rng(8);
  std::int64_t nonzero = 0, dropped = 0;
  for (std::int64_t i = 0; i < depth.pixels(); ++i) {
    if (rng.uniform() < 0.2) {
      depth.v[static_cast<std::size_t>(i)] = static_cast<float>(rng.uniform(2, 6));
      ++nonzero;
      if (rng.uniform() < 0.1) {
        flow.dx[static_cast<std::size_t>(i)] = 500.f;  // leaves frame by > 20 px
        ++dropped;
      }
    }
  }
  const auto corrs = extract_correspondences(depth, flow, K);
  EXPECT_EQ(static_cast<std::int64_t>(corrs.size()), nonzero - dropped);
}

TEST(ExtractCorrespondences, ZeroFlowIdentityChain) {
  // observations equal source pixels; PnP returns the identity relative pose
  const auto K = test_intrinsics();
  Rng rng(9);
  Image depth(K.height, K.width);
  FlowField flow(K.height, K.width);
  for (std::int64_t i = 0; i < depth.pixels(); ++i)
    if (rng.uniform() < 0.15)
      depth.v[static_cast<std::size_t>(i)] = static_cast<float>(rng.uniform(2, 7));
  const auto corrs = extract_correspondences(depth, flow, K);
  ASSERT_GE(corrs.size(), 100u);
  const auto res = ransac_pnp(corrs, K, 12.0, 0.99, 10000, 11);
  const auto [tc, rd] = pose_error(res.pose, PoseSE3{});
  EXPECT_LT(tc, 1e-4);
  EXPECT_LT(rd, 1e-4);
}

}  // namespace
