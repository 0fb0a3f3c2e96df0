#include "lear/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lear {

void CameraIntrinsics::validate() const {
  if (fx <= 0 || fy <= 0) throw Error("intrinsics", "focal lengths must be positive");
  if (width < 1 || height < 1) throw Error("intrinsics", "extent must be positive");
  if (cx < 0 || cx >= static_cast<double>(width) || cy < 0 ||
      cy >= static_cast<double>(height))
    throw Error("intrinsics", "principal point outside the image");
}

void PoseSE3::validate() const {
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9)
    throw Error("pose", "rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-9)
    throw Error("pose", "rotation determinant is not +1");
  if (!translation.allFinite()) throw Error("pose", "translation is not finite");
}

Eigen::Matrix4d PoseSE3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = rotation;
  m.block<3, 1>(0, 3) = translation;
  return m;
}

PoseSE3 PoseSE3::from_matrix(const Eigen::Matrix4d& m) {
  PoseSE3 p;
  p.rotation = m.block<3, 3>(0, 0);
  p.translation = m.block<3, 1>(0, 3);
  return p;
}

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    Eigen::Matrix3d hat;
    hat << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(), omega.x(), 0;
    return Eigen::Matrix3d::Identity() + hat;
  }
  const Eigen::Vector3d axis = omega / theta;
  return Eigen::AngleAxisd(theta, axis).toRotationMatrix();
}

void PointCloud::validate() const {
  for (const auto& p : points)
    if (!p.allFinite()) throw Error("cloud", "non-finite point coordinate");
}

DepthRender render_depth_with_winners(const PointCloud& cloud, const PoseSE3& pose,
                                      const CameraIntrinsics& K, double z_min) {
  K.validate();
  DepthRender out;
  out.depth = Image(K.height, K.width);
  out.winner.assign(static_cast<std::size_t>(K.height * K.width), -1);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Eigen::Vector3d pc = pose.apply(cloud.points[i]);
    if (pc.z() <= z_min) continue;
    const Eigen::Vector2d px = K.project(pc);
    const std::int64_t u = std::llround(px.x());
    const std::int64_t v = std::llround(px.y());
    if (u < 0 || u >= K.width || v < 0 || v >= K.height) continue;
    const std::size_t at = static_cast<std::size_t>(v * K.width + u);
    const float z = static_cast<float>(pc.z());
    // min depth wins; ties keep the earlier point
    if (out.winner[at] < 0 || z < out.depth.v[at]) {
      out.depth.v[at] = z;
      out.winner[at] = static_cast<std::int64_t>(i);
    }
  }
  return out;
}

Image render_depth(const PointCloud& cloud, const PoseSE3& pose,
                   const CameraIntrinsics& K, double z_min) {
  return render_depth_with_winners(cloud, pose, K, z_min).depth;
}

FlowField gt_flow(const PointCloud& cloud, const PoseSE3& t_gt, const PoseSE3& t_init,
                  const CameraIntrinsics& K) {
  t_gt.validate();
  t_init.validate();
  const DepthRender render = render_depth_with_winners(cloud, t_init, K);
  FlowField flow(K.height, K.width);
  for (std::int64_t v = 0; v < K.height; ++v) {
    for (std::int64_t u = 0; u < K.width; ++u) {
      const std::size_t at = static_cast<std::size_t>(v * K.width + u);
      const std::int64_t idx = render.winner[at];
      if (idx < 0) continue;
      const Eigen::Vector3d& pw = cloud.points[static_cast<std::size_t>(idx)];
      const Eigen::Vector3d p_gt = t_gt.apply(pw);
      if (p_gt.z() <= kMinDepth) continue;  // behind the target camera
      const Eigen::Vector2d a = K.project(t_init.apply(pw));
      const Eigen::Vector2d b = K.project(p_gt);
      flow.dx[at] = static_cast<float>(b.x() - a.x());
      flow.dy[at] = static_cast<float>(b.y() - a.y());
      flow.valid[at] = 1;
    }
  }
  return flow;
}

Image dilate_nonzero_max(const Image& in, int iterations) {
  Image cur = in;
  for (int it = 0; it < iterations; ++it) {
    Image next(cur.height, cur.width);
    for (std::int64_t y = 0; y < cur.height; ++y) {
      for (std::int64_t x = 0; x < cur.width; ++x) {
        float best = 0.f;
        for (std::int64_t dy = -1; dy <= 1; ++dy) {
          for (std::int64_t dx = -1; dx <= 1; ++dx) {
            const std::int64_t yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= cur.height || xx < 0 || xx >= cur.width) continue;
            const float v = cur.at(yy, xx);
            if (v > best) best = v;
          }
        }
        next.at(y, x) = best;
      }
    }
    cur = std::move(next);
  }
  return cur;
}

Image gt_edge_map(const Image& event_image, const Image& depth_gt, const PoseSE3& t_gt,
                  const PoseSE3& t_init, const CameraIntrinsics& K) {
  if (event_image.height != depth_gt.height || event_image.width != depth_gt.width)
    throw Error("shape", "gt_edge_map: event image and depth are not registered");
  if (event_image.height != K.height || event_image.width != K.width)
    throw Error("shape", "gt_edge_map: rasters do not match the intrinsics extent");
  const Image dilated = dilate_nonzero_max(depth_gt, 1);
  // gt-camera frame -> init-camera frame
  const PoseSE3 rel = t_init.compose(t_gt.inverse());
  Image edge(K.height, K.width);
  for (std::int64_t v = 0; v < K.height; ++v) {
    for (std::int64_t u = 0; u < K.width; ++u) {
      if (event_image.at(v, u) <= 0.f) continue;
      const double d = static_cast<double>(dilated.at(v, u));
      if (d <= 0.0) continue;
      const Eigen::Vector3d p_edge =
          K.back_project(static_cast<double>(u), static_cast<double>(v), d);
      const Eigen::Vector3d p_init = rel.apply(p_edge);
      if (p_init.z() <= kMinDepth) continue;
      const Eigen::Vector2d px = K.project(p_init);
      const std::int64_t eu = std::llround(px.x());
      const std::int64_t ev = std::llround(px.y());
      if (eu < 0 || eu >= K.width || ev < 0 || ev >= K.height) continue;
      edge.at(ev, eu) = 1.f;
    }
  }
  return edge;
}

PoseSE3 perturb_pose(const PoseSE3& t_gt, std::uint64_t seed, double trans_range_cm,
                     double rot_range_deg) {
  if (trans_range_cm < 0 || rot_range_deg < 0)
    throw Error("pose", "perturbation ranges must be non-negative");
  Rng rng(seed);
  const double tr_m = trans_range_cm / 100.0;
  const double tx = rng.uniform(-tr_m, tr_m);
  const double ty = rng.uniform(-tr_m, tr_m);
  const double tz = rng.uniform(-tr_m, tr_m);
  const double deg2rad = 3.141592653589793238462643383279502884 / 180.0;
  const double ax = rng.uniform(-rot_range_deg, rot_range_deg) * deg2rad;
  const double ay = rng.uniform(-rot_range_deg, rot_range_deg) * deg2rad;
  const double az = rng.uniform(-rot_range_deg, rot_range_deg) * deg2rad;
  const Eigen::Matrix3d dr = (Eigen::AngleAxisd(az, Eigen::Vector3d::UnitZ()) *
                              Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) *
                              Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()))
                                 .toRotationMatrix();
  PoseSE3 out;
  out.rotation = dr * t_gt.rotation;
  out.translation = t_gt.translation + Eigen::Vector3d(tx, ty, tz);
  return out;
}

std::pair<double, double> pose_error(const PoseSE3& pred, const PoseSE3& gt) {
  const double transl_cm = 100.0 * (pred.translation - gt.translation).norm();
  const double cos_angle =
      std::clamp(((pred.rotation.transpose() * gt.rotation).trace() - 1.0) / 2.0, -1.0, 1.0);
  const double rot_deg = std::acos(cos_angle) * 180.0 / 3.141592653589793238462643383279502884;
  return {transl_cm, rot_deg};
}

// ---- persistence ----

namespace {

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void save_cloud(const PointCloud& cloud, const std::string& path) {
  if (has_suffix(path, ".xyz")) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("io", "cannot open cloud for writing: " + path);
    out.precision(9);
    for (const auto& p : cloud.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io", "cannot open cloud for writing: " + path);
  out.write("LEARPC01", 8);
  const std::uint64_t count = cloud.points.size();
  std::uint8_t buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = std::uint8_t(count >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
  for (const auto& p : cloud.points) {
    for (int k = 0; k < 3; ++k) {
      const float f = static_cast<float>(p[k]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      std::uint8_t b4[4];
      for (int i = 0; i < 4; ++i) b4[i] = std::uint8_t(bits >> (8 * i));
      out.write(reinterpret_cast<const char*>(b4), 4);
    }
  }
  if (!out) throw Error("io", "short write to cloud file: " + path);
}

PointCloud load_cloud(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw Error("io", "cannot open cloud: " + path);
  char magic[8] = {};
  probe.read(magic, 8);
  PointCloud cloud;
  if (probe.gcount() == 8 && std::memcmp(magic, "LEARPC01", 8) == 0) {
    std::uint8_t buf[8];
    probe.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t count = 0;
    for (int i = 0; i < 8; ++i) count |= std::uint64_t(buf[i]) << (8 * i);
    cloud.points.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      double xyz[3];
      for (int k = 0; k < 3; ++k) {
        std::uint8_t b4[4];
        probe.read(reinterpret_cast<char*>(b4), 4);
        std::uint32_t bits = 0;
        for (int j = 0; j < 4; ++j) bits |= std::uint32_t(b4[j]) << (8 * j);
        float f;
        std::memcpy(&f, &bits, 4);
        xyz[k] = f;
      }
      cloud.points[i] = Eigen::Vector3d(xyz[0], xyz[1], xyz[2]);
    }
    if (!probe) throw Error("format", "truncated cloud file: " + path);
  } else {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw Error("format", "bad cloud line: " + line);
      cloud.points.emplace_back(x, y, z);
    }
  }
  cloud.validate();
  return cloud;
}

void save_poses(const std::vector<PoseSE3>& poses, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io", "cannot open pose file for writing: " + path);
  out.precision(17);
  for (const auto& p : poses) {
    const Eigen::Matrix4d m = p.matrix();
    for (int r = 0; r < 4; ++r) {
      out << m(r, 0) << ' ' << m(r, 1) << ' ' << m(r, 2) << ' ' << m(r, 3) << '\n';
    }
    out << '\n';
  }
}

std::vector<PoseSE3> load_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open pose file: " + path);
  std::vector<double> vals;
  double v;
  while (in >> v) vals.push_back(v);
  if (vals.size() % 16 != 0) throw Error("format", "pose file is not 4x4 blocks: " + path);
  std::vector<PoseSE3> poses;
  for (std::size_t off = 0; off < vals.size(); off += 16) {
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) = vals[off + 4 * r + c];
    PoseSE3 p = PoseSE3::from_matrix(m);
    p.validate();
    poses.push_back(p);
  }
  return poses;
}

void save_intrinsics(const CameraIntrinsics& K, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io", "cannot open intrinsics for writing: " + path);
  out.precision(17);
  out << K.fx << ' ' << K.fy << ' ' << K.cx << ' ' << K.cy << ' ' << K.width << ' '
      << K.height << '\n';
}

CameraIntrinsics load_intrinsics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open intrinsics: " + path);
  CameraIntrinsics K;
  if (!(in >> K.fx >> K.fy >> K.cx >> K.cy >> K.width >> K.height))
    throw Error("format", "bad intrinsics file: " + path);
  K.validate();
  return K;
}

}  // namespace lear
