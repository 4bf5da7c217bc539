#include <doctest.h>

#include <algorithm>
#include <random>

#include "generators.hpp"
#include "gsshare/map_build.hpp"
#include "gsshare/render.hpp"

using namespace gsshare;

namespace {

FrameRGBD blank_frame(int w, int h, const CameraPose& pose) {
  FrameRGBD f;
  f.pose = pose;
  f.pose.intrinsics = make_intrinsics(w, h, 60);
  f.color = Image(w, h, 3, 0.5);
  f.depth = Image(w, h, 1, 0.0);
  return f;
}

ColoredPointCloud cloud_of(const std::vector<Vec3>& pts, int frame = 0) {
  ColoredPointCloud c;
  for (const auto& p : pts) {
    c.points.push_back(p);
    c.colors.push_back(Rgb(0.2, 0.4, 0.6));
    c.source_frame.push_back(frame);
  }
  return c;
}

// Independent visibility test: camera-frame transform through the rotation matrix, pinhole
// projection, nearest pixel, and the near/occlusion window.
bool seen_by_ray_test(const Vec3& p, const FrameRGBD& f, double eps) {
  const Mat3 r = f.pose.rotation.toRotationMatrix();
  const Vec3 pc = r.transpose() * (p - f.pose.translation);
  if (pc.z() < 0.05) return false;
  const auto& k = f.pose.intrinsics;
  const double u = k.fx * pc.x() / pc.z() + k.cx;
  const double v = k.fy * pc.y() / pc.z() + k.cy;
  if (u < -0.5 || u >= k.width - 0.5 || v < -0.5 || v >= k.height - 0.5) return false;
  const int px = std::clamp(static_cast<int>(std::lround(u)), 0, k.width - 1);
  const int py = std::clamp(static_cast<int>(std::lround(v)), 0, k.height - 1);
  const double d = f.depth.at(px, py);
  return d > 0.0 && pc.z() <= d + eps;
}

}  // namespace

TEST_CASE("lift_rgbd examples") {
  FrameRGBD f = blank_frame(5, 5, CameraPose{});
  f.depth.at(2, 2) = 2.0;
  f.color.at(2, 2, 0) = 0.9;
  const ColoredPointCloud c = lift_rgbd(f, 1);
  REQUIRE(c.size() == 1);
  CHECK((c.points[0] - Vec3(0, 0, 2)).norm() < 1e-12);
  CHECK(c.colors[0].x() == 0.9);

  f.depth = Image(5, 5, 1, 0.0);
  CHECK(lift_rgbd(f, 1).size() == 0);
  CHECK_THROWS_AS(lift_rgbd(f, 0), Error);
}

TEST_CASE("lifted points project back to their pixels") {
  std::mt19937_64 rng(21);
  CameraPose pose;
  pose.rotation = gen::unit_quat(rng);
  pose.translation = gen::vec3(rng, -1, 1);
  FrameRGBD f = blank_frame(40, 30, pose);
  for (int i = 0; i < 200; ++i) {
    const int x = gen::integer(rng, 0, 39), y = gen::integer(rng, 0, 29);
    f.depth.at(x, y) = gen::uniform(rng, 0.2, 6.0);
  }
  const ColoredPointCloud c = lift_rgbd(f, 1);
  REQUIRE(c.size() > 100);
  double worst = 0.0;
  size_t i = 0;
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x) {
      if (f.depth.at(x, y) <= 0) continue;
      const Projection p = project(c.points[i++], f.pose);
      worst = std::max({worst, std::abs(p.u - x), std::abs(p.v - y)});
    }
  CHECK(i == c.size());
  CHECK(worst < 1e-6);
}

TEST_CASE("voxelize examples") {
  VoxelGrid g = voxelize(cloud_of({Vec3(0.014, -0.016, 0.0)}), 0.03);
  REQUIRE(g.occupied.size() == 1);
  CHECK((g.center(0) - Vec3(0.0, -0.03, 0.0)).norm() < 1e-15);

  g = voxelize(cloud_of({Vec3(0.06, 0.03, -0.09)}), 0.03);
  CHECK((g.center(0) - Vec3(0.06, 0.03, -0.09)).norm() < 1e-12);
  CHECK_THROWS_AS(voxelize(cloud_of({}), 0.0), Error);
}

TEST_CASE("voxelize covers every point within half a cell") {
  std::mt19937_64 rng(22);
  std::vector<Vec3> pts;
  for (int i = 0; i < 10000; ++i) pts.push_back(gen::vec3(rng, -1.5, 1.5));
  const double eps = 0.03;
  const VoxelGrid g = voxelize(cloud_of(pts), eps);
  CHECK(g.occupied.size() <= pts.size());
  for (const auto& p : pts) {
    const GridCell c = voxel_of(p, eps);
    REQUIRE(std::binary_search(g.occupied.begin(), g.occupied.end(), c));
    const Vec3 center = Vec3(c[0], c[1], c[2]) * eps;
    CHECK((p - center).cwiseAbs().maxCoeff() <= eps / 2 + 1e-12);
  }
  // Every occupied cell came from some point.
  std::vector<GridCell> from_points;
  for (const auto& p : pts) from_points.push_back(voxel_of(p, eps));
  std::sort(from_points.begin(), from_points.end());
  from_points.erase(std::unique(from_points.begin(), from_points.end()), from_points.end());
  CHECK(from_points == g.occupied);
}

TEST_CASE("voxelize is idempotent and order independent") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> pts;
    const int n = gen::integer(rng, 1, 500);
    for (int i = 0; i < n; ++i) pts.push_back(gen::vec3(rng, -0.5, 0.5));
    const double eps = gen::uniform(rng, 0.01, 0.2);
    const VoxelGrid g = voxelize(cloud_of(pts), eps);
    CHECK(voxelize(grid_centers(g), eps).occupied == g.occupied);
    std::shuffle(pts.begin(), pts.end(), rng);
    CHECK(voxelize(cloud_of(pts), eps).occupied == g.occupied);
    CHECK(g.occupied.size() <= pts.size());
  }
}

TEST_CASE("init_anchors single point voxel") {
  const double eps = 0.03;
  const ColoredPointCloud c = cloud_of({Vec3(0.005, 0.002, 0.3)});
  const VoxelGrid g = voxelize(c, eps);
  AnchorInitOptions opts;
  opts.k = 1;
  const auto inits = init_anchors(g, c, {}, opts);
  REQUIRE(inits.size() == 1);
  REQUIRE(inits[0].gaussians.size() == 1);
  const Gaussian& gs = inits[0].gaussians[0];
  CHECK((gs.position - c.points[0]).norm() < 1e-12);
  CHECK(gs.color == c.colors[0]);
  CHECK(gs.opacity == 0.1);
  CHECK(gs.kind == GaussianKind::Flat2D);
  opts.k = 0;
  CHECK_THROWS_AS(init_anchors(g, c, {}, opts), Error);
}

TEST_CASE("init_anchors uses the plane normal of planar voxels") {
  std::mt19937_64 rng(24);
  std::vector<Vec3> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(Vec3(gen::uniform(rng, -0.014, 0.014), gen::uniform(rng, -0.014, 0.014), 0.0));
  const ColoredPointCloud c = cloud_of(pts);
  const VoxelGrid g = voxelize(c, 0.03);
  REQUIRE(g.occupied.size() == 1);
  const auto inits = init_anchors(g, c, {}, {});
  REQUIRE(inits.size() == 1);
  for (const auto& gs : inits[0].gaussians) CHECK(std::abs(std::abs(flat_normal(gs).z()) - 1.0) < 1e-9);
}

TEST_CASE("init_anchors offsets stay near the voxel") {
  std::mt19937_64 rng(25);
  const double eps = 0.03;
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 center = Vec3(gen::integer(rng, -20, 20), gen::integer(rng, -20, 20), gen::integer(rng, 5, 40)) * eps;
    std::vector<Vec3> pts;
    for (int i = 0; i < 20; ++i) pts.push_back(center + gen::vec3(rng, -0.0149, 0.0149));
    const ColoredPointCloud c = cloud_of(pts);
    const VoxelGrid g = voxelize(c, eps);
    REQUIRE(g.occupied.size() == 1);
    const auto inits = init_anchors(g, c, {}, {});
    REQUIRE(inits.size() == 1);
    const AnchorFeature& f = inits[0].feature;
    REQUIRE(f.offsets.rows() == 10);
    Vec3 lo = pts[0], hi = pts[0];
    for (const auto& p : pts) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    for (int j = 0; j < 10; ++j) {
      const Vec3 pos = f.anchor_position + f.offsets.row(j).transpose();
      CHECK((pos - inits[0].gaussians[j].position).norm() < 1e-12);
      CHECK((pos.array() >= (lo.array() - eps)).all());
      CHECK((pos.array() <= (hi.array() + eps)).all());
    }
  }
}

TEST_CASE("init_anchors falls back to the viewing direction for sparse voxels") {
  CameraPose cam;
  cam.translation = Vec3(0, 0, 0);
  FrameRGBD f = blank_frame(8, 8, cam);
  const ColoredPointCloud c = cloud_of({Vec3(0.0, 0.0, 0.9), Vec3(0.003, 0.0, 0.9)});
  const auto inits = init_anchors(voxelize(c, 0.03), c, {f}, {});
  REQUIRE(inits.size() == 1);
  CHECK(flat_normal(inits[0].gaussians[0]).dot(Vec3(0, 0, -1)) > 0.99);
}

TEST_CASE("knn mean distance matches brute force") {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> pts;
    const int n = gen::integer(rng, 4, 300);
    for (int i = 0; i < n; ++i) pts.push_back(trial % 2 ? gen::vec3(rng, -1, 1) : Vec3(gen::uniform(rng, -3, 3), 0.01 * gen::uniform(rng, 0, 1), 0));
    const auto fast = knn_mean_distance(pts, 3);
    for (int i = 0; i < n; ++i) {
      std::vector<double> d;
      for (int j = 0; j < n; ++j)
        if (j != i) d.push_back((pts[j] - pts[i]).norm());
      std::sort(d.begin(), d.end());
      CHECK(fast[i] == doctest::Approx((d[0] + d[1] + d[2]) / 3.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("knn mean distance on a regular grid is the spacing") {
  const double s = 0.07;
  std::vector<Vec3> pts;
  for (int x = 0; x < 6; ++x)
    for (int y = 0; y < 5; ++y)
      for (int z = 0; z < 4; ++z) pts.push_back(Vec3(x, y, z) * s);
  for (double d : knn_mean_distance(pts, 3)) CHECK(std::abs(d - s) < 1e-6);
}

TEST_CASE("virtual map properties") {
  // Fronto-parallel plane: lifted points form a regular grid of spacing depth / fx.
  FrameRGBD f = blank_frame(12, 10, CameraPose{});
  f.depth = Image(12, 10, 1, 1.5);
  const GaussianMap m = build_virtual_map({f}, 1);
  REQUIRE(m.gaussians.size() == 120);
  const double s = 1.5 / f.pose.intrinsics.fx;
  for (size_t i = 0; i < m.gaussians.size(); ++i) {
    const Gaussian& g = m.gaussians[i];
    CHECK(g.opacity == 1.0);
    CHECK(g.kind == GaussianKind::Isotropic3D);
    CHECK(g.rotation.coeffs() == Quat::Identity().coeffs());
    const int x = static_cast<int>(i % 12), y = static_cast<int>(i / 12);
    const bool corner = (x == 0 || x == 11) && (y == 0 || y == 9);
    if (!corner) CHECK(std::abs(g.scale.x() - s) < 1e-6);
    CHECK(g.scale.x() > 0);
  }
  const RenderedViews out = render(m, f.pose, Rgb::Zero());
  double total = 0.0;
  for (double a : out.opacity.data()) total += a;
  CHECK(total > 0.0);

  FrameRGBD tiny = blank_frame(4, 4, CameraPose{});
  tiny.depth.at(1, 1) = 1.0;
  tiny.depth.at(2, 1) = 1.0;
  tiny.depth.at(1, 2) = 1.0;
  try {
    build_virtual_map({tiny}, 1);
    FAIL("expected a throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientData);
  }
  tiny.depth.at(2, 2) = 1.0;
  for (const auto& g : build_virtual_map({tiny}, 1).gaussians) CHECK((g.scale.x() > 0 && std::isfinite(g.scale.x())));
  CHECK_THROWS_AS(build_virtual_map({}, 1), Error);
}

TEST_CASE("classify_seen examples") {
  CameraPose cam;
  FrameRGBD f = blank_frame(16, 12, cam);
  f.depth = Image(16, 12, 1, 2.0);
  VoxelGrid g;
  g.epsilon = 0.03;
  g.occupied = {{0, 0, 30}, {0, 0, -30}, {0, 0, 100}};
  const auto v = classify_seen(g, {f});
  CHECK(v[0] == Visibility::Seen);
  CHECK(v[1] == Visibility::Unseen);
  CHECK(v[2] == Visibility::Unseen);  // behind the surface
}

TEST_CASE("classify_seen matches a brute-force ray test") {
  std::mt19937_64 rng(27);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<FrameRGBD> frames;
    const int nf = gen::integer(rng, 1, 4);
    for (int i = 0; i < nf; ++i) {
      CameraPose p = look_at(gen::vec3(rng, -1, 1), gen::vec3(rng, -0.3, 0.3) + Vec3(0, 0, 2), make_intrinsics(20, 16, 60));
      FrameRGBD f = blank_frame(20, 16, p);
      for (double& d : f.depth.data()) d = gen::integer(rng, 0, 9) == 0 ? 0.0 : gen::uniform(rng, 0.5, 4.0);
      frames.push_back(f);
    }
    VoxelGrid g;
    g.epsilon = 0.05;
    for (int a = 0; a < 400; ++a) g.occupied.push_back({gen::integer(rng, -40, 40), gen::integer(rng, -40, 40), gen::integer(rng, -10, 80)});
    const auto v = classify_seen(g, frames);
    for (size_t a = 0; a < g.occupied.size(); ++a) {
      bool seen = false;
      for (const auto& f : frames) seen = seen || seen_by_ray_test(g.center(a), f, g.epsilon);
      CHECK((v[a] == Visibility::Seen) == seen);
    }
  }
}

TEST_CASE("global map is anchored and extension adds only new cells") {
  CameraPose cam;
  FrameRGBD f = blank_frame(24, 18, cam);
  f.depth = Image(24, 18, 1, 1.0);
  GaussianMap m = build_global_map({f}, 2, 0.03);
  CHECK_NOTHROW(m.validate());
  const size_t anchors = m.anchors.size();
  CHECK(anchors > 0);
  CHECK(m.gaussians.size() == anchors * 10);
  CHECK(extend_global_map(m, {f}, 2) == 0);
  FrameRGBD far = f;
  far.depth = Image(24, 18, 1, 2.0);
  CHECK(extend_global_map(m, {far}, 2) > 0);
  CHECK_NOTHROW(m.validate());
  const GaussianMap fresh = build_global_map({f}, 2, 0.03);
  for (size_t i = 0; i < anchors; ++i) CHECK(m.anchors[i] == fresh.anchors[i]);
}
