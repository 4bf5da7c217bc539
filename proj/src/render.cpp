#include "gsshare/render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

namespace gsshare {

namespace {

// Lexicographic comparison over every stored attribute; used only to break depth ties.
int compare_content(const Gaussian& a, const Gaussian& b) {
  const double fa[] = {a.position.x(), a.position.y(), a.position.z(), a.color.x(), a.color.y(),
                       a.color.z(), a.opacity, a.scale.x(), a.scale.y(), a.scale.z(),
                       a.rotation.w(), a.rotation.x(), a.rotation.y(), a.rotation.z()};
  const double fb[] = {b.position.x(), b.position.y(), b.position.z(), b.color.x(), b.color.y(),
                       b.color.z(), b.opacity, b.scale.x(), b.scale.y(), b.scale.z(),
                       b.rotation.w(), b.rotation.x(), b.rotation.y(), b.rotation.z()};
  for (size_t i = 0; i < std::size(fa); ++i) {
    if (fa[i] < fb[i]) return -1;
    if (fa[i] > fb[i]) return 1;
  }
  return static_cast<int>(a.kind) - static_cast<int>(b.kind);
}

void finalize_pixel(const simd::PixelAccum& acc, const Rgb& bg, RenderedViews& out, int x, int y) {
  const double alpha = 1.0 - acc.transmittance;
  for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = acc.color[c] + acc.transmittance * bg[c];
  out.opacity.at(x, y) = alpha;
  out.depth.at(x, y) = alpha >= kMinNormalizedWeight ? acc.depth / alpha : 0.0;
  const double n2 = acc.normal[0] * acc.normal[0] + acc.normal[1] * acc.normal[1] +
                    acc.normal[2] * acc.normal[2];
  if (acc.normal_weight >= kMinNormalizedWeight && n2 > 0.0) {
    const double inv = 1.0 / std::sqrt(n2);
    for (int c = 0; c < 3; ++c) out.normal.at(x, y, c) = acc.normal[c] * inv;
    out.normal_valid[static_cast<size_t>(y) * out.color.width() + x] = 1;
  }
}

RenderedViews allocate_views(const CameraIntrinsics& k) {
  RenderedViews out;
  out.color = Image(k.width, k.height, 3);
  out.depth = Image(k.width, k.height, 1);
  out.opacity = Image(k.width, k.height, 1);
  out.normal = Image(k.width, k.height, 3);
  out.normal_valid.assign(static_cast<size_t>(k.width) * k.height, 0);
  return out;
}

}  // namespace

bool gaussian_front_to_back(double depth_a, const Gaussian& a, double depth_b, const Gaussian& b) {
  if (depth_a != depth_b) return depth_a < depth_b;
  return compare_content(a, b) < 0;
}

PreparedView prepare_view(const GaussianMap& map, const CameraPose& cam, const RenderOptions& opts) {
  if (opts.tile_size < 1) throw Error(ErrorCode::InvalidArgument, "tile size must be positive");
  if (!(opts.alpha_cutoff > 0.0 && opts.alpha_cutoff < 1.0))
    throw Error(ErrorCode::InvalidArgument, "alpha cutoff must be in (0, 1)");
  const int tile_size = opts.tile_size;
  PreparedView view;
  view.tile_size = tile_size;
  const auto& k = cam.intrinsics;
  view.tiles_x = (k.width + tile_size - 1) / tile_size;
  view.tiles_y = (k.height + tile_size - 1) / tile_size;
  view.tiles.resize(static_cast<size_t>(view.tiles_x) * view.tiles_y);

  const Mat3 w2c = cam.world_to_camera_rotation();
  const double lim_x = kJacobianClampFactor * 0.5 * k.width / k.fx;
  const double lim_y = kJacobianClampFactor * 0.5 * k.height / k.fy;
  view.splats.reserve(map.gaussians.size());
  for (size_t i = 0; i < map.gaussians.size(); ++i) {
    const Gaussian& g = map.gaussians[i];
    if (!(g.opacity > 0.0)) continue;
    const Vec3 pc = w2c * (g.position - cam.translation);
    if (pc.z() <= kNearPlane) continue;

    const Mat3 cov_cam = w2c * covariance(g) * w2c.transpose();
    const double iz = 1.0 / pc.z();
    const double tx = std::clamp(pc.x() * iz, -lim_x, lim_x), ty = std::clamp(pc.y() * iz, -lim_y, lim_y);
    const double j00 = k.fx * iz, j02 = -k.fx * tx * iz;
    const double j11 = k.fy * iz, j12 = -k.fy * ty * iz;
    // Sigma2D = J * cov_cam * J^T with J = [j00 0 j02; 0 j11 j12].
    const double a = j00 * j00 * cov_cam(0, 0) + 2.0 * j00 * j02 * cov_cam(0, 2) +
                     j02 * j02 * cov_cam(2, 2);
    const double c = j11 * j11 * cov_cam(1, 1) + 2.0 * j11 * j12 * cov_cam(1, 2) +
                     j12 * j12 * cov_cam(2, 2);
    const double b = j00 * j11 * cov_cam(0, 1) + j00 * j12 * cov_cam(0, 2) +
                     j02 * j11 * cov_cam(2, 1) + j02 * j12 * cov_cam(2, 2);
    const double det = a * c - b * b;
    const double mid = 0.5 * (a + c);
    const double disc = std::sqrt(std::max(0.0, mid * mid - det));
    const double lmax = mid + disc, lmin = mid - disc;
    if (!(lmin > 0.0) || lmax > kMaxProjectedCondition * lmin || !(det > 0.0)) {
      ++view.skipped_degenerate;
      continue;
    }
    if (g.opacity <= opts.alpha_cutoff) continue;

    simd::Splat s;
    s.u = k.fx * pc.x() * iz + k.cx;
    s.v = k.fy * pc.y() * iz + k.cy;
    s.conic_a = c / det;
    s.conic_b = -b / det;
    s.conic_c = a / det;
    s.opacity = g.opacity;
    for (int ch = 0; ch < 3; ++ch) s.color[ch] = g.color[ch];
    s.depth = pc.z();
    if (g.kind == GaussianKind::Flat2D) {
      Vec3 n = flat_normal(g);
      if (n.dot(cam.translation - g.position) < 0.0) n = -n;
      for (int ch = 0; ch < 3; ++ch) s.normal[ch] = n[ch];
      s.normal_weight = 1.0;
    }
    s.radius = std::sqrt(2.0 * lmax * std::log(g.opacity / opts.alpha_cutoff));
    s.source = static_cast<uint32_t>(i);
    view.splats.push_back(s);
  }

  std::sort(view.splats.begin(), view.splats.end(), [&](const simd::Splat& l, const simd::Splat& r) {
    return gaussian_front_to_back(l.depth, map.gaussians[l.source], r.depth, map.gaussians[r.source]);
  });

  for (uint32_t idx = 0; idx < view.splats.size(); ++idx) {
    const simd::Splat& s = view.splats[idx];
    const int tx0 = std::max(0, static_cast<int>(std::floor((s.u - s.radius) / tile_size)));
    const int tx1 = std::min(view.tiles_x - 1, static_cast<int>(std::floor((s.u + s.radius) / tile_size)));
    const int ty0 = std::max(0, static_cast<int>(std::floor((s.v - s.radius) / tile_size)));
    const int ty1 = std::min(view.tiles_y - 1, static_cast<int>(std::floor((s.v + s.radius) / tile_size)));
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx) view.tiles[static_cast<size_t>(ty) * view.tiles_x + tx].push_back(idx);
  }
  return view;
}

RenderedViews render(const GaussianMap& map, const CameraPose& cam, const Rgb& background,
                     const RenderOptions& opts) {
  const auto& k = cam.intrinsics;
  RenderedViews out = allocate_views(k);
  const PreparedView view = prepare_view(map, cam, opts);
  out.skipped_degenerate = view.skipped_degenerate;
  const auto& kern = simd::kernels();
  const int ntiles = view.tiles_x * view.tiles_y;

#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < ntiles; ++t) {
    const int tx = t % view.tiles_x, ty = t / view.tiles_x;
    const int x0 = tx * view.tile_size;
    const int x1 = std::min(k.width, x0 + view.tile_size);
    const int y1 = std::min(k.height, (ty + 1) * view.tile_size);
    const auto& list = view.tiles[t];
    std::vector<simd::PixelAccum> row(x1 - x0);
    std::vector<uint32_t> row_list;
    row_list.reserve(list.size());
    for (int y = ty * view.tile_size; y < y1; ++y) {
      row_list.clear();
      for (uint32_t idx : list) {
        const simd::Splat& s = view.splats[idx];
        if (!(y - s.v > s.radius || s.v - y > s.radius)) row_list.push_back(idx);
      }
      std::fill(row.begin(), row.end(), simd::PixelAccum{});
      kern.composite_span(view.splats.data(), row_list.data(), row_list.size(), y, x0, x1 - x0, row.data());
      for (int x = x0; x < x1; ++x) finalize_pixel(row[x - x0], background, out, x, y);
    }
  }
  return out;
}

RenderedViews render_bruteforce(const GaussianMap& map, const CameraPose& cam,
                                const Rgb& background) {
  const auto& k = cam.intrinsics;
  RenderedViews out = allocate_views(k);

  struct Entry {
    size_t index;
    double depth;
    Eigen::Vector2d center;
    Eigen::Matrix2d inv_cov;
    Vec3 normal;
    bool flat;
  };
  std::vector<Entry> entries;
  const Mat3 w2c = cam.world_to_camera_rotation();
  for (size_t i = 0; i < map.gaussians.size(); ++i) {
    const Gaussian& g = map.gaussians[i];
    if (!(g.opacity > 0.0)) continue;
    const Vec3 pc = w2c * (g.position - cam.translation);
    if (pc.z() <= kNearPlane) continue;
    const Eigen::Array2d half_fov(0.5 * k.width / k.fx, 0.5 * k.height / k.fy);
    const Eigen::Array2d t = (pc.head<2>().array() / pc.z()).max(-kJacobianClampFactor * half_fov).min(kJacobianClampFactor * half_fov);
    Eigen::Matrix<double, 2, 3> jac;
    jac << k.fx / pc.z(), 0.0, -k.fx * t[0] / pc.z(),
        0.0, k.fy / pc.z(), -k.fy * t[1] / pc.z();
    const Eigen::Matrix<double, 2, 3> m = jac * w2c;
    Eigen::Matrix2d cov2 = m * covariance(g) * m.transpose();
    cov2 = 0.5 * (cov2 + cov2.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov2, Eigen::EigenvaluesOnly);
    const double lmin = eig.eigenvalues()[0], lmax = eig.eigenvalues()[1];
    if (!(lmin > 0.0) || lmax > kMaxProjectedCondition * lmin) {
      ++out.skipped_degenerate;
      continue;
    }
    Entry e;
    e.index = i;
    e.depth = pc.z();
    e.center = Eigen::Vector2d(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
    e.inv_cov = cov2.inverse();
    e.flat = g.kind == GaussianKind::Flat2D;
    e.normal = rotation_matrix(g.rotation) * Vec3::UnitZ();
    if (e.normal.dot(cam.translation - g.position) < 0.0) e.normal = -e.normal;
    entries.push_back(e);
  }
  std::sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
    return gaussian_front_to_back(a.depth, map.gaussians[a.index], b.depth, map.gaussians[b.index]);
  });

  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      simd::PixelAccum acc;
      for (const Entry& e : entries) {
        if (acc.transmittance < simd::kTerminateTransmittance) break;
        const Gaussian& g = map.gaussians[e.index];
        const Eigen::Vector2d d = Eigen::Vector2d(x, y) - e.center;
        const double power = std::min(0.0, -0.5 * d.dot(e.inv_cov * d));
        const double alpha = g.opacity * std::exp(power);
        const double w = alpha * acc.transmittance;
        for (int c = 0; c < 3; ++c) acc.color[c] += w * g.color[c];
        acc.depth += w * e.depth;
        if (e.flat) {
          for (int c = 0; c < 3; ++c) acc.normal[c] += w * e.normal[c];
          acc.normal_weight += w;
        }
        acc.transmittance *= 1.0 - alpha;
      }
      finalize_pixel(acc, background, out, x, y);
    }
  }
  return out;
}

}  // namespace gsshare
