#include "gsshare/map_build.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include <Eigen/Eigenvalues>

namespace gsshare {

void ColoredPointCloud::append(const ColoredPointCloud& other) {
  points.insert(points.end(), other.points.begin(), other.points.end());
  colors.insert(colors.end(), other.colors.begin(), other.colors.end());
  source_frame.insert(source_frame.end(), other.source_frame.begin(), other.source_frame.end());
}

GridCell voxel_of(const Vec3& p, double epsilon) {
  return {static_cast<int32_t>(std::lround(p.x() / epsilon)),
          static_cast<int32_t>(std::lround(p.y() / epsilon)),
          static_cast<int32_t>(std::lround(p.z() / epsilon))};
}

ColoredPointCloud lift_rgbd(const FrameRGBD& frame, int stride, int frame_index) {
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
  ColoredPointCloud cloud;
  for (int y = 0; y < frame.depth.height(); y += stride) {
    for (int x = 0; x < frame.depth.width(); x += stride) {
      const double d = frame.depth.at(x, y);
      if (!(d > 0.0) || !std::isfinite(d)) continue;
      cloud.points.push_back(lift_pixel(x, y, d, frame.pose));
      cloud.colors.emplace_back(frame.color.at(x, y, 0), frame.color.at(x, y, 1),
                                frame.color.at(x, y, 2));
      cloud.source_frame.push_back(frame_index);
    }
  }
  return cloud;
}

ColoredPointCloud lift_frames(const std::vector<FrameRGBD>& frames, int stride) {
  ColoredPointCloud cloud;
  for (size_t i = 0; i < frames.size(); ++i)
    cloud.append(lift_rgbd(frames[i], stride, static_cast<int>(i)));
  return cloud;
}

VoxelGrid voxelize(const ColoredPointCloud& cloud, double epsilon) {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
  VoxelGrid grid;
  grid.epsilon = epsilon;
  grid.occupied.reserve(cloud.size());
  for (const auto& p : cloud.points) grid.occupied.push_back(voxel_of(p, epsilon));
  std::sort(grid.occupied.begin(), grid.occupied.end());
  grid.occupied.erase(std::unique(grid.occupied.begin(), grid.occupied.end()), grid.occupied.end());
  return grid;
}

ColoredPointCloud grid_centers(const VoxelGrid& grid) {
  ColoredPointCloud cloud;
  for (size_t i = 0; i < grid.occupied.size(); ++i) {
    cloud.points.push_back(grid.center(i));
    cloud.colors.push_back(Rgb::Zero());
    cloud.source_frame.push_back(0);
  }
  return cloud;
}

std::vector<double> knn_mean_distance(const std::vector<Vec3>& points, int k) {
  const size_t n = points.size();
  std::vector<double> out(n, 0.0);
  if (n < 2 || k < 1) return out;
  const size_t kk = std::min<size_t>(k, n - 1);

  Vec3 lo = points[0], hi = points[0];
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double extent = std::max((hi - lo).maxCoeff(), 1e-9);
  const double h = std::max(extent / std::cbrt(static_cast<double>(n)), 1e-9);

  auto key = [](int64_t x, int64_t y, int64_t z) {
    return (x * 73856093) ^ (y * 19349663) ^ (z * 83492791);
  };
  auto cell = [&](const Vec3& p) {
    return std::array<int64_t, 3>{static_cast<int64_t>(std::floor((p.x() - lo.x()) / h)),
                                  static_cast<int64_t>(std::floor((p.y() - lo.y()) / h)),
                                  static_cast<int64_t>(std::floor((p.z() - lo.z()) / h))};
  };
  std::unordered_map<int64_t, std::vector<std::pair<std::array<int64_t, 3>, uint32_t>>> buckets;
  for (uint32_t i = 0; i < n; ++i) {
    const auto c = cell(points[i]);
    buckets[key(c[0], c[1], c[2])].push_back({c, i});
  }
  const int64_t max_ring = static_cast<int64_t>(std::ceil(extent / h)) + 1;

  std::vector<double> best;
  for (size_t i = 0; i < n; ++i) {
    best.clear();
    const auto c = cell(points[i]);
    for (int64_t r = 0; r <= max_ring; ++r) {
      for (int64_t dx = -r; dx <= r; ++dx)
        for (int64_t dy = -r; dy <= r; ++dy)
          for (int64_t dz = -r; dz <= r; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            const std::array<int64_t, 3> q{c[0] + dx, c[1] + dy, c[2] + dz};
            auto it = buckets.find(key(q[0], q[1], q[2]));
            if (it == buckets.end()) continue;
            for (const auto& [qc, j] : it->second) {
              if (qc != q || j == i) continue;
              best.push_back((points[j] - points[i]).norm());
            }
          }
      if (best.size() >= kk) {
        std::nth_element(best.begin(), best.begin() + (kk - 1), best.end());
        if (best[kk - 1] <= static_cast<double>(r) * h) break;
      }
    }
    std::partial_sort(best.begin(), best.begin() + kk, best.end());
    out[i] = std::accumulate(best.begin(), best.begin() + kk, 0.0) / static_cast<double>(kk);
  }
  return out;
}

namespace {

// Unit vector orthogonal to n.
Vec3 any_orthogonal(const Vec3& n) {
  const Vec3 a = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  return n.cross(a).normalized();
}

}  // namespace

std::vector<AnchorInit> init_anchors(const VoxelGrid& grid, const ColoredPointCloud& cloud,
                                     const std::vector<FrameRGBD>& frames,
                                     const AnchorInitOptions& opts) {
  if (opts.k < 1) throw Error(ErrorCode::InvalidArgument, "K must be >= 1");
  const double eps = grid.epsilon;
  std::map<GridCell, std::vector<size_t>> members;
  for (size_t i = 0; i < cloud.size(); ++i) members[voxel_of(cloud.points[i], eps)].push_back(i);

  std::vector<Vec3> centers;
  centers.reserve(grid.occupied.size());
  for (size_t a = 0; a < grid.occupied.size(); ++a) centers.push_back(grid.center(a));
  std::vector<double> spacing = knn_mean_distance(centers, 3);

  std::vector<AnchorInit> out;
  out.reserve(grid.occupied.size());
  for (size_t a = 0; a < grid.occupied.size(); ++a) {
    AnchorInit init;
    init.cell = grid.occupied[a];
    const Vec3 anchor = centers[a];
    auto it = members.find(init.cell);
    static const std::vector<size_t> kNone;
    const std::vector<size_t>& idx = it == members.end() ? kNone : it->second;

    Vec3 centroid = anchor;
    Rgb color = Rgb::Constant(0.5);
    if (!idx.empty()) {
      centroid.setZero();
      color.setZero();
      for (size_t i : idx) {
        centroid += cloud.points[i];
        color += cloud.colors[i];
      }
      centroid /= static_cast<double>(idx.size());
      color /= static_cast<double>(idx.size());
    }

    // Direction towards the cameras that observed this voxel.
    Vec3 toward_cams = Vec3::Zero();
    for (size_t i : idx) {
      const int f = cloud.source_frame[i];
      if (f >= 0 && static_cast<size_t>(f) < frames.size())
        toward_cams += (frames[f].pose.translation - cloud.points[i]).normalized();
    }
    Vec3 normal = toward_cams.norm() > 1e-12 ? toward_cams.normalized() : Vec3::UnitZ();
    if (idx.size() >= 3) {
      Mat3 cov = Mat3::Zero();
      for (size_t i : idx) {
        const Vec3 d = cloud.points[i] - centroid;
        cov += d * d.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
      const Vec3 ev = eig.eigenvalues();
      // Needs a proper plane: two spread directions and a clearly thinner third.
      if (ev[1] > 1e-12 && ev[0] <= 0.1 * ev[1]) {
        Vec3 n = eig.eigenvectors().col(0).normalized();
        if (toward_cams.norm() > 1e-12 && n.dot(toward_cams) < 0.0) n = -n;
        normal = n;
      }
    }

    double scale = eps * opts.scale_factor;
    if (centers.size() >= 4) scale = opts.scale_factor * spacing[a];
    scale = std::clamp(scale, 0.1 * eps, 2.0 * eps);

    const Vec3 e1 = any_orthogonal(normal);
    const Vec3 e2 = normal.cross(e1);
    std::vector<Vec3> positions;
    const size_t n = idx.size();
    if (n >= static_cast<size_t>(opts.k)) {
      for (int j = 0; j < opts.k; ++j) positions.push_back(cloud.points[idx[j * n / opts.k]]);
    } else {
      for (size_t i : idx) positions.push_back(cloud.points[i]);
      const int missing = opts.k - static_cast<int>(n);
      for (int j = 0; j < missing; ++j) {
        const double t = 2.0 * M_PI * j / missing;
        positions.push_back(centroid + 0.25 * eps * (std::cos(t) * e1 + std::sin(t) * e2));
      }
    }

    init.feature.anchor_position = anchor;
    init.feature.scales.resize(opts.k, 3);
    init.feature.offsets.resize(opts.k, 3);
    for (int j = 0; j < opts.k; ++j) {
      Gaussian g = make_flat(positions[j], scale, normal, opts.initial_opacity, color);
      init.feature.scales.row(j) = g.scale.transpose();
      init.feature.offsets.row(j) = (g.position - anchor).transpose();
      init.gaussians.push_back(g);
    }
    out.push_back(std::move(init));
  }
  return out;
}

GaussianMap build_global_map(const std::vector<FrameRGBD>& frames, int stride, double epsilon,
                             const AnchorInitOptions& opts) {
  GaussianMap map;
  map.anchor_k = opts.k;
  map.epsilon = epsilon;
  extend_global_map(map, frames, stride, opts);
  return map;
}

size_t extend_global_map(GaussianMap& map, const std::vector<FrameRGBD>& frames, int stride,
                         const AnchorInitOptions& opts) {
  if (opts.k != map.anchor_k) throw Error(ErrorCode::InvalidArgument, "K does not match map");
  const ColoredPointCloud cloud = lift_frames(frames, stride);
  VoxelGrid grid = voxelize(cloud, map.epsilon);
  const std::set<GridCell> owned(map.anchors.begin(), map.anchors.end());
  std::erase_if(grid.occupied, [&](const GridCell& c) { return owned.count(c) > 0; });
  const std::vector<AnchorInit> inits = init_anchors(grid, cloud, frames, opts);
  for (const auto& init : inits) {
    map.anchors.push_back(init.cell);
    map.gaussians.insert(map.gaussians.end(), init.gaussians.begin(), init.gaussians.end());
  }
  return inits.size();
}

GaussianMap build_virtual_map(const std::vector<FrameRGBD>& frames, int stride) {
  if (frames.empty()) throw Error(ErrorCode::InsufficientData, "no frames");
  const ColoredPointCloud cloud = lift_frames(frames, stride);
  if (cloud.size() < 4) throw Error(ErrorCode::InsufficientData, "fewer than 4 points");
  const std::vector<double> dist = knn_mean_distance(cloud.points, 3);
  GaussianMap map;
  map.gaussians.reserve(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    const double s = std::max(dist[i], 1e-4);
    map.gaussians.push_back(make_isotropic(cloud.points[i], s, 1.0, cloud.colors[i]));
  }
  return map;
}

std::vector<Visibility> classify_seen(const VoxelGrid& grid, const std::vector<FrameRGBD>& frames) {
  std::vector<Visibility> out(grid.occupied.size(), Visibility::Unseen);
  for (size_t a = 0; a < grid.occupied.size(); ++a) {
    const Vec3 c = grid.center(a);
    for (const auto& f : frames) {
      const Projection p = project(c, f.pose);
      if (!p.in_frustum || p.z < 0.05) continue;
      const int px = std::clamp(static_cast<int>(std::lround(p.u)), 0, f.depth.width() - 1);
      const int py = std::clamp(static_cast<int>(std::lround(p.v)), 0, f.depth.height() - 1);
      const double d = f.depth.at(px, py);
      if (d > 0.0 && p.z <= d + grid.epsilon) {
        out[a] = Visibility::Seen;
        break;
      }
    }
  }
  return out;
}

void write_ply(const std::filesystem::path& path, const ColoredPointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const auto& c = cloud.colors[i];
    out << p.x() << ' ' << p.y() << ' ' << p.z() << ' '
        << std::lround(std::clamp(c.x(), 0.0, 1.0) * 255) << ' '
        << std::lround(std::clamp(c.y(), 0.0, 1.0) * 255) << ' '
        << std::lround(std::clamp(c.z(), 0.0, 1.0) * 255) << '\n';
  }
}

}  // namespace gsshare
