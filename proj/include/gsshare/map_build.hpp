#pragma once

#include <filesystem>
#include <vector>

#include "gsshare/core.hpp"

namespace gsshare {

struct ColoredPointCloud {
  std::vector<Vec3> points;
  std::vector<Rgb> colors;
  std::vector<int> source_frame;

  size_t size() const { return points.size(); }
  void append(const ColoredPointCloud& other);
};

// Occupied cells, sorted lexicographically and unique. Cell centers are cell * epsilon.
struct VoxelGrid {
  double epsilon = kDefaultEpsilon;
  std::vector<GridCell> occupied;

  Vec3 center(size_t i) const {
    return Vec3(occupied[i][0], occupied[i][1], occupied[i][2]) * epsilon;
  }
};

GridCell voxel_of(const Vec3& p, double epsilon);

// One point per sampled pixel with valid depth. `frame_index` is stored as source_frame.
ColoredPointCloud lift_rgbd(const FrameRGBD& frame, int stride = 4, int frame_index = 0);
ColoredPointCloud lift_frames(const std::vector<FrameRGBD>& frames, int stride = 4);

VoxelGrid voxelize(const ColoredPointCloud& cloud, double epsilon);
// Cell centers as a colorless cloud, e.g. to check that voxelize is idempotent.
ColoredPointCloud grid_centers(const VoxelGrid& grid);

struct AnchorInit {
  GridCell cell{};
  AnchorFeature feature;
  std::vector<Gaussian> gaussians;  // K entries
};

struct AnchorInitOptions {
  int k = kDefaultAnchorK;
  double initial_opacity = 0.1;
  // In-plane flat scale = factor * mean distance to the 3 nearest anchor centers.
  double scale_factor = 0.5;
};

// `frames` supplies viewing directions for voxels too sparse for a PCA normal; it may be empty.
std::vector<AnchorInit> init_anchors(const VoxelGrid& grid, const ColoredPointCloud& cloud,
                                     const std::vector<FrameRGBD>& frames,
                                     const AnchorInitOptions& opts = {});

// Anchored map in grid order from the lifted frames.
GaussianMap build_global_map(const std::vector<FrameRGBD>& frames, int stride, double epsilon,
                             const AnchorInitOptions& opts = {});

// Appends anchors for cells of `frames` that `map` does not already own. Existing anchors,
// their order and their Gaussians are untouched. New anchors are appended in grid order.
// Returns the number of anchors added.
size_t extend_global_map(GaussianMap& map, const std::vector<FrameRGBD>& frames, int stride,
                         const AnchorInitOptions& opts = {});

// Isotropic, opacity-1 map straight from the lifted points; scale = mean 3-NN distance.
GaussianMap build_virtual_map(const std::vector<FrameRGBD>& frames, int stride = 4);

// Mean distance from each point to its k nearest other points.
std::vector<double> knn_mean_distance(const std::vector<Vec3>& points, int k);

enum class Visibility : uint8_t { Unseen = 0, Seen = 1 };

// Per cell of `grid`: Seen iff the center projects into some frame with camera depth in
// [0.05, frame depth at that pixel + epsilon].
std::vector<Visibility> classify_seen(const VoxelGrid& grid, const std::vector<FrameRGBD>& frames);

void write_ply(const std::filesystem::path& path, const ColoredPointCloud& cloud);

}  // namespace gsshare
