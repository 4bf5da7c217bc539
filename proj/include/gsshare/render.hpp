#pragma once

#include <cstdint>
#include <vector>

#include "gsshare/core.hpp"
#include "gsshare/simd.hpp"

namespace gsshare {

struct RenderedViews {
  Image color;    // H x W x 3
  Image depth;    // H x W, 0 where nothing was hit
  Image opacity;  // H x W, accumulated alpha
  Image normal;   // H x W x 3, world space, camera facing; zero where invalid
  std::vector<uint8_t> normal_valid;
  int skipped_degenerate = 0;
};

// Projected covariances with condition number above this are skipped.
inline constexpr double kMaxProjectedCondition = 1e8;
inline constexpr double kNearPlane = 0.01;
// The projection Jacobian is evaluated with x/z and y/z clamped to this multiple of the
// half field of view, so splats far outside the frustum keep bounded footprints.
inline constexpr double kJacobianClampFactor = 1.3;
// Tiled footprints extend until opacity * falloff drops below this. Small enough that the tiled
// renderer matches the brute-force one to within 1e-6, normalized buffers included.
inline constexpr double kFootprintAlphaCutoff = 1e-13;
// Depth (accumulated alpha) and normal (flat blend weight) are normalized by a weight; below this
// the pixel's depth is 0 and its normal invalid, since a handful of faint tails is not a surface.
inline constexpr double kMinNormalizedWeight = 1e-3;

struct RenderOptions {
  // Larger cutoffs shrink footprints and trade exactness for speed (1/255 is roughly 3 sigma).
  double alpha_cutoff = kFootprintAlphaCutoff;
  int tile_size = 16;
};

// Front-to-back sorted splats plus the per-tile index lists used by the tiled renderer.
// Shared with the gradient code so that forward and backward passes see identical splats.
struct PreparedView {
  std::vector<simd::Splat> splats;
  std::vector<std::vector<uint32_t>> tiles;
  int tile_size = 16;
  int tiles_x = 0;
  int tiles_y = 0;
  int skipped_degenerate = 0;
};

PreparedView prepare_view(const GaussianMap& map, const CameraPose& cam, const RenderOptions& opts = {});

RenderedViews render(const GaussianMap& map, const CameraPose& cam, const Rgb& background,
                     const RenderOptions& opts = {});
// Same contract as render(): every pixel visits every Gaussian, no tiles or culling.
RenderedViews render_bruteforce(const GaussianMap& map, const CameraPose& cam,
                                const Rgb& background);

// Depth-then-content ordering, so sorting does not depend on input order.
bool gaussian_front_to_back(double depth_a, const Gaussian& a, double depth_b, const Gaussian& b);

}  // namespace gsshare
