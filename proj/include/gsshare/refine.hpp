#pragma once

// Gradient descent on Gaussian colors and opacities with geometry held fixed.

#include <filesystem>
#include <vector>

#include "gsshare/core.hpp"
#include "gsshare/metrics.hpp"
#include "gsshare/pseudo_gt.hpp"
#include "gsshare/render.hpp"

namespace gsshare {

enum class ImageObjective { CharbonnierL1, L2 };

// sqrt(d^2 + eps) smooths |d| at zero.
inline constexpr double kCharbonnierEps = 1e-6;

struct ColorOpacityGrad {
  double loss = 0.0;            // sum over pixels of conf * sum over channels of rho(C - target)
  std::vector<Rgb> d_color;     // one per map Gaussian
  std::vector<double> d_opacity;
  std::vector<double> blend_weight;  // sum over pixels of alpha_i * T_i
};

// Exact partials of the composite over a black background. `confidence` may be empty (all ones).
// Gaussians that do not render (zero opacity, behind the camera, degenerate) get zero gradient.
ColorOpacityGrad grad_color_opacity(const GaussianMap& map, const Image& target,
                                    const Image& confidence, const CameraPose& cam,
                                    ImageObjective objective = ImageObjective::CharbonnierL1,
                                    const RenderOptions& opts = {});

// Descent objective: w_total_t * w_obs * mean smoothed L1 over frames
// + w_total_v * mean confidence-weighted smoothed L1 over pseudo views.
double refine_objective(const GaussianMap& map, const std::vector<FrameRGBD>& frames,
                        const std::vector<PseudoGT>& pseudo, const LossWeights& w,
                        const RenderOptions& opts = {});

struct RefineResult {
  GaussianMap map;
  std::vector<double> trace;  // objective before the first step and after every accepted iteration
  int backtracks = 0;
};

// Projected gradient descent with a diagonal preconditioner (accumulated blend weight),
// clamping to [0,1] after each step. A step that raises the objective is halved up to 20 times;
// if none helps, descent stops early with the current iterate. Each iteration starts from twice
// the last accepted step, capped at `step_size`. Losses come from the same pass as the gradients, so an
// accepted candidate's gradient is reused by the next iteration.
RefineResult refine_map(const GaussianMap& map, const std::vector<FrameRGBD>& frames,
                        const std::vector<PseudoGT>& pseudo, const LossWeights& w, int iters = 200,
                        double step_size = 0.05, const RenderOptions& opts = {});

void write_loss_trace(const std::filesystem::path& path, const std::vector<double>& trace);

}  // namespace gsshare
