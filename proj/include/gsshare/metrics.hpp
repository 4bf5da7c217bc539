#pragma once

#include <string>
#include <vector>

#include "gsshare/core.hpp"
#include "gsshare/pseudo_gt.hpp"
#include "gsshare/render.hpp"

namespace gsshare {

inline constexpr double kPsnrCap = 99.0;
inline constexpr double kDefaultEdgeThreshold = 0.1;

double mse(const Image& a, const Image& b);
// 10 log10(1 / MSE) for [0,1] images; kPsnrCap when MSE < 1e-10.
double psnr(const Image& a, const Image& b);
// Mean over channels of the valid-window SSIM map (11x11 Gaussian, sigma 1.5, k1 .01, k2 .03).
// Images smaller than the window use the largest odd window that fits.
double ssim(const Image& a, const Image& b);
double l1(const Image& a, const Image& b);
// Mean |da - db| over pixels with valid[i] != 0. Throws InsufficientData when none are valid.
double depth_l1(const Image& da, const Image& db, const std::vector<uint8_t>& valid);

struct NormalLoss {
  double value = 0.0;
  size_t pixels = 0;
  bool no_valid_pixels = false;
};

// Unit normals from central differences of the back-projected depth, facing the camera;
// invalid (zero) where a neighbor lacks depth or at the border.
Image normals_from_depth(const Image& depth, const CameraPose& cam, std::vector<uint8_t>* valid = nullptr);

// Mean (1 - <n_rendered, n_gt>) over pixels with both normals valid and
// |rendered depth - gt depth| <= edge_threshold.
NormalLoss normal_loss(const RenderedViews& rendered, const Image& gt_depth, const CameraPose& cam,
                       double edge_threshold = kDefaultEdgeThreshold);

// Mean over Gaussians of the product of the two largest scale components.
double scale_regularization(const GaussianMap& map);

struct LossWeights {
  double w_obs = 1.0;
  double w_ssim = 0.05;
  double w_reg = 0.1;
  double w_depth = 1.0;
  double w_normal = 0.1;
  double w_total_t = 1.0;
  double w_total_v = 0.1;
  double lambda_q = 0.0025;

  void validate() const;
};

struct LossBreakdown {
  // Unweighted terms, averaged over frames (reg is a map property).
  double l1 = 0.0;
  double ssim_term = 0.0;  // 1 - ssim
  double reg = 0.0;
  double depth = 0.0;
  double normal = 0.0;
  // weight * term, in the order above; sums to total.
  std::vector<double> weighted;
  double total = 0.0;
};

LossBreakdown training_loss(const GaussianMap& map, const std::vector<FrameRGBD>& frames,
                            const LossWeights& w);

struct TotalLoss {
  double training = 0.0;  // L^t
  double virtual_mean = 0.0;  // mean virtual_loss over the pseudo set (0 when empty)
  double total = 0.0;
};

TotalLoss total_loss(const GaussianMap& map, const std::vector<FrameRGBD>& frames,
                     const std::vector<PseudoGT>& pseudo, const LossWeights& w);

double update_objective(double bits, double distortion, double lambda_q);

// Opacity below `threshold` is set to 0; the slot stays so anchor ordering is unchanged.
GaussianMap prune_by_opacity(const GaussianMap& map, double threshold, size_t* pruned = nullptr);

std::string metrics_csv_header();
std::string metrics_csv_row(uint32_t stage_id, const std::string& set, double psnr_db, double ssim,
                            double depth_l1_cm, size_t bytes);

}  // namespace gsshare
