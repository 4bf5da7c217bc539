#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "gsshare/core.hpp"
#include "gsshare/pseudo_gt.hpp"
#include "gsshare/render.hpp"

namespace gsshare {

inline constexpr double kCloseRotationDeg = 10.0;
inline constexpr double kCloseTranslationM = 0.3;
inline constexpr double kDefaultHoleThreshold = 0.5;
// Hole-filled pixels below this virtual opacity get zero confidence.
inline constexpr double kUnrecoverableOpacity = 0.1;

// True when `pose` differs from every input by >= 10 degrees of rotation or >= 0.3 m.
bool is_extrapolated(const CameraPose& pose, const std::vector<CameraPose>& inputs);

struct Bounds {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

struct VirtualPoses {
  std::vector<CameraPose> poses;
  bool incomplete = false;  // fewer than requested after 100 * n attempts
};

// Camera centers uniform in `bounds` (optionally filtered by `free_space`), each looking at a
// uniform target in `bounds`; candidates close to any input pose are rejected.
VirtualPoses sample_virtual_poses(const Bounds& bounds, const std::vector<CameraPose>& inputs,
                                  const CameraIntrinsics& intrinsics, int n, uint64_t seed,
                                  const std::function<bool(const Vec3&)>& free_space = {});

// 1 where opacity < threshold.
std::vector<uint8_t> detect_holes(const Image& opacity, double threshold = kDefaultHoleThreshold);

struct InpaintStats {
  int iterations = 0;
  double residual = 0.0;  // max |p - mean(4-neighbors)| over masked pixels
};

// Harmonic fill: masked pixels converge to the mean of their in-image 4-neighbors.
// Unmasked pixels are copied bit for bit. Throws NoBoundary when everything is masked.
Image inpaint(const Image& image, const std::vector<uint8_t>& mask, int max_iters = 20000,
              double tol = 1e-6, InpaintStats* stats = nullptr);

// Channel-mean L1 per pixel.
Image per_pixel_l1(const Image& a, const Image& b);

// clamp((tau - L1) / tau, 0, 1) per pixel.
Image compute_confidence_target(const Image& calib_render, const Image& observed, double tau);

inline constexpr int kConfidenceFeatures = 8;

// [1, 5x5 mean r, g, b, 5x5 variance (channel sum), opacity, depth-gradient magnitude,
//  distance to nearest hole / 10 capped at 1], one row per pixel.
Eigen::MatrixXd confidence_features(const RenderedViews& views,
                                    double hole_threshold = kDefaultHoleThreshold);

struct ConfidencePredictor {
  Eigen::VectorXd weights;        // on standardized features, intercept first
  Eigen::VectorXd feature_mean;
  Eigen::VectorXd feature_scale;  // 0 marks a feature dropped as constant
  double tau = 0.0;
  double ridge = 1e-3;
};

struct CalibrationPair {
  RenderedViews render;  // virtual map at the training pose
  Image observed;        // the training frame's color
};

// Ridge regression of per-pixel targets (H x W x 1 each) on standardized features. Constant
// features get zero weight, so degenerate input falls back to the mean target. tau is left 0.
ConfidencePredictor fit_confidence_regression(const std::vector<RenderedViews>& renders,
                                              const std::vector<Image>& targets, double ridge = 1e-3);
// tau = max per-pixel L1 over all pairs; targets from compute_confidence_target.
ConfidencePredictor fit_confidence_predictor(const std::vector<CalibrationPair>& pairs,
                                             double ridge = 1e-3);
Image predict_confidence(const ConfidencePredictor& pred, const RenderedViews& views);

struct PseudoSet {
  std::vector<PseudoGT> items;
  int skipped = 0;  // poses that saw nothing to fill from
};

PseudoSet make_pseudo_gt(const GaussianMap& virtual_map, const std::vector<CameraPose>& poses,
                         const ConfidencePredictor& pred,
                         double hole_threshold = kDefaultHoleThreshold);

// image_NNNN.png, depth_NNNN.pfm, confidence_NNNN.png plus manifest.json.
void export_pseudo_bundle(const std::filesystem::path& dir, const PseudoSet& set, double tau);

}  // namespace gsshare
