#pragma once

// Linear anchor embedding (truncated eigenbasis of the attribute covariance) and
// uniform scalar quantization.

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "gsshare/core.hpp"

namespace gsshare {

struct DecoderWeights {
  Eigen::VectorXd mean;   // A
  Eigen::MatrixXd basis;  // A x D, orthonormal columns

  int attr_dim() const { return static_cast<int>(mean.size()); }
  int dim() const { return static_cast<int>(basis.cols()); }
};

struct EmbeddingFit {
  Eigen::MatrixXd embeddings;  // N x D
  DecoderWeights decoder;
  Eigen::VectorXd energies;    // all A eigenvalues of the centered Gram matrix, descending
};

// embeddings = (attrs - mean) * basis with the top-D principal directions. Each basis column's
// largest-magnitude entry is positive, which makes the result deterministic.
EmbeddingFit fit_embedding(const Eigen::MatrixXd& attrs, int d);

// mean + embeddings * basis^T, one row per anchor.
Eigen::MatrixXd reconstruct_attributes(const Eigen::MatrixXd& embeddings, const DecoderWeights& w);

// Gaussians of one anchor. Kind is Flat2D when the third scale is exactly 0.
std::vector<Gaussian> decode_anchor(const AnchorFeature& f, const DecoderWeights& w);
// Same construction from an already reconstructed attribute row.
std::vector<Gaussian> gaussians_from_attributes(const Vec3& anchor_position,
                                                const Eigen::MatrixX3d& scales,
                                                const Eigen::MatrixX3d& offsets,
                                                const Eigen::VectorXd& attrs);

struct QuantizationSpec {
  std::vector<double> steps;  // one per channel

  void validate() const;
};

QuantizationSpec uniform_spec(size_t channels, double step);

// round(x / st), half away from zero.
int32_t quantize_symbol(double x, double step);
double quantize_value(double x, double step);
// Column c of `x` uses steps[c].
Eigen::MatrixXd quantize(const Eigen::MatrixXd& x, const QuantizationSpec& spec);
std::vector<std::vector<int32_t>> quantize_symbols(const Eigen::MatrixXd& x, const QuantizationSpec& spec);
Eigen::MatrixXd dequantize(const std::vector<std::vector<int32_t>>& symbols,
                           const QuantizationSpec& spec, size_t rows);

// Adds U[-st/2, st/2] noise per element; deterministic for a given seed on every platform.
Eigen::MatrixXd inject_noise(const Eigen::MatrixXd& x, const QuantizationSpec& spec, uint64_t seed);

using DistortionFn = std::function<double(const Eigen::MatrixXd& quantized)>;

struct RdSelection {
  double step = 0.0;
  QuantizationSpec spec;
  std::vector<double> rate;        // mean estimated bits per element, per candidate
  std::vector<double> distortion;  // per candidate
  std::vector<double> objective;   // lambda * rate + distortion, per candidate
};

// Picks the uniform step minimizing lambda * rate + distortion; ties go to the larger step.
RdSelection rd_select_step(const Eigen::MatrixXd& f, const std::vector<double>& candidate_steps,
                           const DistortionFn& distortion, double lambda_q);

}  // namespace gsshare
