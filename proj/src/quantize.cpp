#include <cmath>
#include <limits>
#include <random>

#include "gsshare/codec.hpp"
#include "gsshare/entropy.hpp"

namespace gsshare {

void QuantizationSpec::validate() const {
  for (double s : steps)
    if (!(s > 0.0) || !std::isfinite(s))
      throw Error(ErrorCode::InvalidArgument, "quantization steps must be positive");
}

QuantizationSpec uniform_spec(size_t channels, double step) {
  QuantizationSpec spec;
  spec.steps.assign(channels, step);
  return spec;
}

int32_t quantize_symbol(double x, double step) {
  const double q = std::round(x / step);
  if (!(std::abs(q) < 2147483647.0))
    throw Error(ErrorCode::InvalidArgument, "value too large for its quantization step");
  return static_cast<int32_t>(q);
}

double quantize_value(double x, double step) { return quantize_symbol(x, step) * step; }

namespace {
void check_columns(const Eigen::MatrixXd& x, const QuantizationSpec& spec) {
  spec.validate();
  if (static_cast<size_t>(x.cols()) != spec.steps.size())
    throw Error(ErrorCode::DimensionMismatch, "column count does not match quantization steps");
}
}  // namespace

Eigen::MatrixXd quantize(const Eigen::MatrixXd& x, const QuantizationSpec& spec) {
  check_columns(x, spec);
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    for (Eigen::Index r = 0; r < x.rows(); ++r) out(r, c) = quantize_value(x(r, c), spec.steps[c]);
  return out;
}

std::vector<std::vector<int32_t>> quantize_symbols(const Eigen::MatrixXd& x,
                                                   const QuantizationSpec& spec) {
  check_columns(x, spec);
  std::vector<std::vector<int32_t>> out(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    out[c].reserve(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) out[c].push_back(quantize_symbol(x(r, c), spec.steps[c]));
  }
  return out;
}

Eigen::MatrixXd dequantize(const std::vector<std::vector<int32_t>>& symbols,
                           const QuantizationSpec& spec, size_t rows) {
  if (symbols.size() != spec.steps.size())
    throw Error(ErrorCode::DimensionMismatch, "channel count does not match quantization steps");
  Eigen::MatrixXd out(rows, symbols.size());
  for (size_t c = 0; c < symbols.size(); ++c) {
    if (symbols[c].size() != rows) throw Error(ErrorCode::DimensionMismatch, "ragged symbol channels");
    for (size_t r = 0; r < rows; ++r) out(r, c) = symbols[c][r] * spec.steps[c];
  }
  return out;
}

Eigen::MatrixXd inject_noise(const Eigen::MatrixXd& x, const QuantizationSpec& spec, uint64_t seed) {
  check_columns(x, spec);
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
      out(r, c) = x(r, c) + (u - 0.5) * spec.steps[c];
    }
  return out;
}

RdSelection rd_select_step(const Eigen::MatrixXd& f, const std::vector<double>& candidate_steps,
                           const DistortionFn& distortion, double lambda_q) {
  if (candidate_steps.empty()) throw Error(ErrorCode::InvalidArgument, "no candidate steps");
  RdSelection sel;
  double best = std::numeric_limits<double>::infinity();
  const double elements = static_cast<double>(f.size());
  for (double step : candidate_steps) {
    const QuantizationSpec spec = uniform_spec(f.cols(), step);
    double rate = 0.0;
    if (f.size() > 0) {
      const auto symbols = quantize_symbols(f, spec);
      rate = estimate_bits(symbols, fit_entropy_model(symbols)) / elements;
    }
    const double d = distortion ? distortion(quantize(f, spec)) : 0.0;
    const double obj = lambda_q * rate + d;
    sel.rate.push_back(rate);
    sel.distortion.push_back(d);
    sel.objective.push_back(obj);
    if (obj < best || (obj == best && step > sel.step)) {
      best = obj;
      sel.step = step;
    }
  }
  sel.spec = uniform_spec(f.cols(), sel.step);
  return sel;
}

}  // namespace gsshare
