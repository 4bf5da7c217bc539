#include <cmath>

#include "gsshare/simd.hpp"

namespace gsshare::simd {

double splat_alpha(const Splat& s, double x, double y) {
  const double dx = x - s.u;
  const double dy = y - s.v;
  double power = -0.5 * (s.conic_a * dx * dx + s.conic_c * dy * dy) - s.conic_b * dx * dy;
  if (power > 0.0) power = 0.0;
  return s.opacity * std::exp(power);
}

namespace scalar {

void composite_span(const Splat* splats, const uint32_t* order, size_t n_order, double y, int x0,
                    int count, PixelAccum* out) {
  for (int j = 0; j < count; ++j) {
    PixelAccum& acc = out[j];
    const double x = x0 + j;
    for (size_t i = 0; i < n_order && acc.transmittance >= kTerminateTransmittance; ++i) {
      const Splat& s = splats[order[i]];
      if (!splat_covers(s, x, y)) continue;
      const double alpha = splat_alpha(s, x, y);
      const double w = alpha * acc.transmittance;
      acc.color[0] += w * s.color[0];
      acc.color[1] += w * s.color[1];
      acc.color[2] += w * s.color[2];
      acc.depth += w * s.depth;
      const double wn = w * s.normal_weight;
      acc.normal[0] += wn * s.normal[0];
      acc.normal[1] += wn * s.normal[1];
      acc.normal[2] += wn * s.normal[2];
      acc.normal_weight += wn;
      acc.transmittance *= 1.0 - alpha;
    }
  }
}

double sum_sq_diff(const double* a, const double* b, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double sum_abs_diff(const double* a, const double* b, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double dot(const double* a, const double* b, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace scalar
}  // namespace gsshare::simd
