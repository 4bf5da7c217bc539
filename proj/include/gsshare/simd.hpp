#pragma once

// Data-parallel inner loops with a scalar reference implementation and an AVX2 variant.
// The variant is selected once at runtime from CPUID; GSSHARE_ISA=scalar forces the reference.

#include <cstddef>
#include <cstdint>

namespace gsshare::simd {

enum class Isa { Scalar, Avx2 };

const char* isa_name(Isa isa);
bool isa_supported(Isa isa);
Isa active_isa();
// Throws gsshare::Error(InvalidArgument) when the CPU lacks the requested ISA.
void set_active_isa(Isa isa);

// Transmittance below which a ray stops accumulating.
inline constexpr double kTerminateTransmittance = 1e-4;

// One projected Gaussian, ready for compositing.
struct Splat {
  double u = 0, v = 0;                  // screen-space center (pixels)
  double conic_a = 0, conic_b = 0, conic_c = 0;  // inverse 2D covariance [a b; b c]
  double opacity = 0;
  double color[3] = {0, 0, 0};
  double depth = 0;                     // camera z of the center
  double normal[3] = {0, 0, 0};         // world-space, camera-facing
  double normal_weight = 0;             // 1 for flats, 0 otherwise
  double radius = 0;                    // screen-space footprint bound
  uint32_t source = 0;                  // index into the map
};

struct PixelAccum {
  double transmittance = 1.0;
  double color[3] = {0, 0, 0};
  double depth = 0;
  double normal[3] = {0, 0, 0};
  double normal_weight = 0;
};

// Alpha of `s` at pixel center (x, y). The reference formula every kernel must reproduce.
double splat_alpha(const Splat& s, double x, double y);

// Pixels outside the footprint box are skipped; alpha there is below the footprint cutoff.
inline bool splat_covers(const Splat& s, double x, double y) {
  return !(x - s.u > s.radius || s.u - x > s.radius || y - s.v > s.radius || s.v - y > s.radius);
}

struct KernelTable {
  // Front-to-back compositing of splats[order[i]] over the pixels (x0 + j, y), j < count.
  void (*composite_span)(const Splat* splats, const uint32_t* order, size_t n_order, double y,
                         int x0, int count, PixelAccum* out);
  double (*sum_sq_diff)(const double* a, const double* b, size_t n);
  double (*sum_abs_diff)(const double* a, const double* b, size_t n);
  double (*dot)(const double* a, const double* b, size_t n);
};

const KernelTable& kernels();
const KernelTable& kernels_for(Isa isa);

namespace scalar {
void composite_span(const Splat* splats, const uint32_t* order, size_t n_order, double y, int x0,
                    int count, PixelAccum* out);
double sum_sq_diff(const double* a, const double* b, size_t n);
double sum_abs_diff(const double* a, const double* b, size_t n);
double dot(const double* a, const double* b, size_t n);
}  // namespace scalar

#if defined(GSSHARE_HAVE_AVX2)
namespace avx2 {
void composite_span(const Splat* splats, const uint32_t* order, size_t n_order, double y, int x0,
                    int count, PixelAccum* out);
double sum_sq_diff(const double* a, const double* b, size_t n);
double sum_abs_diff(const double* a, const double* b, size_t n);
double dot(const double* a, const double* b, size_t n);
// Vectorized exp for x <= 0, exposed for equivalence testing.
void exp_neg4(const double* x, double* out);
}  // namespace avx2
#endif

}  // namespace gsshare::simd
