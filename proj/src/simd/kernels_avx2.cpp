#if defined(GSSHARE_HAVE_AVX2)

#include <immintrin.h>

#include "gsshare/simd.hpp"

namespace gsshare::simd::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// exp(x) for x <= 0. Cody-Waite reduction to |r| <= ln2/2, degree-12 Taylor polynomial,
// then exponent reconstruction. Relative error ~1e-16; inputs below -708 flush to 0.
inline __m256d exp_neg(__m256d x) {
  const __m256d lower = _mm256_set1_pd(-708.0);
  const __m256d underflow = _mm256_cmp_pd(x, lower, _CMP_LT_OQ);
  x = _mm256_max_pd(x, lower);
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_sub_pd(x, _mm256_mul_pd(n, _mm256_set1_pd(0.693145751953125)));
  r = _mm256_sub_pd(r, _mm256_mul_pd(n, _mm256_set1_pd(1.42860682030941723212e-6)));

  static constexpr double kInvFact[] = {
      1.0,
      1.0,
      1.0 / 2,
      1.0 / 6,
      1.0 / 24,
      1.0 / 120,
      1.0 / 720,
      1.0 / 5040,
      1.0 / 40320,
      1.0 / 362880,
      1.0 / 3628800,
      1.0 / 39916800,
      1.0 / 479001600,
  };
  __m256d p = _mm256_set1_pd(kInvFact[12]);
  for (int k = 11; k >= 0; --k) p = _mm256_add_pd(_mm256_mul_pd(p, r), _mm256_set1_pd(kInvFact[k]));

  const __m128i n32 = _mm256_cvtpd_epi32(n);
  __m256i bits = _mm256_add_epi64(_mm256_cvtepi32_epi64(n32), _mm256_set1_epi64x(1023));
  bits = _mm256_slli_epi64(bits, 52);
  const __m256d result = _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
  return _mm256_andnot_pd(underflow, result);
}

}  // namespace

void exp_neg4(const double* x, double* out) { _mm256_storeu_pd(out, exp_neg(_mm256_loadu_pd(x))); }

void composite_span(const Splat* splats, const uint32_t* order, size_t n_order, double y, int x0,
                    int count, PixelAccum* out) {
  int j = 0;
  const __m256d terminate = _mm256_set1_pd(kTerminateTransmittance);
  const __m256d zero = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d neg_half = _mm256_set1_pd(-0.5);
  for (; j + 4 <= count; j += 4) {
    PixelAccum* px = out + j;
    __m256d t = _mm256_setr_pd(px[0].transmittance, px[1].transmittance, px[2].transmittance,
                               px[3].transmittance);
    __m256d cr = _mm256_setr_pd(px[0].color[0], px[1].color[0], px[2].color[0], px[3].color[0]);
    __m256d cg = _mm256_setr_pd(px[0].color[1], px[1].color[1], px[2].color[1], px[3].color[1]);
    __m256d cb = _mm256_setr_pd(px[0].color[2], px[1].color[2], px[2].color[2], px[3].color[2]);
    __m256d dep = _mm256_setr_pd(px[0].depth, px[1].depth, px[2].depth, px[3].depth);
    __m256d nx = _mm256_setr_pd(px[0].normal[0], px[1].normal[0], px[2].normal[0], px[3].normal[0]);
    __m256d ny = _mm256_setr_pd(px[0].normal[1], px[1].normal[1], px[2].normal[1], px[3].normal[1]);
    __m256d nz = _mm256_setr_pd(px[0].normal[2], px[1].normal[2], px[2].normal[2], px[3].normal[2]);
    __m256d nw = _mm256_setr_pd(px[0].normal_weight, px[1].normal_weight, px[2].normal_weight,
                                px[3].normal_weight);
    const __m256d xs = _mm256_setr_pd(x0 + j, x0 + j + 1, x0 + j + 2, x0 + j + 3);

    for (size_t i = 0; i < n_order; ++i) {
      const __m256d active = _mm256_cmp_pd(t, terminate, _CMP_GE_OQ);
      if (_mm256_movemask_pd(active) == 0) break;
      const Splat& s = splats[order[i]];
      if (y - s.v > s.radius || s.v - y > s.radius || x0 + j - s.u > s.radius || s.u - (x0 + j + 3) > s.radius)
        continue;
      const __m256d dx = _mm256_sub_pd(xs, _mm256_set1_pd(s.u));
      const __m256d dy = _mm256_set1_pd(y - s.v);
      const __m256d rad = _mm256_set1_pd(s.radius);
      const __m256d covered = _mm256_and_pd(_mm256_cmp_pd(dx, rad, _CMP_LE_OQ),
                                            _mm256_cmp_pd(_mm256_sub_pd(zero, dx), rad, _CMP_LE_OQ));
      const __m256d quad = _mm256_add_pd(
          _mm256_mul_pd(_mm256_mul_pd(_mm256_set1_pd(s.conic_a), dx), dx),
          _mm256_mul_pd(_mm256_mul_pd(_mm256_set1_pd(s.conic_c), dy), dy));
      __m256d power = _mm256_sub_pd(_mm256_mul_pd(neg_half, quad),
                                    _mm256_mul_pd(_mm256_mul_pd(_mm256_set1_pd(s.conic_b), dx), dy));
      power = _mm256_min_pd(power, zero);
      __m256d alpha = _mm256_mul_pd(_mm256_set1_pd(s.opacity), exp_neg(power));
      alpha = _mm256_and_pd(alpha, _mm256_and_pd(active, covered));
      const __m256d w = _mm256_mul_pd(alpha, t);
      cr = _mm256_add_pd(cr, _mm256_mul_pd(w, _mm256_set1_pd(s.color[0])));
      cg = _mm256_add_pd(cg, _mm256_mul_pd(w, _mm256_set1_pd(s.color[1])));
      cb = _mm256_add_pd(cb, _mm256_mul_pd(w, _mm256_set1_pd(s.color[2])));
      dep = _mm256_add_pd(dep, _mm256_mul_pd(w, _mm256_set1_pd(s.depth)));
      const __m256d wn = _mm256_mul_pd(w, _mm256_set1_pd(s.normal_weight));
      nx = _mm256_add_pd(nx, _mm256_mul_pd(wn, _mm256_set1_pd(s.normal[0])));
      ny = _mm256_add_pd(ny, _mm256_mul_pd(wn, _mm256_set1_pd(s.normal[1])));
      nz = _mm256_add_pd(nz, _mm256_mul_pd(wn, _mm256_set1_pd(s.normal[2])));
      nw = _mm256_add_pd(nw, wn);
      t = _mm256_mul_pd(t, _mm256_sub_pd(one, alpha));
    }

    alignas(32) double lanes[9][4];
    _mm256_store_pd(lanes[0], t);
    _mm256_store_pd(lanes[1], cr);
    _mm256_store_pd(lanes[2], cg);
    _mm256_store_pd(lanes[3], cb);
    _mm256_store_pd(lanes[4], dep);
    _mm256_store_pd(lanes[5], nx);
    _mm256_store_pd(lanes[6], ny);
    _mm256_store_pd(lanes[7], nz);
    _mm256_store_pd(lanes[8], nw);
    for (int l = 0; l < 4; ++l) {
      px[l].transmittance = lanes[0][l];
      px[l].color[0] = lanes[1][l];
      px[l].color[1] = lanes[2][l];
      px[l].color[2] = lanes[3][l];
      px[l].depth = lanes[4][l];
      px[l].normal[0] = lanes[5][l];
      px[l].normal[1] = lanes[6][l];
      px[l].normal[2] = lanes[7][l];
      px[l].normal_weight = lanes[8][l];
    }
  }
  if (j < count) scalar::composite_span(splats, order, n_order, y, x0 + j, count - j, out + j);
}

double sum_sq_diff(const double* a, const double* b, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double sum_abs_diff(const double* a, const double* b, size_t n) {
  const __m256d sign = _mm256_set1_pd(-0.0);
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_add_pd(acc, _mm256_andnot_pd(sign, d));
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i] > b[i] ? a[i] - b[i] : b[i] - a[i];
  return s;
}

double dot(const double* a, const double* b, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace gsshare::simd::avx2

#endif  // GSSHARE_HAVE_AVX2
