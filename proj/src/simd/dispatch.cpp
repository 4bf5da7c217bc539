#include <atomic>
#include <cstdlib>
#include <cstring>

#include "gsshare/error.hpp"
#include "gsshare/simd.hpp"

namespace gsshare::simd {

namespace {

constexpr KernelTable kScalarTable{
    scalar::composite_span,
    scalar::sum_sq_diff,
    scalar::sum_abs_diff,
    scalar::dot,
};

#if defined(GSSHARE_HAVE_AVX2)
constexpr KernelTable kAvx2Table{
    avx2::composite_span,
    avx2::sum_sq_diff,
    avx2::sum_abs_diff,
    avx2::dot,
};
#endif

Isa detect() {
  if (const char* env = std::getenv("GSSHARE_ISA"); env && std::strcmp(env, "scalar") == 0)
    return Isa::Scalar;
  return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

const char* isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) {
  if (isa == Isa::Scalar) return true;
#if defined(GSSHARE_HAVE_AVX2)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() { return active().load(); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa))
    throw Error(ErrorCode::InvalidArgument, std::string("ISA not supported: ") + isa_name(isa));
  active().store(isa);
}

const KernelTable& kernels_for(Isa isa) {
#if defined(GSSHARE_HAVE_AVX2)
  if (isa == Isa::Avx2) return kAvx2Table;
#endif
  (void)isa;
  return kScalarTable;
}

const KernelTable& kernels() { return kernels_for(active_isa()); }

}  // namespace gsshare::simd
