#include "rllreg/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "rllreg/error.hpp"

namespace rllreg::kernels {

#ifndef RLLREG_BUILD_AVX2
namespace avx2 {
std::size_t responsibilities(const ResponsibilityArgs&) {
  throw Error(ErrorKind::InvalidArgument, "avx2 kernels not built");
}
void gaussian_kernel_sums(const double*, const double*, const double*, std::size_t, double,
                          double*) {
  throw Error(ErrorKind::InvalidArgument, "avx2 kernels not built");
}
void exp_inplace(double*, std::size_t) {
  throw Error(ErrorKind::InvalidArgument, "avx2 kernels not built");
}
void virtual_targets(const TargetArgs&) {
  throw Error(ErrorKind::InvalidArgument, "avx2 kernels not built");
}
void first_moments(const MomentArgs&) {
  throw Error(ErrorKind::InvalidArgument, "avx2 kernels not built");
}
void second_moments(const MomentArgs&) {
  throw Error(ErrorKind::InvalidArgument, "avx2 kernels not built");
}
void feature_logits(const FeatureArgs&) {
  throw Error(ErrorKind::InvalidArgument, "avx2 kernels not built");
}
void feature_sums(const FeatureArgs&) {
  throw Error(ErrorKind::InvalidArgument, "avx2 kernels not built");
}
}  // namespace avx2
#endif

namespace {

bool cpu_has_avx2() {
#if defined(RLLREG_BUILD_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() {
  const char* env = std::getenv("RLLREG_ISA");
  if (env && std::strcmp(env, "scalar") == 0) return Isa::Scalar;
  return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

const char* to_string(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) { return isa == Isa::Scalar || cpu_has_avx2(); }

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw Error(ErrorKind::InvalidArgument, std::string("ISA not available: ") + to_string(isa));
  }
  current().store(isa, std::memory_order_relaxed);
}

std::size_t responsibilities(const ResponsibilityArgs& args) {
  return active_isa() == Isa::Avx2 ? avx2::responsibilities(args)
                                   : scalar::responsibilities(args);
}

void gaussian_kernel_sums(const double* x, const double* y, const double* z, std::size_t n,
                          double inv_two_h2, double* out) {
  if (active_isa() == Isa::Avx2) {
    avx2::gaussian_kernel_sums(x, y, z, n, inv_two_h2, out);
  } else {
    scalar::gaussian_kernel_sums(x, y, z, n, inv_two_h2, out);
  }
}

void exp_inplace(double* values, std::size_t n) {
  if (active_isa() == Isa::Avx2) {
    avx2::exp_inplace(values, n);
  } else {
    scalar::exp_inplace(values, n);
  }
}

void virtual_targets(const TargetArgs& args) {
  if (active_isa() == Isa::Avx2) {
    avx2::virtual_targets(args);
  } else {
    scalar::virtual_targets(args);
  }
}

void first_moments(const MomentArgs& args) {
  if (active_isa() == Isa::Avx2) {
    avx2::first_moments(args);
  } else {
    scalar::first_moments(args);
  }
}

void second_moments(const MomentArgs& args) {
  if (active_isa() == Isa::Avx2) {
    avx2::second_moments(args);
  } else {
    scalar::second_moments(args);
  }
}

void feature_logits(const FeatureArgs& args) {
  if (active_isa() == Isa::Avx2) {
    avx2::feature_logits(args);
  } else {
    scalar::feature_logits(args);
  }
}

void feature_sums(const FeatureArgs& args) {
  if (active_isa() == Isa::Avx2) {
    avx2::feature_sums(args);
  } else {
    scalar::feature_sums(args);
  }
}

}  // namespace rllreg::kernels
