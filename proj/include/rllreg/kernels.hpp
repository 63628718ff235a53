#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference version and,
// on x86-64 builds, an AVX2+FMA version; the dispatcher picks one at first use
// (override with RLLREG_ISA=scalar|avx2). All buffers are caller-owned and
// row-major; nothing here depends on Eigen so the vector translation unit can
// be compiled with wider ISA flags without leaking instantiations.

#include <cstddef>

namespace rllreg::kernels {

enum class Isa { Scalar, Avx2 };

const char* to_string(Isa isa);
bool isa_available(Isa isa);
Isa active_isa();
/// Forces a specific implementation; throws if it is not available.
void set_isa(Isa isa);

/// Inputs for one view's responsibility rows.
///
/// logit_jk = log_prior[k] + neg_half_inv_var[k] * |p_j - m_k|^2 + feature_logits[j*k_count + k]
/// out[j, :] = softmax_k(logit_j)
struct ResponsibilityArgs {
  const double* px = nullptr;
  const double* py = nullptr;
  const double* pz = nullptr;
  std::size_t n = 0;
  const double* mx = nullptr;
  const double* my = nullptr;
  const double* mz = nullptr;
  std::size_t k = 0;
  const double* neg_half_inv_var = nullptr;
  const double* log_prior = nullptr;
  const double* feature_logits = nullptr;  // optional, n x k
  double* out = nullptr;                   // n x k
};

/// Per-point virtual targets for the transform update, c_k = inv_var[k]:
///   precision[j] = sum_k a_jk c_k
///   target_j     = sum_k a_jk c_k m_k / precision[j]   (0 when precision is 0)
struct TargetArgs {
  const double* alpha = nullptr;  // n x k
  std::size_t n = 0;
  std::size_t k = 0;
  const double* inv_var = nullptr;
  const double* mx = nullptr;
  const double* my = nullptr;
  const double* mz = nullptr;
  double* precision = nullptr;
  double* tx = nullptr;
  double* ty = nullptr;
  double* tz = nullptr;
};

/// Weighted moment sums over the points of one view, accumulated into the
/// k-length outputs (callers zero them first):
///   first moments:  mass[k] += sum_j w_j a_jk,  f[k] += sum_j w_j a_jk p_j
///   second moments: second[k] += sum_j w_j a_jk |p_j - m_k|^2
struct MomentArgs {
  const double* alpha = nullptr;  // n x k
  std::size_t n = 0;
  std::size_t k = 0;
  const double* weights = nullptr;
  const double* px = nullptr;
  const double* py = nullptr;
  const double* pz = nullptr;
  const double* mx = nullptr;
  const double* my = nullptr;
  const double* mz = nullptr;
  double* mass = nullptr;
  double* fx = nullptr;
  double* fy = nullptr;
  double* fz = nullptr;
  double* second = nullptr;
};

/// Feature terms of the vMF model, with features stored point-major (n x d,
/// i.e. a d x n column-major matrix) and feature means row-major d x k.
///   logits: out[j, k] = scale * sum_c y[j, c] nu[c, k]
///   sums:   out[c, k] += sum_j w_j a_jk y[j, c]
struct FeatureArgs {
  const double* y = nullptr;  // n x d
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t k = 0;
  const double* nu = nullptr;       // d x k, logits only
  double scale = 1.0;               // logits only
  const double* alpha = nullptr;    // n x k, sums only
  const double* weights = nullptr;  // sums only
  double* out = nullptr;            // n x k (logits) or d x k (sums)
};

/// Returns the number of rows that fell back to the uniform distribution.
std::size_t responsibilities(const ResponsibilityArgs& args);

/// out[i] = sum_j exp(-|x_i - x_j|^2 * inv_two_h2) over all j (including i).
void gaussian_kernel_sums(const double* x, const double* y, const double* z, std::size_t n,
                          double inv_two_h2, double* out);

/// In-place exp, exposed for equivalence tests.
void exp_inplace(double* values, std::size_t n);

void virtual_targets(const TargetArgs& args);
void first_moments(const MomentArgs& args);
void second_moments(const MomentArgs& args);
void feature_logits(const FeatureArgs& args);
void feature_sums(const FeatureArgs& args);

namespace scalar {
std::size_t responsibilities(const ResponsibilityArgs& args);
void gaussian_kernel_sums(const double* x, const double* y, const double* z, std::size_t n,
                          double inv_two_h2, double* out);
void exp_inplace(double* values, std::size_t n);
void virtual_targets(const TargetArgs& args);
void first_moments(const MomentArgs& args);
void second_moments(const MomentArgs& args);
void feature_logits(const FeatureArgs& args);
void feature_sums(const FeatureArgs& args);
}  // namespace scalar

namespace avx2 {
std::size_t responsibilities(const ResponsibilityArgs& args);
void gaussian_kernel_sums(const double* x, const double* y, const double* z, std::size_t n,
                          double inv_two_h2, double* out);
void exp_inplace(double* values, std::size_t n);
void virtual_targets(const TargetArgs& args);
void first_moments(const MomentArgs& args);
void second_moments(const MomentArgs& args);
void feature_logits(const FeatureArgs& args);
void feature_sums(const FeatureArgs& args);
}  // namespace avx2

}  // namespace rllreg::kernels
