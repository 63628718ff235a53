// AVX2 + FMA implementations. Compiled with -mavx2 -mfma; only reached after
// the dispatcher has confirmed CPU support.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "rllreg/kernels.hpp"

namespace rllreg::kernels::avx2 {
namespace {

// exp via x = n ln2 + r, |r| <= ln2/2, and a degree-12 Taylor polynomial for
// e^r (truncation error below 2e-16 relative; FMAs only, no division). Inputs
// below -708.39 flush to zero and inputs above 709.43 return +inf.
inline __m256d exp_pd(__m256d x) {
  const __m256d lo = _mm256_set1_pd(-708.3964185322641);
  const __m256d hi = _mm256_set1_pd(709.436138303);
  const __m256d underflow = _mm256_cmp_pd(x, lo, _CMP_LT_OQ);
  const __m256d overflow = _mm256_cmp_pd(x, hi, _CMP_GT_OQ);
  x = _mm256_min_pd(_mm256_max_pd(x, lo), hi);

  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);
  __m256d r = _mm256_fnmadd_pd(n, c1, x);
  r = _mm256_fnmadd_pd(n, c2, r);

  __m256d e = _mm256_set1_pd(1.0 / 479001600.0);  // 1/12!
  e = _mm256_fmadd_pd(e, r, _mm256_set1_pd(1.0 / 39916800.0));
  e = _mm256_fmadd_pd(e, r, _mm256_set1_pd(1.0 / 3628800.0));
  e = _mm256_fmadd_pd(e, r, _mm256_set1_pd(1.0 / 362880.0));
  e = _mm256_fmadd_pd(e, r, _mm256_set1_pd(1.0 / 40320.0));
  e = _mm256_fmadd_pd(e, r, _mm256_set1_pd(1.0 / 5040.0));
  e = _mm256_fmadd_pd(e, r, _mm256_set1_pd(1.0 / 720.0));
  e = _mm256_fmadd_pd(e, r, _mm256_set1_pd(1.0 / 120.0));
  e = _mm256_fmadd_pd(e, r, _mm256_set1_pd(1.0 / 24.0));
  e = _mm256_fmadd_pd(e, r, _mm256_set1_pd(1.0 / 6.0));
  e = _mm256_fmadd_pd(e, r, _mm256_set1_pd(0.5));
  e = _mm256_fmadd_pd(e, r, _mm256_set1_pd(1.0));
  e = _mm256_fmadd_pd(e, r, _mm256_set1_pd(1.0));

  // 2^n via the exponent field; n is in [-1022, 1023] after clamping.
  const __m256d magic = _mm256_set1_pd(6755399441055744.0);  // 2^52 + 2^51
  const __m256i ni = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(n, magic)),
                                      _mm256_castpd_si256(magic));
  const __m256d scale = _mm256_castsi256_pd(
      _mm256_slli_epi64(_mm256_add_epi64(ni, _mm256_set1_epi64x(1023)), 52));
  e = _mm256_mul_pd(e, scale);
  e = _mm256_blendv_pd(e, _mm256_set1_pd(std::numeric_limits<double>::infinity()), overflow);
  return _mm256_andnot_pd(underflow, e);
}

inline double hmax(__m256d v) {
  const __m128d a = _mm_max_pd(_mm256_castpd256_pd128(v), _mm256_extractf128_pd(v, 1));
  return std::max(_mm_cvtsd_f64(a), _mm_cvtsd_f64(_mm_unpackhi_pd(a, a)));
}

inline double hsum(__m256d v) {
  const __m128d a = _mm_add_pd(_mm256_castpd256_pd128(v), _mm256_extractf128_pd(v, 1));
  return _mm_cvtsd_f64(_mm_add_sd(a, _mm_unpackhi_pd(a, a)));
}

}  // namespace

std::size_t responsibilities(const ResponsibilityArgs& a) {
  std::size_t fallbacks = 0;
  const std::size_t kv = a.k & ~std::size_t{3};
  for (std::size_t j = 0; j < a.n; ++j) {
    double* row = a.out + j * a.k;
    const double* feat = a.feature_logits ? a.feature_logits + j * a.k : nullptr;
    const __m256d px = _mm256_set1_pd(a.px[j]);
    const __m256d py = _mm256_set1_pd(a.py[j]);
    const __m256d pz = _mm256_set1_pd(a.pz[j]);
    __m256d vmax = _mm256_set1_pd(-std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < kv; k += 4) {
      const __m256d dx = _mm256_sub_pd(px, _mm256_loadu_pd(a.mx + k));
      const __m256d dy = _mm256_sub_pd(py, _mm256_loadu_pd(a.my + k));
      const __m256d dz = _mm256_sub_pd(pz, _mm256_loadu_pd(a.mz + k));
      __m256d d2 = _mm256_mul_pd(dx, dx);
      d2 = _mm256_fmadd_pd(dy, dy, d2);
      d2 = _mm256_fmadd_pd(dz, dz, d2);
      __m256d l = _mm256_fmadd_pd(_mm256_loadu_pd(a.neg_half_inv_var + k), d2,
                                  _mm256_loadu_pd(a.log_prior + k));
      if (feat) l = _mm256_add_pd(l, _mm256_loadu_pd(feat + k));
      _mm256_storeu_pd(row + k, l);
      vmax = _mm256_max_pd(vmax, l);
    }
    double best = hmax(vmax);
    for (std::size_t k = kv; k < a.k; ++k) {
      const double dx = a.px[j] - a.mx[k];
      const double dy = a.py[j] - a.my[k];
      const double dz = a.pz[j] - a.mz[k];
      double l = std::fma(a.neg_half_inv_var[k], dx * dx + dy * dy + dz * dz, a.log_prior[k]);
      if (feat) l += feat[k];
      row[k] = l;
      best = std::max(best, l);
    }

    double sum = 0.0;
    if (std::isfinite(best)) {
      const __m256d vbest = _mm256_set1_pd(best);
      __m256d vsum = _mm256_setzero_pd();
      for (std::size_t k = 0; k < kv; k += 4) {
        const __m256d e = exp_pd(_mm256_sub_pd(_mm256_loadu_pd(row + k), vbest));
        _mm256_storeu_pd(row + k, e);
        vsum = _mm256_add_pd(vsum, e);
      }
      if (kv < a.k) {
        // Tail through the vector exp as well, padded with -inf (-> 0).
        alignas(32) double tail[4] = {-std::numeric_limits<double>::infinity(),
                                      -std::numeric_limits<double>::infinity(),
                                      -std::numeric_limits<double>::infinity(),
                                      -std::numeric_limits<double>::infinity()};
        for (std::size_t k = kv; k < a.k; ++k) tail[k - kv] = row[k] - best;
        const __m256d e = exp_pd(_mm256_load_pd(tail));
        vsum = _mm256_add_pd(vsum, e);
        _mm256_store_pd(tail, e);
        for (std::size_t k = kv; k < a.k; ++k) row[k] = tail[k - kv];
      }
      sum = hsum(vsum);
    }
    if (!(sum > 0.0) || !std::isfinite(sum)) {
      std::fill(row, row + a.k, 1.0 / static_cast<double>(a.k));
      ++fallbacks;
      continue;
    }
    const double inv = 1.0 / sum;
    const __m256d vinv = _mm256_set1_pd(inv);
    for (std::size_t k = 0; k < kv; k += 4) {
      _mm256_storeu_pd(row + k, _mm256_mul_pd(_mm256_loadu_pd(row + k), vinv));
    }
    for (std::size_t k = kv; k < a.k; ++k) row[k] *= inv;
  }
  return fallbacks;
}

void gaussian_kernel_sums(const double* x, const double* y, const double* z, std::size_t n,
                          double inv_two_h2, double* out) {
  const std::size_t nv = n & ~std::size_t{3};
  const __m256d neg = _mm256_set1_pd(-inv_two_h2);
  for (std::size_t i = 0; i < n; ++i) {
    const __m256d xi = _mm256_set1_pd(x[i]);
    const __m256d yi = _mm256_set1_pd(y[i]);
    const __m256d zi = _mm256_set1_pd(z[i]);
    __m256d acc = _mm256_setzero_pd();
    for (std::size_t j = 0; j < nv; j += 4) {
      const __m256d dx = _mm256_sub_pd(xi, _mm256_loadu_pd(x + j));
      const __m256d dy = _mm256_sub_pd(yi, _mm256_loadu_pd(y + j));
      const __m256d dz = _mm256_sub_pd(zi, _mm256_loadu_pd(z + j));
      __m256d d2 = _mm256_mul_pd(dx, dx);
      d2 = _mm256_fmadd_pd(dy, dy, d2);
      d2 = _mm256_fmadd_pd(dz, dz, d2);
      acc = _mm256_add_pd(acc, exp_pd(_mm256_mul_pd(neg, d2)));
    }
    double s = hsum(acc);
    for (std::size_t j = nv; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      const double dz = z[i] - z[j];
      s += std::exp(-(dx * dx + dy * dy + dz * dz) * inv_two_h2);
    }
    out[i] = s;
  }
}

void exp_inplace(double* values, std::size_t n) {
  const std::size_t nv = n & ~std::size_t{3};
  for (std::size_t i = 0; i < nv; i += 4) {
    _mm256_storeu_pd(values + i, exp_pd(_mm256_loadu_pd(values + i)));
  }
  for (std::size_t i = nv; i < n; ++i) values[i] = std::exp(values[i]);
}

void virtual_targets(const TargetArgs& a) {
  const std::size_t kv = a.k & ~std::size_t{3};
  for (std::size_t j = 0; j < a.n; ++j) {
    const double* row = a.alpha + j * a.k;
    __m256d vp = _mm256_setzero_pd(), vx = vp, vy = vp, vz = vp;
    for (std::size_t k = 0; k < kv; k += 4) {
      const __m256d c = _mm256_mul_pd(_mm256_loadu_pd(row + k), _mm256_loadu_pd(a.inv_var + k));
      vp = _mm256_add_pd(vp, c);
      vx = _mm256_fmadd_pd(c, _mm256_loadu_pd(a.mx + k), vx);
      vy = _mm256_fmadd_pd(c, _mm256_loadu_pd(a.my + k), vy);
      vz = _mm256_fmadd_pd(c, _mm256_loadu_pd(a.mz + k), vz);
    }
    double p = hsum(vp), x = hsum(vx), y = hsum(vy), z = hsum(vz);
    for (std::size_t k = kv; k < a.k; ++k) {
      const double c = row[k] * a.inv_var[k];
      p += c;
      x += c * a.mx[k];
      y += c * a.my[k];
      z += c * a.mz[k];
    }
    a.precision[j] = p;
    const double inv = p > 0.0 ? 1.0 / p : 0.0;
    a.tx[j] = x * inv;
    a.ty[j] = y * inv;
    a.tz[j] = z * inv;
  }
}

void first_moments(const MomentArgs& a) {
  const std::size_t kv = a.k & ~std::size_t{3};
  for (std::size_t j = 0; j < a.n; ++j) {
    const double* row = a.alpha + j * a.k;
    const double w = a.weights[j];
    const __m256d vw = _mm256_set1_pd(w);
    const __m256d px = _mm256_set1_pd(a.px[j]);
    const __m256d py = _mm256_set1_pd(a.py[j]);
    const __m256d pz = _mm256_set1_pd(a.pz[j]);
    for (std::size_t k = 0; k < kv; k += 4) {
      const __m256d c = _mm256_mul_pd(vw, _mm256_loadu_pd(row + k));
      _mm256_storeu_pd(a.mass + k, _mm256_add_pd(_mm256_loadu_pd(a.mass + k), c));
      _mm256_storeu_pd(a.fx + k, _mm256_fmadd_pd(c, px, _mm256_loadu_pd(a.fx + k)));
      _mm256_storeu_pd(a.fy + k, _mm256_fmadd_pd(c, py, _mm256_loadu_pd(a.fy + k)));
      _mm256_storeu_pd(a.fz + k, _mm256_fmadd_pd(c, pz, _mm256_loadu_pd(a.fz + k)));
    }
    for (std::size_t k = kv; k < a.k; ++k) {
      const double c = w * row[k];
      a.mass[k] += c;
      a.fx[k] += c * a.px[j];
      a.fy[k] += c * a.py[j];
      a.fz[k] += c * a.pz[j];
    }
  }
}

void second_moments(const MomentArgs& a) {
  const std::size_t kv = a.k & ~std::size_t{3};
  for (std::size_t j = 0; j < a.n; ++j) {
    const double* row = a.alpha + j * a.k;
    const double w = a.weights[j];
    const __m256d vw = _mm256_set1_pd(w);
    const __m256d px = _mm256_set1_pd(a.px[j]);
    const __m256d py = _mm256_set1_pd(a.py[j]);
    const __m256d pz = _mm256_set1_pd(a.pz[j]);
    for (std::size_t k = 0; k < kv; k += 4) {
      const __m256d dx = _mm256_sub_pd(px, _mm256_loadu_pd(a.mx + k));
      const __m256d dy = _mm256_sub_pd(py, _mm256_loadu_pd(a.my + k));
      const __m256d dz = _mm256_sub_pd(pz, _mm256_loadu_pd(a.mz + k));
      __m256d d2 = _mm256_mul_pd(dx, dx);
      d2 = _mm256_fmadd_pd(dy, dy, d2);
      d2 = _mm256_fmadd_pd(dz, dz, d2);
      const __m256d c = _mm256_mul_pd(vw, _mm256_loadu_pd(row + k));
      _mm256_storeu_pd(a.second + k, _mm256_fmadd_pd(c, d2, _mm256_loadu_pd(a.second + k)));
    }
    for (std::size_t k = kv; k < a.k; ++k) {
      const double dx = a.px[j] - a.mx[k];
      const double dy = a.py[j] - a.my[k];
      const double dz = a.pz[j] - a.mz[k];
      a.second[k] += w * row[k] * (dx * dx + dy * dy + dz * dz);
    }
  }
}

// Both feature kernels are small GEMMs; they are register-blocked over
// 4 rows x 12 columns so each loaded vector feeds several FMAs.

void feature_logits(const FeatureArgs& a) {
  const std::size_t kv = a.k & ~std::size_t{3};
  const std::size_t k12 = kv - kv % 12;
  const __m256d scale = _mm256_set1_pd(a.scale);
  auto single_row = [&](std::size_t j) {
    const double* y = a.y + j * a.d;
    double* row = a.out + j * a.k;
    for (std::size_t k = 0; k < kv; k += 4) {
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t c = 0; c < a.d; ++c) {
        acc = _mm256_fmadd_pd(_mm256_set1_pd(y[c]), _mm256_loadu_pd(a.nu + c * a.k + k), acc);
      }
      _mm256_storeu_pd(row + k, _mm256_mul_pd(scale, acc));
    }
    for (std::size_t k = kv; k < a.k; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < a.d; ++c) s = std::fma(y[c], a.nu[c * a.k + k], s);
      row[k] = a.scale * s;
    }
  };

  std::size_t j = 0;
  for (; j + 4 <= a.n; j += 4) {
    const double* y0 = a.y + j * a.d;
    for (std::size_t k = 0; k < k12; k += 12) {
      __m256d acc[4][3];
      for (auto& r : acc) r[0] = r[1] = r[2] = _mm256_setzero_pd();
      for (std::size_t c = 0; c < a.d; ++c) {
        const double* nu = a.nu + c * a.k + k;
        const __m256d v0 = _mm256_loadu_pd(nu), v1 = _mm256_loadu_pd(nu + 4), v2 = _mm256_loadu_pd(nu + 8);
        for (int r = 0; r < 4; ++r) {
          const __m256d b = _mm256_set1_pd(y0[r * a.d + c]);
          acc[r][0] = _mm256_fmadd_pd(b, v0, acc[r][0]);
          acc[r][1] = _mm256_fmadd_pd(b, v1, acc[r][1]);
          acc[r][2] = _mm256_fmadd_pd(b, v2, acc[r][2]);
        }
      }
      for (int r = 0; r < 4; ++r) {
        double* row = a.out + (j + r) * a.k + k;
        _mm256_storeu_pd(row, _mm256_mul_pd(scale, acc[r][0]));
        _mm256_storeu_pd(row + 4, _mm256_mul_pd(scale, acc[r][1]));
        _mm256_storeu_pd(row + 8, _mm256_mul_pd(scale, acc[r][2]));
      }
    }
    for (std::size_t k = k12; k < kv; k += 4) {
      __m256d acc[4] = {_mm256_setzero_pd(), _mm256_setzero_pd(), _mm256_setzero_pd(), _mm256_setzero_pd()};
      for (std::size_t c = 0; c < a.d; ++c) {
        const __m256d v = _mm256_loadu_pd(a.nu + c * a.k + k);
        for (int r = 0; r < 4; ++r) acc[r] = _mm256_fmadd_pd(_mm256_set1_pd(y0[r * a.d + c]), v, acc[r]);
      }
      for (int r = 0; r < 4; ++r) _mm256_storeu_pd(a.out + (j + r) * a.k + k, _mm256_mul_pd(scale, acc[r]));
    }
    for (int r = 0; r < 4; ++r) {
      const double* y = y0 + r * a.d;
      double* row = a.out + (j + r) * a.k;
      for (std::size_t k = kv; k < a.k; ++k) {
        double s = 0.0;
        for (std::size_t c = 0; c < a.d; ++c) s = std::fma(y[c], a.nu[c * a.k + k], s);
        row[k] = a.scale * s;
      }
    }
  }
  for (; j < a.n; ++j) single_row(j);
}

void feature_sums(const FeatureArgs& a) {
  const std::size_t kv = a.k & ~std::size_t{3};
  const std::size_t k12 = kv - kv % 12;
  // w_j * y_jc once up front.
  std::vector<double> wy(a.n * a.d);
  for (std::size_t j = 0; j < a.n; ++j) {
    for (std::size_t c = 0; c < a.d; ++c) wy[j * a.d + c] = a.weights[j] * a.y[j * a.d + c];
  }
  auto single_channel = [&](std::size_t c) {
    double* out = a.out + c * a.k;
    for (std::size_t k = 0; k < kv; k += 4) {
      __m256d acc = _mm256_loadu_pd(out + k);
      for (std::size_t j = 0; j < a.n; ++j) {
        acc = _mm256_fmadd_pd(_mm256_set1_pd(wy[j * a.d + c]), _mm256_loadu_pd(a.alpha + j * a.k + k), acc);
      }
      _mm256_storeu_pd(out + k, acc);
    }
    for (std::size_t k = kv; k < a.k; ++k) {
      double s = out[k];
      for (std::size_t j = 0; j < a.n; ++j) s = std::fma(wy[j * a.d + c], a.alpha[j * a.k + k], s);
      out[k] = s;
    }
  };

  std::size_t c = 0;
  for (; c + 4 <= a.d; c += 4) {
    for (std::size_t k = 0; k < k12; k += 12) {
      __m256d acc[4][3];
      for (int r = 0; r < 4; ++r) {
        const double* out = a.out + (c + r) * a.k + k;
        acc[r][0] = _mm256_loadu_pd(out);
        acc[r][1] = _mm256_loadu_pd(out + 4);
        acc[r][2] = _mm256_loadu_pd(out + 8);
      }
      for (std::size_t j = 0; j < a.n; ++j) {
        const double* al = a.alpha + j * a.k + k;
        const __m256d v0 = _mm256_loadu_pd(al), v1 = _mm256_loadu_pd(al + 4), v2 = _mm256_loadu_pd(al + 8);
        const double* w = wy.data() + j * a.d + c;
        for (int r = 0; r < 4; ++r) {
          const __m256d b = _mm256_set1_pd(w[r]);
          acc[r][0] = _mm256_fmadd_pd(b, v0, acc[r][0]);
          acc[r][1] = _mm256_fmadd_pd(b, v1, acc[r][1]);
          acc[r][2] = _mm256_fmadd_pd(b, v2, acc[r][2]);
        }
      }
      for (int r = 0; r < 4; ++r) {
        double* out = a.out + (c + r) * a.k + k;
        _mm256_storeu_pd(out, acc[r][0]);
        _mm256_storeu_pd(out + 4, acc[r][1]);
        _mm256_storeu_pd(out + 8, acc[r][2]);
      }
    }
    for (std::size_t k = k12; k < kv; k += 4) {
      __m256d acc[4];
      for (int r = 0; r < 4; ++r) acc[r] = _mm256_loadu_pd(a.out + (c + r) * a.k + k);
      for (std::size_t j = 0; j < a.n; ++j) {
        const __m256d v = _mm256_loadu_pd(a.alpha + j * a.k + k);
        const double* w = wy.data() + j * a.d + c;
        for (int r = 0; r < 4; ++r) acc[r] = _mm256_fmadd_pd(_mm256_set1_pd(w[r]), v, acc[r]);
      }
      for (int r = 0; r < 4; ++r) _mm256_storeu_pd(a.out + (c + r) * a.k + k, acc[r]);
    }
    for (int r = 0; r < 4; ++r) {
      double* out = a.out + (c + r) * a.k;
      for (std::size_t k = kv; k < a.k; ++k) {
        double s = out[k];
        for (std::size_t j = 0; j < a.n; ++j) s = std::fma(wy[j * a.d + c + r], a.alpha[j * a.k + k], s);
        out[k] = s;
      }
    }
  }
  for (; c < a.d; ++c) single_channel(c);
}

}  // namespace rllreg::kernels::avx2
