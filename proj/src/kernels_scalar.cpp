#include <algorithm>
#include <cmath>
#include <limits>

#include "rllreg/kernels.hpp"

namespace rllreg::kernels::scalar {

std::size_t responsibilities(const ResponsibilityArgs& a) {
  std::size_t fallbacks = 0;
  for (std::size_t j = 0; j < a.n; ++j) {
    double* row = a.out + j * a.k;
    const double* feat = a.feature_logits ? a.feature_logits + j * a.k : nullptr;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < a.k; ++k) {
      const double dx = a.px[j] - a.mx[k];
      const double dy = a.py[j] - a.my[k];
      const double dz = a.pz[j] - a.mz[k];
      double l = a.log_prior[k] + a.neg_half_inv_var[k] * (dx * dx + dy * dy + dz * dz);
      if (feat) l += feat[k];
      row[k] = l;
      best = std::max(best, l);
    }
    double sum = 0.0;
    if (std::isfinite(best)) {
      for (std::size_t k = 0; k < a.k; ++k) {
        row[k] = std::exp(row[k] - best);
        sum += row[k];
      }
    }
    if (!(sum > 0.0) || !std::isfinite(sum)) {
      std::fill(row, row + a.k, 1.0 / static_cast<double>(a.k));
      ++fallbacks;
      continue;
    }
    const double inv = 1.0 / sum;
    for (std::size_t k = 0; k < a.k; ++k) row[k] *= inv;
  }
  return fallbacks;
}

void gaussian_kernel_sums(const double* x, const double* y, const double* z, std::size_t n,
                          double inv_two_h2, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      const double dz = z[i] - z[j];
      s += std::exp(-(dx * dx + dy * dy + dz * dz) * inv_two_h2);
    }
    out[i] = s;
  }
}

void exp_inplace(double* values, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) values[i] = std::exp(values[i]);
}

void virtual_targets(const TargetArgs& a) {
  for (std::size_t j = 0; j < a.n; ++j) {
    const double* row = a.alpha + j * a.k;
    double p = 0.0, x = 0.0, y = 0.0, z = 0.0;
    for (std::size_t k = 0; k < a.k; ++k) {
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
  for (std::size_t j = 0; j < a.n; ++j) {
    const double* row = a.alpha + j * a.k;
    const double w = a.weights[j];
    for (std::size_t k = 0; k < a.k; ++k) {
      const double c = w * row[k];
      a.mass[k] += c;
      a.fx[k] += c * a.px[j];
      a.fy[k] += c * a.py[j];
      a.fz[k] += c * a.pz[j];
    }
  }
}

void second_moments(const MomentArgs& a) {
  for (std::size_t j = 0; j < a.n; ++j) {
    const double* row = a.alpha + j * a.k;
    const double w = a.weights[j];
    for (std::size_t k = 0; k < a.k; ++k) {
      const double dx = a.px[j] - a.mx[k];
      const double dy = a.py[j] - a.my[k];
      const double dz = a.pz[j] - a.mz[k];
      a.second[k] += w * row[k] * (dx * dx + dy * dy + dz * dz);
    }
  }
}

void feature_logits(const FeatureArgs& a) {
  for (std::size_t j = 0; j < a.n; ++j) {
    const double* y = a.y + j * a.d;
    double* row = a.out + j * a.k;
    for (std::size_t k = 0; k < a.k; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < a.d; ++c) s += y[c] * a.nu[c * a.k + k];
      row[k] = a.scale * s;
    }
  }
}

void feature_sums(const FeatureArgs& a) {
  for (std::size_t j = 0; j < a.n; ++j) {
    const double* y = a.y + j * a.d;
    const double* row = a.alpha + j * a.k;
    for (std::size_t c = 0; c < a.d; ++c) {
      const double wy = a.weights[j] * y[c];
      double* out = a.out + c * a.k;
      for (std::size_t k = 0; k < a.k; ++k) out[k] += wy * row[k];
    }
  }
}

}  // namespace rllreg::kernels::scalar
