#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "rllreg/kernels.hpp"

namespace k = rllreg::kernels;

namespace {

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-300});
    if (a[i] == b[i]) continue;
    m = std::max(m, std::abs(a[i] - b[i]) / scale);
  }
  return m;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Sizes exercise the vector bodies and every remainder path.
const std::size_t kPointCounts[] = {1, 3, 4, 5, 17, 64, 129};
const std::size_t kComponentCounts[] = {1, 2, 3, 4, 7, 12, 13, 50};

}  // namespace

TEST_CASE("dispatch reports a usable ISA") {
  CHECK(k::isa_available(k::Isa::Scalar));
  const k::Isa isa = k::active_isa();
  CHECK(k::isa_available(isa));
  MESSAGE("active kernels: " << k::to_string(isa));
  k::set_isa(k::Isa::Scalar);
  CHECK(k::active_isa() == k::Isa::Scalar);
  k::set_isa(isa);
}

TEST_CASE("scalar exp matches std::exp and the vector exp agrees") {
  std::mt19937_64 rng(1);
  std::vector<double> x = uniform(rng, 1003, -745.0, 709.0);
  for (double v : {0.0, -0.0, 1e-300, -1e-300, 709.78, -708.4, -745.2, -800.0, 1.0, -1.0, 0.5}) x.push_back(v);
  std::vector<double> a = x, b = x;
  k::scalar::exp_inplace(a.data(), a.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(a[i] == std::exp(x[i]));
  if (!k::isa_available(k::Isa::Avx2)) return;
  k::avx2::exp_inplace(b.data(), b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 709.436138303) {  // documented overflow cut-off of the vector path
      CHECK(std::isinf(b[i]));
      continue;
    }
    if (a[i] < std::numeric_limits<double>::min()) {
      CHECK(b[i] <= 2 * std::numeric_limits<double>::min());  // subnormals flush to zero
      continue;
    }
    worst = std::max(worst, std::abs(a[i] - b[i]) / a[i]);
  }
  CHECK(worst < 1e-14);

  std::vector<double> inf{-std::numeric_limits<double>::infinity(), 710.0};
  k::avx2::exp_inplace(inf.data(), inf.size());
  CHECK(inf[0] == 0.0);
  CHECK(std::isinf(inf[1]));
}

TEST_CASE("responsibilities: scalar and vector kernels agree") {
  if (!k::isa_available(k::Isa::Avx2)) return;
  std::mt19937_64 rng(2);
  for (std::size_t n : kPointCounts) {
    for (std::size_t kc : kComponentCounts) {
      for (int with_features = 0; with_features < 2; ++with_features) {
        auto px = uniform(rng, n, -2, 2), py = uniform(rng, n, -2, 2), pz = uniform(rng, n, -2, 2);
        auto mx = uniform(rng, kc, -2, 2), my = uniform(rng, kc, -2, 2), mz = uniform(rng, kc, -2, 2);
        auto nh = uniform(rng, kc, -30.0, -0.1), lp = uniform(rng, kc, -3.0, 0.0);
        auto fl = uniform(rng, n * kc, -6.0, 6.0);
        std::vector<double> a(n * kc), b(n * kc);
        k::ResponsibilityArgs args{px.data(), py.data(), pz.data(), n, mx.data(), my.data(), mz.data(), kc,
                                   nh.data(), lp.data(), with_features ? fl.data() : nullptr, a.data()};
        const auto fa = k::scalar::responsibilities(args);
        args.out = b.data();
        const auto fb = k::avx2::responsibilities(args);
        CHECK(fa == fb);
        CHECK(max_abs_diff(a, b) < 1e-13);
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < kc; ++c) s += b[j * kc + c];
          CHECK(std::abs(s - 1.0) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("responsibilities survive extreme logits") {
  // Far-away points: every Gaussian term underflows without the max shift.
  const std::size_t n = 5, kc = 3;
  std::vector<double> px(n, 1e4), py(n, 0.0), pz(n, 0.0), mx{0.0, 1.0, 2.0}, my(kc, 0.0), mz(kc, 0.0);
  std::vector<double> nh(kc, -0.5), lp(kc, std::log(1.0 / 3.0)), out(n * kc);
  k::ResponsibilityArgs args{px.data(), py.data(), pz.data(), n, mx.data(), my.data(), mz.data(), kc,
                             nh.data(), lp.data(), nullptr, out.data()};
  for (k::Isa isa : {k::Isa::Scalar, k::Isa::Avx2}) {
    if (!k::isa_available(isa)) continue;
    const auto fallback = isa == k::Isa::Scalar ? k::scalar::responsibilities(args) : k::avx2::responsibilities(args);
    CHECK(fallback == 0);
    for (std::size_t j = 0; j < n; ++j) CHECK(out[j * kc + 2] == doctest::Approx(1.0));
  }
}

TEST_CASE("gaussian_kernel_sums: scalar and vector agree") {
  if (!k::isa_available(k::Isa::Avx2)) return;
  std::mt19937_64 rng(3);
  for (std::size_t n : kPointCounts) {
    auto x = uniform(rng, n, -1, 1), y = uniform(rng, n, -1, 1), z = uniform(rng, n, -1, 1);
    std::vector<double> a(n), b(n);
    k::scalar::gaussian_kernel_sums(x.data(), y.data(), z.data(), n, 12.5, a.data());
    k::avx2::gaussian_kernel_sums(x.data(), y.data(), z.data(), n, 12.5, b.data());
    CHECK(max_rel_diff(a, b) < 1e-13);
  }
}

TEST_CASE("virtual targets and moments: scalar and vector agree") {
  if (!k::isa_available(k::Isa::Avx2)) return;
  std::mt19937_64 rng(4);
  for (std::size_t n : kPointCounts) {
    for (std::size_t kc : kComponentCounts) {
      auto alpha = uniform(rng, n * kc, 0.0, 1.0);
      auto iv = uniform(rng, kc, 0.1, 10.0), w = uniform(rng, n, 0.5, 2.0);
      auto mx = uniform(rng, kc, -2, 2), my = uniform(rng, kc, -2, 2), mz = uniform(rng, kc, -2, 2);
      auto px = uniform(rng, n, -2, 2), py = uniform(rng, n, -2, 2), pz = uniform(rng, n, -2, 2);

      std::vector<double> pa(n), xa(n), ya(n), za(n), pb(n), xb(n), yb(n), zb(n);
      k::TargetArgs t{alpha.data(), n, kc, iv.data(), mx.data(), my.data(), mz.data(), pa.data(), xa.data(), ya.data(), za.data()};
      k::scalar::virtual_targets(t);
      t.precision = pb.data();
      t.tx = xb.data();
      t.ty = yb.data();
      t.tz = zb.data();
      k::avx2::virtual_targets(t);
      CHECK(max_rel_diff(pa, pb) < 1e-13);
      CHECK(max_abs_diff(xa, xb) < 1e-13);
      CHECK(max_abs_diff(ya, yb) < 1e-13);
      CHECK(max_abs_diff(za, zb) < 1e-13);

      std::vector<double> ma(kc, 0.0), fxa(kc, 0.0), fya(kc, 0.0), fza(kc, 0.0), sa(kc, 0.0);
      std::vector<double> mb(kc, 0.0), fxb(kc, 0.0), fyb(kc, 0.0), fzb(kc, 0.0), sb(kc, 0.0);
      k::MomentArgs m{alpha.data(), n, kc, w.data(), px.data(), py.data(), pz.data(), mx.data(), my.data(), mz.data(),
                      ma.data(), fxa.data(), fya.data(), fza.data(), sa.data()};
      k::scalar::first_moments(m);
      k::scalar::second_moments(m);
      m.mass = mb.data();
      m.fx = fxb.data();
      m.fy = fyb.data();
      m.fz = fzb.data();
      m.second = sb.data();
      k::avx2::first_moments(m);
      k::avx2::second_moments(m);
      CHECK(max_rel_diff(ma, mb) < 1e-12);
      CHECK(max_abs_diff(fxa, fxb) < 1e-11);
      CHECK(max_abs_diff(fya, fyb) < 1e-11);
      CHECK(max_abs_diff(fza, fzb) < 1e-11);
      CHECK(max_rel_diff(sa, sb) < 1e-12);
    }
  }
}

TEST_CASE("feature logits and sums: scalar and vector agree") {
  if (!k::isa_available(k::Isa::Avx2)) return;
  std::mt19937_64 rng(5);
  for (std::size_t n : kPointCounts) {
    for (std::size_t kc : kComponentCounts) {
      for (std::size_t d : {1, 3, 4, 16, 17}) {
        auto y = uniform(rng, n * d, -1, 1), nu = uniform(rng, d * kc, -1, 1);
        auto alpha = uniform(rng, n * kc, 0, 1), w = uniform(rng, n, 0.5, 2.0);
        std::vector<double> la(n * kc), lb(n * kc);
        k::FeatureArgs f{y.data(), n, d, kc, nu.data(), 6.25, nullptr, nullptr, la.data()};
        k::scalar::feature_logits(f);
        f.out = lb.data();
        k::avx2::feature_logits(f);
        CHECK(max_abs_diff(la, lb) < 1e-12);

        std::vector<double> sa(d * kc, 0.5), sb(d * kc, 0.5);  // accumulates
        k::FeatureArgs s{y.data(), n, d, kc, nullptr, 1.0, alpha.data(), w.data(), sa.data()};
        k::scalar::feature_sums(s);
        s.out = sb.data();
        k::avx2::feature_sums(s);
        CHECK(max_abs_diff(sa, sb) < 1e-12);
      }
    }
  }
}

TEST_CASE("dispatched kernels follow the selected ISA") {
  std::mt19937_64 rng(6);
  const std::size_t n = 33;
  auto x = uniform(rng, n, -50, 5);
  std::vector<double> via_dispatch = x, reference = x;
  const k::Isa isa = k::active_isa();
  k::exp_inplace(via_dispatch.data(), n);
  if (isa == k::Isa::Scalar) {
    k::scalar::exp_inplace(reference.data(), n);
  } else {
    k::avx2::exp_inplace(reference.data(), n);
  }
  CHECK(via_dispatch == reference);
}
