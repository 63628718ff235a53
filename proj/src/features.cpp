#include "rllreg/features.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "rllreg/error.hpp"
#include "rllreg/kdtree.hpp"
#include "rllreg/kernels.hpp"

namespace rllreg {
namespace {

struct LocalFrame {
  Eigen::Vector3d eigenvalues;  // descending
  Eigen::Vector3d normal;
  Eigen::Vector3d centroid;
  double rms = 0.0;
};

LocalFrame analyse(const PointCloud& points, Eigen::Index self,
                   const std::vector<Neighbor>& neighbors) {
  const auto count = static_cast<double>(neighbors.size() + 1);
  Eigen::Vector3d c = points.col(self);
  double rms2 = 0.0;
  for (const auto& n : neighbors) {
    c += points.col(n.index);
    rms2 += n.squared_distance;
  }
  c /= count;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  const Eigen::Vector3d d0 = points.col(self) - c;
  cov += d0 * d0.transpose();
  for (const auto& n : neighbors) {
    const Eigen::Vector3d d = points.col(n.index) - c;
    cov += d * d.transpose();
  }
  cov /= count;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  LocalFrame f;
  const Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0);  // ascending
  f.eigenvalues = Eigen::Vector3d(ev[2], ev[1], ev[0]);
  f.normal = es.eigenvectors().col(0);
  f.centroid = c;
  f.rms = neighbors.empty() ? 0.0 : std::sqrt(rms2 / static_cast<double>(neighbors.size()));
  return f;
}

double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

Eigen::MatrixXd compute_descriptors(const PointCloud& points, int k) {
  const Eigen::Index n = points.cols();
  if (k < 1 || n <= k) {
    throw Error(ErrorKind::InvalidArgument,
                "compute_descriptors: need more points (" + std::to_string(n) +
                    ") than neighbours (" + std::to_string(k) + ")");
  }
  const KdTree tree(points);
  const int wide = static_cast<int>(std::min<Eigen::Index>(2 * k, n - 1));

  std::vector<LocalFrame> frames(static_cast<std::size_t>(n));
  Eigen::VectorXd wide_normal_dot(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto wide_nb = tree.knn(points.col(j), wide, j);
    const std::vector<Neighbor> near(wide_nb.begin(), wide_nb.begin() + k);
    frames[j] = analyse(points, j, near);
    const LocalFrame big = analyse(points, j, wide_nb);
    wide_normal_dot[j] = std::abs(frames[j].normal.dot(big.normal));
  }

  std::vector<double> radii;
  radii.reserve(static_cast<std::size_t>(n));
  for (const auto& f : frames) radii.push_back(f.rms);
  std::nth_element(radii.begin(), radii.begin() + n / 2, radii.end());
  const double r_ref = radii[static_cast<std::size_t>(n / 2)];

  Eigen::MatrixXd out(kRawDescriptorDim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const LocalFrame& f = frames[j];
    const double l1 = f.eigenvalues[0], l2 = f.eigenvalues[1], l3 = f.eigenvalues[2];
    const double sum = l1 + l2 + l3;
    const Eigen::Vector3d offset = points.col(j) - f.centroid;
    auto col = out.col(j);
    col[0] = safe_ratio(l1, sum);
    col[1] = safe_ratio(l2, sum);
    col[2] = safe_ratio(l3, sum);
    col[3] = safe_ratio(l1 - l2, l1);
    col[4] = safe_ratio(l2 - l3, l2 + 1e-12 * l1);
    col[5] = safe_ratio(l3, l1);
    col[6] = (f.rms > 0.0 && r_ref > 0.0) ? std::log(r_ref / f.rms) : 0.0;
    col[7] = safe_ratio(std::abs(f.normal.dot(offset)), f.rms);
    col[8] = wide_normal_dot[j];
    col[9] = safe_ratio(offset.norm(), f.rms);
  }
  return out;
}

Eigen::MatrixXd standardize_descriptors(const Eigen::MatrixXd& raw) {
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  if (raw.cols() == 0) return out;
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    const double mean = raw.row(r).mean();
    const double var = (raw.row(r).array() - mean).square().mean();
    const double sd = std::sqrt(var);
    if (sd > 1e-12) {
      out.row(r) = (raw.row(r).array() - mean) / sd;
    } else {
      out.row(r).setZero();
    }
  }
  return out;
}

FeatureHeadParams FeatureHeadParams::initial(Eigen::Index dim, Eigen::Index raw_dim,
                                             std::uint64_t seed) {
  if (dim < 1 || raw_dim < 1) throw Error(ErrorKind::InvalidArgument, "head dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(raw_dim)));
  FeatureHeadParams p;
  p.feature_matrix.resize(dim, raw_dim);
  for (Eigen::Index r = 0; r < dim; ++r) {
    for (Eigen::Index c = 0; c < raw_dim; ++c) p.feature_matrix(r, c) = normal(rng);
  }
  p.feature_bias = Eigen::VectorXd::Zero(dim);
  p.attention_vector = Eigen::VectorXd::Zero(raw_dim);
  p.attention_bias = std::log(std::expm1(1.0));  // softplus(b) == 1
  return p;
}

Eigen::VectorXd FeatureHeadParams::flatten() const {
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index o = 0;
  for (Eigen::Index r = 0; r < dim(); ++r) {
    for (Eigen::Index c = 0; c < raw_dim(); ++c) flat[o++] = feature_matrix(r, c);
  }
  flat.segment(o, dim()) = feature_bias;
  o += dim();
  flat.segment(o, raw_dim()) = attention_vector;
  o += raw_dim();
  flat[o] = attention_bias;
  return flat;
}

FeatureHeadParams FeatureHeadParams::unflatten(const Eigen::VectorXd& flat, Eigen::Index dim,
                                               Eigen::Index raw_dim) {
  if (flat.size() != dim * raw_dim + dim + raw_dim + 1) {
    throw Error(ErrorKind::InvalidArgument, "unflatten: parameter vector has the wrong length");
  }
  FeatureHeadParams p;
  p.feature_matrix.resize(dim, raw_dim);
  Eigen::Index o = 0;
  for (Eigen::Index r = 0; r < dim; ++r) {
    for (Eigen::Index c = 0; c < raw_dim; ++c) p.feature_matrix(r, c) = flat[o++];
  }
  p.feature_bias = flat.segment(o, dim);
  o += dim;
  p.attention_vector = flat.segment(o, raw_dim);
  o += raw_dim;
  p.attention_bias = flat[o];
  return p;
}

void FeatureHeadParams::validate() const {
  if (feature_bias.size() != dim() || attention_vector.size() != raw_dim()) {
    throw Error(ErrorKind::InvalidArgument, "FeatureHeadParams: inconsistent shapes");
  }
  if (!feature_matrix.allFinite() || !feature_bias.allFinite() || !attention_vector.allFinite() ||
      !std::isfinite(attention_bias)) {
    throw Error(ErrorKind::InvalidArgument, "FeatureHeadParams: non-finite parameter");
  }
}

double softplus(double z) {
  // log(1 + e^z) = max(z, 0) + log1p(e^{-|z|})
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

FeatureOutput feature_head(const Eigen::VectorXd& raw, const FeatureHeadParams& params) {
  FeatureOutput out;
  out.feature = params.feature_matrix * raw + params.feature_bias;
  const double n = out.feature.norm();
  if (!(n > 1e-12) || !std::isfinite(n)) {
    out.feature = Eigen::VectorXd::Unit(params.dim(), 0);
    out.degenerate = true;
  } else {
    out.feature /= n;
  }
  return out;
}

double attention_head(const Eigen::VectorXd& raw, const FeatureHeadParams& params) {
  return softplus(params.attention_vector.dot(raw) + params.attention_bias);
}

Eigen::MatrixXd apply_feature_head(const Eigen::MatrixXd& raw, const FeatureHeadParams& params,
                                   int* degenerate) {
  Eigen::MatrixXd out = params.feature_matrix * raw;
  out.colwise() += params.feature_bias;
  int bad = 0;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double n = out.col(j).norm();
    if (!(n > 1e-12) || !std::isfinite(n)) {
      out.col(j) = Eigen::VectorXd::Unit(params.dim(), 0);
      ++bad;
    } else {
      out.col(j) /= n;
    }
  }
  if (degenerate) *degenerate = bad;
  return out;
}

Eigen::VectorXd apply_attention_head(const Eigen::MatrixXd& raw, const FeatureHeadParams& params) {
  Eigen::VectorXd z = raw.transpose() * params.attention_vector;
  for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = softplus(z[j] + params.attention_bias);
  return z;
}

Eigen::VectorXd kernel_density(const PointCloud& points, double bandwidth) {
  if (!(bandwidth > 0.0)) throw Error(ErrorKind::InvalidArgument, "bandwidth must be positive");
  const Eigen::Matrix<double, 3, Eigen::Dynamic, Eigen::RowMajor> soa = points;
  Eigen::VectorXd out(points.cols());
  kernels::gaussian_kernel_sums(soa.row(0).data(), soa.row(1).data(), soa.row(2).data(),
                                static_cast<std::size_t>(points.cols()),
                                1.0 / (2.0 * bandwidth * bandwidth), out.data());
  return out;
}

Eigen::VectorXd density_weights(const PointCloud& points, double bandwidth) {
  Eigen::VectorXd w = kernel_density(points, bandwidth);
  if (w.size() == 0) return w;
  w = (w.array() + kDensityEpsilon).inverse().matrix();
  return w / w.mean();
}

}  // namespace rllreg
