#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "soz/errors.hpp"

namespace soz {

enum class KernelKind { Rbf, Multiscale };
enum class BandwidthMode { MedianHeuristic, Explicit };

/// Characteristic kernel used by the discrepancy. With the median heuristic,
/// RBF bandwidths are multipliers * median squared distance and multiscale
/// scales are scales * sqrt(median squared distance); in explicit mode the
/// lists are used as given.
struct KernelSpec {
  KernelKind kind = KernelKind::Rbf;
  BandwidthMode bandwidth_mode = BandwidthMode::MedianHeuristic;
  std::vector<double> multipliers{0.25, 0.5, 1.0, 2.0, 4.0};
  std::vector<double> scales{0.2, 0.5, 0.9, 1.3};

  static KernelSpec rbf() { return {}; }
  static KernelSpec multiscale() {
    KernelSpec k;
    k.kind = KernelKind::Multiscale;
    return k;
  }

  void validate() const;

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

std::string to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& name);

/// sum_b exp(-sqdist / b)
inline double rbf_kernel_sum(double sqdist, const std::vector<double>& bandwidths) {
  double total = 0;
  for (double b : bandwidths) total += std::exp(-sqdist / b);
  return total;
}

/// sum_a a^2 / (a^2 + sqdist)
inline double multiscale_kernel_sum(double sqdist, const std::vector<double>& scales) {
  double total = 0;
  for (double a : scales) total += a * a / (a * a + sqdist);
  return total;
}

using DistanceMatrix = Eigen::MatrixXd;

/// Squared Euclidean distances between the rows of x and y, via the Gram
/// expansion, clamped at 0.
template <typename DerivedX, typename DerivedY>
DistanceMatrix pairwise_sqdist(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) {
  const Eigen::MatrixXd xd = x.template cast<double>();
  const Eigen::MatrixXd yd = y.template cast<double>();
  const Eigen::VectorXd xn = xd.rowwise().squaredNorm();
  const Eigen::VectorXd yn = yd.rowwise().squaredNorm();
  DistanceMatrix d = -2.0 * (xd * yd.transpose());
  d.colwise() += xn;
  d.rowwise() += yn.transpose();
  return d.cwiseMax(0.0);
}

/// Median of the strictly-upper-triangular entries of a symmetric distance
/// matrix (mean of the two middle values for an even count).
double median_upper_triangle(const DistanceMatrix& d);

/// Median pairwise squared distance over the pooled rows of x and y.
template <typename DerivedX, typename DerivedY>
double pooled_median_sqdist(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y) {
  Eigen::MatrixXd pooled(x.rows() + y.rows(), x.cols());
  pooled << x.template cast<double>(), y.template cast<double>();
  return median_upper_triangle(pairwise_sqdist(pooled, pooled));
}

/// Bandwidths (RBF) or scales (multiscale) after applying the heuristic.
std::vector<double> resolve_kernel_parameters(const KernelSpec& spec, double median_sqdist);

/// Kernel evaluated elementwise on a squared-distance matrix.
Eigen::MatrixXd apply_kernel(const DistanceMatrix& sqdist, KernelKind kind, const std::vector<double>& params);

struct MmdEstimate {
  double mmd2;            // clamped at 0
  double mmd2_unclamped;  // raw V-statistic
  double median_sqdist;
};

/// Biased (V-statistic) squared MMD:
///   mean k(x_i, x_j) + mean k(y_i, y_j) - 2 mean k(x_i, y_j).
template <typename DerivedX, typename DerivedY>
MmdEstimate mmd2_estimate(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y,
                          const KernelSpec& spec) {
  spec.validate();
  if (x.cols() != y.cols()) {
    throw ShapeError("mmd2: feature dimensions differ (" + std::to_string(x.cols()) + " vs " + std::to_string(y.cols()) +
                     ")");
  }
  if (x.rows() < 2 || y.rows() < 2) throw ConfigError("mmd2: each sample needs at least 2 rows");
  const double median = spec.bandwidth_mode == BandwidthMode::MedianHeuristic ? pooled_median_sqdist(x, y) : 0.0;
  const auto params = resolve_kernel_parameters(spec, median);
  const double kxx = apply_kernel(pairwise_sqdist(x, x), spec.kind, params).mean();
  const double kyy = apply_kernel(pairwise_sqdist(y, y), spec.kind, params).mean();
  const double kxy = apply_kernel(pairwise_sqdist(x, y), spec.kind, params).mean();
  const double raw = kxx + kyy - 2.0 * kxy;
  return {std::max(raw, 0.0), raw, median};
}

template <typename DerivedX, typename DerivedY>
double mmd2_biased(const Eigen::MatrixBase<DerivedX>& x, const Eigen::MatrixBase<DerivedY>& y, const KernelSpec& spec) {
  return mmd2_estimate(x, y, spec).mmd2;
}

}  // namespace soz
