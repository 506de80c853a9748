#include "soz/mmd.hpp"

namespace soz {

void KernelSpec::validate() const {
  const auto& list = kind == KernelKind::Rbf ? multipliers : scales;
  if (list.empty()) throw ConfigError("kernel: parameter list is empty");
  for (double v : list) {
    if (!(v > 0) || !std::isfinite(v)) throw ConfigError("kernel: parameters must be positive and finite");
  }
}

std::string to_string(KernelKind kind) { return kind == KernelKind::Rbf ? "RBF" : "Multiscale"; }

KernelKind kernel_kind_from_string(const std::string& name) {
  if (name == "RBF" || name == "rbf") return KernelKind::Rbf;
  if (name == "Multiscale" || name == "multiscale") return KernelKind::Multiscale;
  throw ConfigError("unknown kernel '" + name + "' (expected RBF or Multiscale)");
}

double median_upper_triangle(const DistanceMatrix& d) {
  const Eigen::Index n = d.rows();
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index j = 1; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) values.push_back(d(i, j));
  }
  if (values.empty()) throw ConfigError("median heuristic: need at least two points");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

std::vector<double> resolve_kernel_parameters(const KernelSpec& spec, double median_sqdist) {
  if (spec.bandwidth_mode == BandwidthMode::Explicit) {
    return spec.kind == KernelKind::Rbf ? spec.multipliers : spec.scales;
  }
  // All points coincide: fall back to unit scale so the kernel stays defined.
  const double base = median_sqdist > 0 ? median_sqdist : 1.0;
  std::vector<double> out;
  if (spec.kind == KernelKind::Rbf) {
    for (double m : spec.multipliers) out.push_back(m * base);
  } else {
    const double dist = std::sqrt(base);
    for (double s : spec.scales) out.push_back(s * dist);
  }
  return out;
}

Eigen::MatrixXd apply_kernel(const DistanceMatrix& sqdist, KernelKind kind, const std::vector<double>& params) {
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(sqdist.rows(), sqdist.cols());
  if (kind == KernelKind::Rbf) {
    for (double b : params) k.array() += (-sqdist.array() / b).exp();
  } else {
    for (double a : params) k.array() += (a * a) / (a * a + sqdist.array());
  }
  return k;
}

}  // namespace soz
