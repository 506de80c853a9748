#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "soz/mmd.hpp"
#include "soz/ops.hpp"
#include "soz/tensor.hpp"

namespace soz::testkit {

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle for small conv nets
// ---------------------------------------------------------------------------

/// Two conv blocks ((conv, relu) x 2, max-pool) and two linear layers with a
/// relu and dropout in between, evaluated on a fixed random batch.
struct SmallNet {
  Index batch = 3;
  Index length = 32;
  Index channels = 3;
  Index kernel = 3;
  Index pool = 2;
  Index hidden = 6;
  double dropout_p = 0.25;
  std::uint64_t dropout_seed = 0;
  std::vector<int> labels;
  std::vector<double> sample_weights;
  Tensor<double> input;
  std::vector<Variable<double>> params;

  /// Ties are not broken here: the pattern records which side of every kink
  /// (relu sign, pool argmax) the evaluation landed on.
  struct Eval {
    double loss = 0;
    std::vector<Index> pattern;
  };

  static SmallNet random(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, 2);
    std::normal_distribution<double> normal(0.0, 1.0);
    SmallNet n;
    n.batch = 2 + pick(rng);
    n.length = 24 + 8 * pick(rng);
    n.channels = 2 + pick(rng);
    n.kernel = 3 + 2 * (pick(rng) % 2);
    n.hidden = 4 + pick(rng);
    n.dropout_seed = rng();
    n.input = Tensor<double>({n.batch, 1, n.length});
    for (Index i = 0; i < n.input.size(); ++i) n.input[i] = normal(rng);
    for (Index i = 0; i < n.batch; ++i) {
      n.labels.push_back(static_cast<int>(rng() % 2));
      n.sample_weights.push_back(0.5 + std::uniform_real_distribution<double>(0.0, 1.0)(rng));
    }
    auto param = [&](Shape shape, double scale) {
      Tensor<double> t(std::move(shape));
      for (Index i = 0; i < t.size(); ++i) t[i] = scale * normal(rng);
      n.params.emplace_back(std::move(t), true);
    };
    const Index c = n.channels;
    const Index k = n.kernel;
    const Index in_ch[4] = {1, c, c, c};
    for (Index layer = 0; layer < 4; ++layer) {
      param({c, in_ch[layer], k}, 1.0 / std::sqrt(static_cast<double>(in_ch[layer] * k)));
      param({c}, 0.1);
    }
    const Index flat = c * n.final_length();
    param({n.hidden, flat}, 1.0 / std::sqrt(static_cast<double>(flat)));
    param({n.hidden}, 0.1);
    param({2, n.hidden}, 1.0 / std::sqrt(static_cast<double>(n.hidden)));
    param({2}, 0.1);
    return n;
  }

  Index final_length() const {
    Index len = length;
    for (int blk = 0; blk < 2; ++blk) {
      const Index padding = kernel / 2;
      len = conv_output_length(len, kernel, 1, padding);
      len = conv_output_length(len, kernel, 1, padding);
      len = pool_output_length(len, pool, pool);
    }
    return len;
  }

  Eval evaluate(const std::vector<Variable<double>>& p) const {
    Eval e;
    auto mark_signs = [&](const Variable<double>& v) {
      for (Index i = 0; i < v.value().size(); ++i) e.pattern.push_back(v.value()[i] > 0.0 ? 1 : 0);
    };
    Variable<double> x(input);
    const Index padding = kernel / 2;
    for (int blk = 0; blk < 2; ++blk) {
      for (int j = 0; j < 2; ++j) {
        const std::size_t layer = static_cast<std::size_t>(2 * blk + j);
        auto pre = conv1d(x, p[2 * layer], p[2 * layer + 1], 1, padding);
        mark_signs(pre);
        x = relu(pre);
      }
      auto pooled = maxpool1d_with_indices(x, pool, pool);
      e.pattern.insert(e.pattern.end(), pooled.argmax.begin(), pooled.argmax.end());
      x = pooled.output;
    }
    x = flatten(x);
    auto h = linear(x, p[8], p[9]);
    mark_signs(h);
    h = dropout(relu(h), dropout_p, true, dropout_seed);
    auto logits = linear(h, p[10], p[11]);
    auto loss = cross_entropy(logits, std::span<const int>(labels), std::span<const double>(sample_weights));
    e.loss = loss.value()[0];
    if (grad_enabled()) backward(loss);
    return e;
  }
};

struct GradCheck {
  double max_rel_error = 0;
  std::size_t checked = 0;
  /// True when some perturbation crossed a relu or pool kink, where the
  /// central difference does not estimate the derivative.
  bool straddles_kink = false;
};

/// Relative error |a - f| / max(|a|, |f|, floor). The floor keeps gradients
/// that vanish in exact arithmetic from dividing rounding noise by ~0.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheck check_gradients(SmallNet& net, double h = 1e-5) {
  for (auto& p : net.params) p.zero_grad();
  const auto base = net.evaluate(net.params);
  GradCheck out;
  NoGradGuard guard;
  for (auto& p : net.params) {
    const Tensor<double> analytic = p.grad();
    auto& value = p.mutable_value();
    for (Index i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + h;
      const auto plus = net.evaluate(net.params);
      value[i] = saved - h;
      const auto minus = net.evaluate(net.params);
      value[i] = saved;
      if (plus.pattern != base.pattern || minus.pattern != base.pattern) out.straddles_kink = true;
      const double numeric = (plus.loss - minus.loss) / (2 * h);
      out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[i], numeric));
      ++out.checked;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Explicit double-sum MMD oracle
// ---------------------------------------------------------------------------

inline double sqdist_loop(const Eigen::MatrixXd& a, Index i, const Eigen::MatrixXd& b, Index j) {
  double s = 0;
  for (Index d = 0; d < a.cols(); ++d) {
    const double diff = a(i, d) - b(j, d);
    s += diff * diff;
  }
  return s;
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Median heuristic over distinct pooled pairs, then the V-statistic written as
/// three explicit double sums.
inline double mmd2_oracle(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const KernelSpec& spec) {
  Eigen::MatrixXd pooled(x.rows() + y.rows(), x.cols());
  pooled << x, y;
  std::vector<double> pairs;
  for (Index i = 0; i < pooled.rows(); ++i) {
    for (Index j = i + 1; j < pooled.rows(); ++j) pairs.push_back(sqdist_loop(pooled, i, pooled, j));
  }
  const double med = median_of(pairs);
  std::vector<double> params;
  if (spec.kind == KernelKind::Rbf) {
    for (double m : spec.multipliers) params.push_back(spec.bandwidth_mode == BandwidthMode::MedianHeuristic ? m * med : m);
  } else {
    for (double s : spec.scales) {
      params.push_back(spec.bandwidth_mode == BandwidthMode::MedianHeuristic ? s * std::sqrt(med) : s);
    }
  }
  auto k = [&](double d2) {
    double total = 0;
    for (double p : params) total += spec.kind == KernelKind::Rbf ? std::exp(-d2 / p) : p * p / (p * p + d2);
    return total;
  };
  auto mean_kernel = [&](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    double s = 0;
    for (Index i = 0; i < a.rows(); ++i) {
      for (Index j = 0; j < b.rows(); ++j) s += k(sqdist_loop(a, i, b, j));
    }
    return s / static_cast<double>(a.rows() * b.rows());
  };
  return mean_kernel(x, x) + mean_kernel(y, y) - 2.0 * mean_kernel(x, y);
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Index rows, Index cols, double shift = 0.0) {
  std::normal_distribution<double> normal(shift, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace soz::testkit
