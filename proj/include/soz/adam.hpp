#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "soz/tensor.hpp"

namespace soz {

struct AdamHyper {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers for one parameter list, shape-congruent with it.
template <typename Scalar>
struct AdamState {
  AdamHyper hyper;
  std::vector<VectorX<Scalar>> first_moment;
  std::vector<VectorX<Scalar>> second_moment;
  std::uint64_t step_count = 0;
};

template <typename Scalar>
AdamState<Scalar> make_adam_state(const std::vector<Variable<Scalar>>& params, AdamHyper hyper) {
  AdamState<Scalar> state;
  state.hyper = hyper;
  for (const auto& p : params) {
    state.first_moment.push_back(VectorX<Scalar>::Zero(p.value().size()));
    state.second_moment.push_back(VectorX<Scalar>::Zero(p.value().size()));
  }
  return state;
}

/// One bias-corrected Adam update from the parameters' accumulated gradients.
/// Parameters without a gradient are treated as having a zero gradient.
template <typename Scalar>
void adam_step(std::vector<Variable<Scalar>>& params, AdamState<Scalar>& state) {
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: state tracks " + std::to_string(state.first_moment.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  state.step_count += 1;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step_count);
  const Scalar b1 = Scalar(h.beta1);
  const Scalar b2 = Scalar(h.beta2);
  const Scalar corr1 = Scalar(1.0 - std::pow(h.beta1, t));
  const Scalar corr2 = Scalar(1.0 - std::pow(h.beta2, t));
  const Scalar lr = Scalar(h.learning_rate);
  const Scalar eps = Scalar(h.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].mutable_value().data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != value.size()) throw ShapeError("adam_step: moment buffer does not match parameter " + std::to_string(i));
    if (!params[i].has_grad()) {
      m *= b1;
      v *= b2;
    } else {
      const auto& g = params[i].grad().data();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    }
    value.array() -= lr * (m.array() / corr1) / ((v.array() / corr2).sqrt() + eps);
  }
}

}  // namespace soz
