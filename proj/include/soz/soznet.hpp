#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soz/ops.hpp"
#include "soz/rng.hpp"
#include "soz/tensor.hpp"

namespace soz {

struct ConvLayerSpec {
  Index in_channels;
  Index out_channels;
  Index kernel;
  Index stride;

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

/// Layer table of the 1-d CNN. Convolutions are grouped into blocks of
/// `convs_per_block`; each block is (conv, relu) x convs_per_block, max-pool,
/// dropout. The FC head is Linear(fc[0], fc[1]) ... Linear(fc[-2], fc[-1]) with
/// relu + dropout between hidden layers.
struct SozNetConfig {
  Index input_length = 3000;
  std::vector<ConvLayerSpec> conv_spec;
  Index convs_per_block = 2;
  Index pool_kernel = 4;
  Index pool_stride = 4;
  double conv_dropout = 0.3;
  std::vector<Index> fc_spec;
  double fc_dropout = 0.5;
  Index padding = 1;

  /// Ten convolutions (1-32-32-64-64-128-128-256-256-256-256, kernel 3, stride 1)
  /// and the 512-256-128-64-2 head, for 3000-sample windows.
  static SozNetConfig standard();

  /// Four-block, narrower variant for 750-sample windows.
  static SozNetConfig desk();

  Index block_count() const { return static_cast<Index>(conv_spec.size()) / convs_per_block; }

  /// Sequence length entering each block followed by the length after the last
  /// block: (3000, 750, 187, 46, 11, 2) for the standard config. Returns a
  /// trailing 0 when the stack collapses the sequence.
  std::vector<Index> block_lengths() const;

  /// channels * final length, or 0 when the sequence collapses.
  Index flatten_width() const;

  /// Throws ConfigError for broken channel chains or a flatten width that does
  /// not match fc_spec.front().
  void validate() const;

  friend bool operator==(const SozNetConfig&, const SozNetConfig&) = default;
};

void to_json(nlohmann::json& j, const SozNetConfig& c);
void from_json(const nlohmann::json& j, SozNetConfig& c);

/// Canonical JSON text of a config (sorted keys, no whitespace).
std::string canonical_json(const SozNetConfig& c);

/// Per-sample keys that drive dropout masks. Sample i of a batch uses
/// keys[i]; each dropout layer mixes in its own index.
using DropoutKeys = std::span<const std::uint64_t>;

template <typename Scalar_>
class SozNet {
 public:
  using Scalar = Scalar_;
  using Var = Variable<Scalar>;

  /// Kaiming-uniform fan-in weights with negative slope sqrt(5), i.e.
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), and zero biases; a pure function of
  /// (config, seed).
  SozNet(SozNetConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    config_.validate();
    std::uint64_t tensor_id = 0;
    auto make_weight = [&](Shape shape, Index fan_in) {
      Tensor<Scalar> w(std::move(shape));
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      const std::uint64_t key = mix64(seed_, tensor_id++);
      for (Index i = 0; i < w.size(); ++i) {
        w[i] = Scalar((2.0 * unit_uniform(mix64(key, static_cast<std::uint64_t>(i))) - 1.0) * bound);
      }
      return Var(std::move(w), true);
    };
    for (const auto& layer : config_.conv_spec) {
      params_.push_back(make_weight({layer.out_channels, layer.in_channels, layer.kernel}, layer.in_channels * layer.kernel));
      params_.push_back(Var(Tensor<Scalar>::zeros({layer.out_channels}), true));
    }
    for (std::size_t i = 0; i + 1 < config_.fc_spec.size(); ++i) {
      params_.push_back(make_weight({config_.fc_spec[i + 1], config_.fc_spec[i]}, config_.fc_spec[i]));
      params_.push_back(Var(Tensor<Scalar>::zeros({config_.fc_spec[i + 1]}), true));
    }
  }

  const SozNetConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// All parameters in declaration order: conv (weight, bias) pairs, then
  /// linear (weight, bias) pairs.
  std::vector<Var>& parameters() noexcept { return params_; }
  const std::vector<Var>& parameters() const noexcept { return params_; }

  std::size_t conv_count() const noexcept { return config_.conv_spec.size(); }
  std::size_t linear_count() const noexcept { return config_.fc_spec.size() - 1; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Flattened output of the last conv block, [N x flatten_width].
  Var features(const Tensor<Scalar>& batch, bool training, DropoutKeys keys) const {
    check_batch(batch);
    Var x(batch);
    std::uint64_t dropout_layer = 0;
    std::vector<std::uint64_t> layer_keys;
    const Index per_block = config_.convs_per_block;
    for (Index blk = 0; blk < config_.block_count(); ++blk) {
      for (Index j = 0; j < per_block; ++j) {
        const std::size_t layer = static_cast<std::size_t>(blk * per_block + j);
        x = relu(conv1d(x, params_[2 * layer], params_[2 * layer + 1], config_.conv_spec[layer].stride, config_.padding));
      }
      x = maxpool1d(x, config_.pool_kernel, config_.pool_stride);
      x = dropout(x, config_.conv_dropout, training, layer_dropout_keys(keys, dropout_layer++, training, layer_keys));
    }
    return flatten(x);
  }

  /// Logits [N x classes].
  Var forward(const Tensor<Scalar>& batch, bool training, DropoutKeys keys) const {
    Var x = features(batch, training, keys);
    std::uint64_t dropout_layer = static_cast<std::uint64_t>(config_.block_count());
    std::vector<std::uint64_t> layer_keys;
    const std::size_t first_fc = 2 * conv_count();
    for (std::size_t i = 0; i < linear_count(); ++i) {
      x = linear(x, params_[first_fc + 2 * i], params_[first_fc + 2 * i + 1]);
      if (i + 1 < linear_count()) {
        x = relu(x);
        x = dropout(x, config_.fc_dropout, training, layer_dropout_keys(keys, dropout_layer++, training, layer_keys));
      }
    }
    return x;
  }

  /// Eval-mode logits without recording a graph.
  Tensor<Scalar> predict(const Tensor<Scalar>& batch) const {
    NoGradGuard guard;
    return forward(batch, false, {}).value();
  }

  /// Eval-mode feature rows [N x flatten_width] without recording a graph.
  RowMatrixX<Scalar> extract_features(const Tensor<Scalar>& batch) const {
    NoGradGuard guard;
    return features(batch, false, {}).value().matrix();
  }

 private:
  void check_batch(const Tensor<Scalar>& batch) const {
    const Shape& s = batch.shape();
    if (s.size() != 3 || s[1] != config_.conv_spec.front().in_channels || s[2] != config_.input_length) {
      throw ShapeError("soznet: expected batch [N x " + std::to_string(config_.conv_spec.front().in_channels) + " x " +
                       std::to_string(config_.input_length) + "], got " + to_string(s));
    }
  }

  static DropoutKeys layer_dropout_keys(DropoutKeys keys, std::uint64_t layer, bool training,
                                        std::vector<std::uint64_t>& scratch) {
    if (!training) return {};
    scratch.resize(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) scratch[i] = mix64(keys[i], layer);
    return scratch;
  }

  SozNetConfig config_;
  std::uint64_t seed_;
  std::vector<Var> params_;
};

}  // namespace soz
