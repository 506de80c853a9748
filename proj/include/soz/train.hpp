#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soz/adam.hpp"
#include "soz/checkpoint.hpp"
#include "soz/cohort.hpp"
#include "soz/features.hpp"
#include "soz/ops.hpp"
#include "soz/rng.hpp"
#include "soz/soznet.hpp"
#include "soz/weights.hpp"

namespace soz {

struct TrainConfig {
  int epochs_pretrain = 200;
  int epochs_finetune = 5;
  Index batch_size = 512;
  std::vector<double> lr_grid{5e-3, 1e-3, 5e-4, 1e-4, 5e-5, 1e-5};
  double lr_pretrain = 1e-4;
  double lr_finetune = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;
  Index subsample = 1024;

  void validate() const;
  AdamHyper adam(double lr) const { return {lr, beta1, beta2, epsilon}; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

enum class Stage { Pretrain, Featurize, Weights, Finetune, Evaluate };
std::string to_string(Stage stage);

/// Hooks for auditing a run. Default implementations do nothing.
class PipelineObserver {
 public:
  virtual ~PipelineObserver() = default;
  virtual void on_stage(const std::string& /*test_patient*/, Stage /*stage*/) {}
  /// Patients whose windows entered the loss of one optimizer step.
  virtual void on_gradient_batch(Stage /*stage*/, const std::vector<std::string>& /*patients*/) {}
};

/// Per-window z-scored copy of a record's windows, ready for the model.
RowMatrixX<float> model_input(const PatientRecord& record);

/// Pooled training windows of every patient except the held-out one. Reads
/// labels of the included patients only.
struct TrainingSet {
  RowMatrixX<float> windows;
  std::vector<int> labels;
  std::vector<int> patient_index;  // into patient_ids
  std::vector<std::string> patient_ids;
  std::vector<std::uint64_t> sample_keys;  // stable per (patient id, window)

  Index size() const noexcept { return windows.rows(); }

  static TrainingSet from_cohort(const Cohort& cohort, const std::string& exclude_patient = {});
};

/// Fisher-Yates permutation of [0, n) keyed by (seed, epoch).
std::vector<Index> epoch_order(Index n, std::uint64_t seed, int epoch, bool shuffle);

struct TrainLog {
  std::vector<double> epoch_loss;
  std::uint64_t optimizer_steps = 0;
};

/// Adam on (optionally patient-weighted) cross-entropy. Each sample carries
/// its patient's weight; a batch whose weights sum to zero is skipped.
template <typename Scalar>
TrainLog train_epochs(SozNet<Scalar>& net, const TrainingSet& data, int epochs, double learning_rate,
                      const TrainConfig& config, std::uint64_t seed, const WeightTable* weights, Stage stage,
                      PipelineObserver* observer = nullptr) {
  if (data.size() == 0) throw ConfigError("train: empty training set");
  if (data.windows.cols() != net.config().input_length) {
    throw ShapeError("train: windows have " + std::to_string(data.windows.cols()) + " samples, model expects " +
                     std::to_string(net.config().input_length));
  }
  std::vector<Scalar> patient_weight(data.patient_ids.size(), Scalar(1));
  if (weights != nullptr) {
    if (weights->entries.size() != data.patient_ids.size()) {
      throw ConfigError("train: weight table covers " + std::to_string(weights->entries.size()) +
                        " patients, training set has " + std::to_string(data.patient_ids.size()));
    }
    for (std::size_t p = 0; p < data.patient_ids.size(); ++p) {
      patient_weight[p] = Scalar(weights->weight_for(data.patient_ids[p]));
    }
  }

  auto state = make_adam_state(net.parameters(), config.adam(learning_rate));
  TrainLog log;
  const Index n = data.size();
  const Index len = data.windows.cols();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto order = epoch_order(n, seed, epoch, config.shuffle);
    const std::uint64_t dropout_seed = mix64(mix64(seed, 0x64726f70ULL), static_cast<std::uint64_t>(epoch));
    double loss_sum = 0;
    Index loss_count = 0;
    for (Index first = 0; first < n; first += config.batch_size) {
      const Index count = std::min(config.batch_size, n - first);
      Tensor<Scalar> batch({count, 1, len});
      Eigen::Map<RowMatrixX<Scalar>> rows(batch.data().data(), count, len);
      std::vector<int> labels(static_cast<std::size_t>(count));
      std::vector<Scalar> w(static_cast<std::size_t>(count));
      std::vector<std::uint64_t> keys(static_cast<std::size_t>(count));
      std::vector<bool> present(data.patient_ids.size(), false);
      Scalar total = 0;
      for (Index i = 0; i < count; ++i) {
        const Index s = order[static_cast<std::size_t>(first + i)];
        const auto u = static_cast<std::size_t>(i);
        rows.row(i) = data.windows.row(s).template cast<Scalar>();
        labels[u] = data.labels[static_cast<std::size_t>(s)];
        const auto p = static_cast<std::size_t>(data.patient_index[static_cast<std::size_t>(s)]);
        w[u] = patient_weight[p];
        total += w[u];
        keys[u] = mix64(dropout_seed, data.sample_keys[static_cast<std::size_t>(s)]);
        if (w[u] > Scalar(0)) present[p] = true;
      }
      if (!(total > Scalar(0))) continue;
      if (observer != nullptr) {
        std::vector<std::string> ids;
        for (std::size_t p = 0; p < present.size(); ++p) {
          if (present[p]) ids.push_back(data.patient_ids[p]);
        }
        observer->on_gradient_batch(stage, ids);
      }
      net.zero_grad();
      auto logits = net.forward(batch, true, keys);
      auto loss = cross_entropy(logits, std::span<const int>(labels), std::span<const Scalar>(w));
      backward(loss);
      adam_step(net.parameters(), state);
      ++log.optimizer_steps;
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(count);
      loss_count += count;
    }
    log.epoch_loss.push_back(loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0);
  }
  return log;
}

struct Confusion {
  Index tp = 0, tn = 0, fp = 0, fn = 0;
  Index total() const noexcept { return tp + tn + fp + fn; }
};

/// Eval-mode argmax predictions for model-ready windows.
template <typename Scalar, typename Derived>
std::vector<int> predict_labels(const SozNet<Scalar>& net, const Eigen::MatrixBase<Derived>& windows,
                                Index batch_size = 512) {
  const Index n = windows.rows();
  const Index len = windows.cols();
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index first = 0; first < n; first += batch_size) {
    const Index count = std::min(batch_size, n - first);
    Tensor<Scalar> batch({count, 1, len});
    Eigen::Map<RowMatrixX<Scalar>>(batch.data().data(), count, len) =
        windows.middleRows(first, count).template cast<Scalar>();
    const Tensor<Scalar> scores = net.predict(batch);
    const auto logits = scores.matrix();
    for (Index i = 0; i < count; ++i) {
      Index arg = 0;
      logits.row(i).maxCoeff(&arg);
      out[static_cast<std::size_t>(first + i)] = static_cast<int>(arg);
    }
  }
  return out;
}

Confusion confusion_counts(std::span<const int> predicted, std::span<const int> truth);

/// Percent correct, 100 * (tp + tn) / n.
inline double accuracy_percent(const Confusion& c) {
  return c.total() == 0 ? 0.0 : 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

}  // namespace soz
