#include "soz/train.hpp"

#include <algorithm>
#include <numeric>

#include "soz/hash.hpp"
#include "soz/signal.hpp"

namespace soz {

void TrainConfig::validate() const {
  if (epochs_pretrain < 0 || epochs_finetune < 0) throw ConfigError("train config: epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be positive");
  if (subsample < 2) throw ConfigError("train config: subsample must be at least 2");
  auto in_grid = [this](double lr) { return std::find(lr_grid.begin(), lr_grid.end(), lr) != lr_grid.end(); };
  if (!in_grid(lr_pretrain)) throw ConfigError("train config: lr_pretrain " + std::to_string(lr_pretrain) + " is not in lr_grid");
  if (!in_grid(lr_finetune)) throw ConfigError("train config: lr_finetune " + std::to_string(lr_finetune) + " is not in lr_grid");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0)) throw ConfigError("train config: invalid Adam settings");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs_pretrain", c.epochs_pretrain},
                     {"epochs_finetune", c.epochs_finetune},
                     {"batch_size", c.batch_size},
                     {"lr_grid", c.lr_grid},
                     {"lr_pretrain", c.lr_pretrain},
                     {"lr_finetune", c.lr_finetune},
                     {"adam", {{"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}}},
                     {"seed", c.seed},
                     {"shuffle", c.shuffle},
                     {"subsample", c.subsample}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs_pretrain = j.value("epochs_pretrain", d.epochs_pretrain);
  c.epochs_finetune = j.value("epochs_finetune", d.epochs_finetune);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr_grid = j.value("lr_grid", d.lr_grid);
  c.lr_pretrain = j.value("lr_pretrain", d.lr_pretrain);
  c.lr_finetune = j.value("lr_finetune", d.lr_finetune);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.beta1 = a.value("beta1", d.beta1);
    c.beta2 = a.value("beta2", d.beta2);
    c.epsilon = a.value("epsilon", d.epsilon);
  }
  c.seed = j.value("seed", d.seed);
  c.shuffle = j.value("shuffle", d.shuffle);
  c.subsample = j.value("subsample", d.subsample);
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Featurize: return "featurize";
    case Stage::Weights: return "weights";
    case Stage::Finetune: return "finetune";
    case Stage::Evaluate: return "evaluate";
  }
  return "unknown";
}

RowMatrixX<float> model_input(const PatientRecord& record) {
  RowMatrixX<float> out = record.windows;
  for (Index i = 0; i < out.rows(); ++i) zscore_inplace(out.row(i));
  return out;
}

TrainingSet TrainingSet::from_cohort(const Cohort& cohort, const std::string& exclude_patient) {
  TrainingSet set;
  Index total = 0;
  for (const auto& p : cohort.patients) {
    if (p.patient_id != exclude_patient) total += p.window_count();
  }
  set.windows.resize(total, cohort.window_length());
  Index row = 0;
  for (const auto& p : cohort.patients) {
    if (p.patient_id == exclude_patient) continue;
    const int index = static_cast<int>(set.patient_ids.size());
    set.patient_ids.push_back(p.patient_id);
    set.windows.middleRows(row, p.window_count()) = model_input(p);
    const auto& labels = p.labels();
    set.labels.insert(set.labels.end(), labels.begin(), labels.end());
    const std::uint64_t key = derive_seed(0, p.patient_id);
    for (Index i = 0; i < p.window_count(); ++i) {
      set.patient_index.push_back(index);
      set.sample_keys.push_back(mix64(key, static_cast<std::uint64_t>(i)));
    }
    row += p.window_count();
  }
  return set;
}

std::vector<Index> epoch_order(Index n, std::uint64_t seed, int epoch, bool shuffle) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  if (!shuffle) return order;
  const std::uint64_t key = mix64(seed, static_cast<std::uint64_t>(epoch));
  for (Index i = n - 1; i > 0; --i) {
    const double u = unit_uniform(mix64(key, static_cast<std::uint64_t>(i)));
    const Index j = std::min<Index>(i, static_cast<Index>(u * static_cast<double>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  return order;
}

Confusion confusion_counts(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("confusion: prediction and label counts differ");
  Confusion c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool pos = predicted[i] == 1;
    if (truth[i] == 1) {
      pos ? ++c.tp : ++c.fn;
    } else {
      pos ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

}  // namespace soz
