#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soz/checkpoint.hpp"
#include "soz/cohort.hpp"
#include "soz/features.hpp"
#include "soz/train.hpp"
#include "soz/weights.hpp"

namespace soz {

enum class Method { Standard, Multiscale, Rbf };

std::string to_string(Method m);
Method method_from_string(const std::string& name);
inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> m{Method::Standard, Method::Multiscale, Method::Rbf};
  return m;
}

struct FoldResult {
  std::string test_patient_id;
  Method method = Method::Standard;
  double accuracy = 0;  // percent
  Index n_test = 0;
  Confusion confusion;
  std::optional<WeightTable> weights;  // absent for Standard
};

/// Experiment-level settings shared by every fold.
struct ExperimentConfig {
  SozNetConfig net = SozNetConfig::standard();
  TrainConfig train;
  KernelSpec rbf = KernelSpec::rbf();
  KernelSpec multiscale = KernelSpec::multiscale();
  std::uint64_t master_seed = 0;

  const KernelSpec& kernel_for(Method m) const { return m == Method::Rbf ? rbf : multiscale; }
  /// The same experiment at desk scale (750-sample windows, four blocks,
  /// 30 pretraining epochs).
  static ExperimentConfig desk();
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Seeds of one fold, all derived from (master seed, test patient id).
struct FoldSeeds {
  std::uint64_t fold, init, pretrain, finetune, weights;
  static FoldSeeds derive(std::uint64_t master_seed, const std::string& test_patient_id);
};

struct PretrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

/// Supervised training on every patient except `test_patient_id`, unweighted.
PretrainResult pretrain(const Cohort& cohort, const std::string& test_patient_id, const ExperimentConfig& config,
                        const FoldSeeds& seeds, PipelineObserver* observer = nullptr);

/// Eval-mode features for every patient in the cohort (no labels read).
std::vector<FeatureSet> featurize_cohort(const Checkpoint& checkpoint, const Cohort& cohort);
FeatureSet featurize_patient(const Checkpoint& checkpoint, const PatientRecord& record);

struct FinetuneResult {
  Checkpoint checkpoint;
  TrainLog log;
};

/// Continues training every parameter of `pretrained` on the training patients,
/// with per-patient loss weights when `weights` is given. The table must cover
/// exactly the training patients and come from features of this checkpoint.
FinetuneResult finetune(const Checkpoint& pretrained, const Cohort& cohort, const std::string& test_patient_id,
                        const WeightTable* weights, const ExperimentConfig& config, const FoldSeeds& seeds,
                        PipelineObserver* observer = nullptr);

/// The only stage that reads the test patient's labels.
FoldResult evaluate(const Checkpoint& checkpoint, const PatientRecord& test_patient, Method method);

struct ExperimentReport {
  std::vector<std::string> patient_ids;
  std::vector<Method> methods;
  std::vector<FoldResult> folds;
  nlohmann::json config_snapshot;
  std::string cohort_fingerprint;
  nlohmann::json fold_logs = nlohmann::json::object();  // per fold: loss curves, weight tables

  const FoldResult& result(const std::string& patient_id, Method m) const;
  double mean_accuracy(Method m) const;

  /// Table with one row per patient plus "Mean", one column per method, two
  /// decimals, LF line endings.
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Artifacts of one finished fold, handed to LopoOptions::on_fold.
struct FoldArtifacts {
  std::string test_patient_id;
  const PretrainResult* pretrained;
  std::vector<std::pair<Method, const FinetuneResult*>> finetuned;
  std::vector<FoldResult> results;
};

struct LopoOptions {
  std::vector<Method> methods = all_methods();
  PipelineObserver* observer = nullptr;
  std::function<void(const FoldArtifacts&)> on_fold;
  /// Restrict to these test patients (all when empty).
  std::vector<std::string> only_patients;
};

/// Leave-one-patient-out: per held-out patient, pretrain on the rest, evaluate
/// (Standard), then per kernel method compute weights from unlabeled test
/// features, fine-tune from the pretrained checkpoint, and evaluate.
/// Failures are rethrown as FoldError naming the fold.
ExperimentReport run_lopo(const Cohort& cohort, const ExperimentConfig& config, const LopoOptions& options = {});

/// Parses a report CSV back into rows of cells.
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

/// Renders a report CSV as an aligned text table.
std::string render_table(const std::string& csv_text);

}  // namespace soz
