#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "soz/features.hpp"
#include "soz/mmd.hpp"

namespace soz {

struct PatientWeight {
  std::string patient_id;
  double mmd2 = 0;
  double weight = 1;
};

/// Fine-tuning weights for the training patients of one fold. Weights are
/// normalized inverse discrepancies with mean 1.
struct WeightTable {
  std::string test_patient_id;
  std::vector<PatientWeight> entries;
  KernelSpec kernel;
  Index subsample = 0;
  std::uint64_t seed = 0;
  std::string feature_fingerprint;  // model fingerprint the features came from

  /// Throws ConfigError when the patient is not in the table.
  double weight_for(const std::string& patient_id) const;
  std::string fingerprint() const;

  nlohmann::json to_json() const;
  static WeightTable from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static WeightTable load(const std::filesystem::path& path);
};

inline constexpr double kWeightEpsilon = 1e-8;

/// weight_i = N * r_i / sum_j r_j with r_i = 1 / (mmd2_i + 1e-8).
WeightTable patient_weights(const std::vector<std::pair<std::string, double>>& discrepancies);

/// Up to `subsample` rows per set, drawn without replacement with a stream
/// keyed by (seed, patient id).
FeatureMatrix subsample_rows(const FeatureSet& set, Index subsample, std::uint64_t seed);

/// Discrepancy of every training patient's features against the test
/// patient's features, converted to weights. All sets must come from the same
/// model.
WeightTable compute_weight_table(const std::vector<FeatureSet>& train, const FeatureSet& test, const KernelSpec& kernel,
                                 Index subsample = 1024, std::uint64_t seed = 0);

nlohmann::json kernel_to_json(const KernelSpec& k);
KernelSpec kernel_from_json(const nlohmann::json& j);

}  // namespace soz
