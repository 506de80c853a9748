#include "soz/weights.hpp"

#include <numeric>

#include "soz/hash.hpp"
#include "soz/io_util.hpp"
#include "soz/rng.hpp"

namespace soz {

double WeightTable::weight_for(const std::string& patient_id) const {
  for (const auto& e : entries) {
    if (e.patient_id == patient_id) return e.weight;
  }
  throw ConfigError("weight table has no entry for patient " + patient_id);
}

std::string WeightTable::fingerprint() const { return sha256_hex(to_json().dump()); }

nlohmann::json kernel_to_json(const KernelSpec& k) {
  return {{"kind", to_string(k.kind)},
          {"bandwidth_mode", k.bandwidth_mode == BandwidthMode::MedianHeuristic ? "median_heuristic" : "explicit"},
          {"multipliers", k.multipliers},
          {"scales", k.scales}};
}

KernelSpec kernel_from_json(const nlohmann::json& j) {
  KernelSpec k;
  k.kind = kernel_kind_from_string(j.at("kind").get<std::string>());
  const auto mode = j.at("bandwidth_mode").get<std::string>();
  if (mode == "median_heuristic") {
    k.bandwidth_mode = BandwidthMode::MedianHeuristic;
  } else if (mode == "explicit") {
    k.bandwidth_mode = BandwidthMode::Explicit;
  } else {
    throw ConfigError("kernel: unknown bandwidth mode " + mode);
  }
  k.multipliers = j.at("multipliers").get<std::vector<double>>();
  k.scales = j.at("scales").get<std::vector<double>>();
  k.validate();
  return k;
}

nlohmann::json WeightTable::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : entries) rows.push_back({{"patient_id", e.patient_id}, {"mmd2", e.mmd2}, {"weight", e.weight}});
  return {{"test_patient_id", test_patient_id}, {"kernel", kernel_to_json(kernel)},
          {"subsample", subsample},             {"seed", seed},
          {"feature_fingerprint", feature_fingerprint}, {"patients", rows}};
}

WeightTable WeightTable::from_json(const nlohmann::json& j) {
  WeightTable t;
  try {
    t.test_patient_id = j.at("test_patient_id").get<std::string>();
    t.kernel = kernel_from_json(j.at("kernel"));
    t.subsample = j.at("subsample").get<Index>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.feature_fingerprint = j.at("feature_fingerprint").get<std::string>();
    for (const auto& r : j.at("patients")) {
      t.entries.push_back({r.at("patient_id").get<std::string>(), r.at("mmd2").get<double>(), r.at("weight").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("weight table: malformed JSON: ") + e.what());
  }
  return t;
}

void WeightTable::save(const std::filesystem::path& path) const { write_file(path, to_json().dump(2) + "\n"); }

WeightTable WeightTable::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw IntegrityError(std::string("weight table: ") + e.what());
  }
}

WeightTable patient_weights(const std::vector<std::pair<std::string, double>>& discrepancies) {
  if (discrepancies.empty()) throw ConfigError("patient_weights: no training patients");
  std::vector<double> raw;
  raw.reserve(discrepancies.size());
  for (const auto& [id, mmd2] : discrepancies) {
    if (!(mmd2 >= 0) || !std::isfinite(mmd2)) throw ConfigError("patient_weights: invalid discrepancy for " + id);
    raw.push_back(1.0 / (mmd2 + kWeightEpsilon));
  }
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  const double n = static_cast<double>(raw.size());
  WeightTable t;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    t.entries.push_back({discrepancies[i].first, discrepancies[i].second, n * raw[i] / total});
  }
  return t;
}

FeatureMatrix subsample_rows(const FeatureSet& set, Index subsample, std::uint64_t seed) {
  const Index n = set.size();
  if (subsample >= n) return set.rows;
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  const std::uint64_t key = derive_seed(seed, set.patient_id);
  // Partial Fisher-Yates: the first `subsample` slots become the draw.
  for (Index i = 0; i < subsample; ++i) {
    const double u = unit_uniform(mix64(key, static_cast<std::uint64_t>(i)));
    const Index j = i + std::min<Index>(n - i - 1, static_cast<Index>(u * static_cast<double>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  std::sort(idx.begin(), idx.begin() + subsample);
  FeatureMatrix out(subsample, set.feature_dim());
  for (Index i = 0; i < subsample; ++i) out.row(i) = set.rows.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

WeightTable compute_weight_table(const std::vector<FeatureSet>& train, const FeatureSet& test, const KernelSpec& kernel,
                                 Index subsample, std::uint64_t seed) {
  if (subsample < 2) throw ConfigError("weights: subsample must be at least 2");
  kernel.validate();
  for (const auto& f : train) {
    if (f.feature_dim() != test.feature_dim()) {
      throw ShapeError("weights: patient " + f.patient_id + " has feature dim " + std::to_string(f.feature_dim()) +
                       ", test patient has " + std::to_string(test.feature_dim()));
    }
    if (f.model_fingerprint != test.model_fingerprint) {
      throw IntegrityError("weights: features of " + f.patient_id + " come from a different model than the test features");
    }
  }
  const FeatureMatrix test_rows = subsample_rows(test, subsample, seed);
  std::vector<std::pair<std::string, double>> discrepancies;
  for (const auto& f : train) {
    discrepancies.emplace_back(f.patient_id, mmd2_biased(subsample_rows(f, subsample, seed), test_rows, kernel));
  }
  WeightTable t = patient_weights(discrepancies);
  t.test_patient_id = test.patient_id;
  t.kernel = kernel;
  t.subsample = subsample;
  t.seed = seed;
  t.feature_fingerprint = test.model_fingerprint;
  return t;
}

}  // namespace soz
