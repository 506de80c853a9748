#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soz/tensor.hpp"

namespace soz {

enum class WindowClass : int { NonSoz = 0, Soz = 1 };

/// One patient's labeled windows. Window payloads are stored as float32, one
/// window per row. Label reads go through labels(), which notifies the
/// installed LabelReadObserver so that pipelines can be audited for leakage.
class PatientRecord {
 public:
  std::string patient_id;
  int sampling_rate_hz = 1000;   // native acquisition rate
  int effective_rate_hz = 1000;  // rate after resampling
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();
  RowMatrixX<float> windows;

  Index window_count() const noexcept { return windows.rows(); }
  Index window_length() const noexcept { return windows.cols(); }

  const std::vector<int>& labels() const;
  void set_labels(std::vector<int> labels);

  /// (non-SOZ, SOZ) counts; recorded at set_labels, not a label read.
  std::array<Index, 2> class_counts() const noexcept { return counts_; }

  friend bool operator==(const PatientRecord& a, const PatientRecord& b);

 private:
  friend struct Cohort;
  std::vector<int> labels_;
  std::array<Index, 2> counts_{0, 0};
};

/// Called with the patient id on every PatientRecord::labels() access.
using LabelReadObserver = std::function<void(const std::string& patient_id)>;

/// Installs an observer for the current thread for the guard's lifetime.
class ScopedLabelObserver {
 public:
  explicit ScopedLabelObserver(LabelReadObserver observer);
  ~ScopedLabelObserver();
  ScopedLabelObserver(const ScopedLabelObserver&) = delete;
  ScopedLabelObserver& operator=(const ScopedLabelObserver&) = delete;

 private:
  LabelReadObserver previous_;
};

struct Cohort {
  std::vector<PatientRecord> patients;

  std::size_t size() const noexcept { return patients.size(); }
  Index window_length() const { return patients.empty() ? 0 : patients.front().window_length(); }
  const PatientRecord& at(const std::string& patient_id) const;
  std::ptrdiff_t index_of(const std::string& patient_id) const;

  /// Unique ids and a shared window length; throws IntegrityError otherwise.
  void validate() const;

  /// SHA-256 over ids, labels and window payloads.
  std::string fingerprint() const;

  friend bool operator==(const Cohort&, const Cohort&) = default;
};

/// Cohort directory: manifest.json plus <patient_id>.f32 (little-endian
/// float32, row-major [n x window_len]). Labels live in the manifest as
/// run-length pairs [[label, count], ...].
inline constexpr int kCohortFormatVersion = 1;

void save_cohort(const Cohort& cohort, const std::filesystem::path& dir, const nlohmann::json& extra = {});

/// Throws IoError for a missing manifest, VersionError for an unknown version,
/// IntegrityError when payload sizes or label counts disagree with the manifest.
Cohort load_cohort(const std::filesystem::path& dir);

std::vector<std::array<int, 2>> run_length_encode(const std::vector<int>& labels);
std::vector<int> run_length_decode(const std::vector<std::array<int, 2>>& runs);

}  // namespace soz
