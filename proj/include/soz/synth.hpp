#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soz/cohort.hpp"

namespace soz {

/// Generative parameters of one synthetic patient.
///
/// Background: AR(2) noise with a spectral peak at `ar_peak_hz` and pole
/// radius `ar_pole_radius` (unit variance), high-frequency emphasis
/// x + tilt * (x - x[-1]), plus a line-noise sinusoid; the sum is scaled by
/// `gain`. SOZ windows add Poisson-timed spike-and-slow-wave transients whose
/// amplitude is in units of background standard deviation. `benign_rate_hz`
/// adds isolated sharp transients (no slow wave) to both classes.
struct SynthParams {
  std::string patient_id;
  int native_rate_hz = 1000;     // acquisition rate; 2x effective triggers downsampling
  int effective_rate_hz = 1000;  // rate of the stored windows
  double window_seconds = 3.0;
  Index windows_per_class = 100;

  double ar_peak_hz = 10.0;
  double ar_pole_radius = 0.95;
  double gain = 1.0;
  double spectral_tilt = 0.0;
  double line_noise_amplitude = 0.0;
  double line_noise_hz = 50.0;

  double spike_rate_hz = 1.5;
  double spike_width_ms = 20.0;
  double spike_amplitude = 4.0;
  int spike_polarity = -1;
  double slow_wave_mix = 0.5;
  double slow_wave_width_ms = 120.0;
  double benign_rate_hz = 0.0;
  double benign_width_ms = 20.0;
  double benign_amplitude = 0.0;

  nlohmann::json metadata = nlohmann::json::object();

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthParams& p);
void from_json(const nlohmann::json& j, SynthParams& p);

/// Windowed record: windows_per_class non-SOZ windows followed by the same
/// number of SOZ windows. A pure function of (params, seed).
PatientRecord synth_patient(const SynthParams& params, std::uint64_t seed);

/// Continuous background-only signal at the native rate (exposed for tests).
std::vector<double> synth_background(const SynthParams& params, std::size_t samples, std::uint64_t seed);

enum class CohortScale {
  Desk,  // 250 Hz effective, 750-sample windows
  Full,  // 1000 Hz effective, 3000-sample windows
};

/// Per-patient parameters for a heterogeneous cohort. Patient i is "P01"...;
/// the first ~73% of patients are acquired at twice the effective rate and
/// downsampled, mirroring a 2000/1000 Hz split.
std::vector<SynthParams> default_cohort_params(std::size_t n_patients, Index windows_per_class, CohortScale scale,
                                               std::uint64_t master_seed);

/// Generates every patient with seeds derived from the master seed.
Cohort synth_cohort(const std::vector<SynthParams>& params, std::uint64_t master_seed);

}  // namespace soz
