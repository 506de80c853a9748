#include "soz/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>
#include <random>

#include "soz/errors.hpp"
#include "soz/hash.hpp"
#include "soz/rng.hpp"
#include "soz/signal.hpp"

namespace soz {

void SynthParams::validate() const {
  auto fail = [this](const std::string& what) { throw ConfigError("synth " + patient_id + ": " + what); };
  if (effective_rate_hz <= 0) fail("effective rate must be positive");
  if (native_rate_hz != effective_rate_hz && native_rate_hz != 2 * effective_rate_hz) {
    fail("native rate must equal the effective rate or twice it");
  }
  if (windows_per_class < 0) fail("window count must be non-negative");
  if (!(window_seconds > 0)) fail("window length must be positive");
  if (!(gain > 0)) fail("gain must be positive");
  if (!(spike_rate_hz > 0)) fail("SOZ spike rate must be positive");
  if (!(spike_width_ms > 0) || !(slow_wave_width_ms > 0) || !(benign_width_ms > 0)) fail("widths must be positive");
  if (!(ar_pole_radius >= 0 && ar_pole_radius < 1)) fail("AR pole radius must lie in [0, 1)");
  if (!(ar_peak_hz >= 0 && ar_peak_hz < 0.5 * native_rate_hz)) fail("AR peak must be below Nyquist");
  if (spike_polarity != 1 && spike_polarity != -1) fail("spike polarity must be +1 or -1");
  if (benign_rate_hz < 0 || line_noise_amplitude < 0 || spike_amplitude < 0 || benign_amplitude < 0) {
    fail("rates and amplitudes must be non-negative");
  }
}

void to_json(nlohmann::json& j, const SynthParams& p) {
  j = nlohmann::json{{"patient_id", p.patient_id},
                     {"native_rate_hz", p.native_rate_hz},
                     {"effective_rate_hz", p.effective_rate_hz},
                     {"window_seconds", p.window_seconds},
                     {"windows_per_class", p.windows_per_class},
                     {"ar_peak_hz", p.ar_peak_hz},
                     {"ar_pole_radius", p.ar_pole_radius},
                     {"gain", p.gain},
                     {"spectral_tilt", p.spectral_tilt},
                     {"line_noise_amplitude", p.line_noise_amplitude},
                     {"line_noise_hz", p.line_noise_hz},
                     {"spike_rate_hz", p.spike_rate_hz},
                     {"spike_width_ms", p.spike_width_ms},
                     {"spike_amplitude", p.spike_amplitude},
                     {"spike_polarity", p.spike_polarity},
                     {"slow_wave_mix", p.slow_wave_mix},
                     {"slow_wave_width_ms", p.slow_wave_width_ms},
                     {"benign_rate_hz", p.benign_rate_hz},
                     {"benign_width_ms", p.benign_width_ms},
                     {"benign_amplitude", p.benign_amplitude},
                     {"metadata", p.metadata}};
}

void from_json(const nlohmann::json& j, SynthParams& p) {
  const SynthParams d;
  p.patient_id = j.at("patient_id").get<std::string>();
  p.native_rate_hz = j.value("native_rate_hz", d.native_rate_hz);
  p.effective_rate_hz = j.value("effective_rate_hz", d.effective_rate_hz);
  p.window_seconds = j.value("window_seconds", d.window_seconds);
  p.windows_per_class = j.value("windows_per_class", d.windows_per_class);
  p.ar_peak_hz = j.value("ar_peak_hz", d.ar_peak_hz);
  p.ar_pole_radius = j.value("ar_pole_radius", d.ar_pole_radius);
  p.gain = j.value("gain", d.gain);
  p.spectral_tilt = j.value("spectral_tilt", d.spectral_tilt);
  p.line_noise_amplitude = j.value("line_noise_amplitude", d.line_noise_amplitude);
  p.line_noise_hz = j.value("line_noise_hz", d.line_noise_hz);
  p.spike_rate_hz = j.value("spike_rate_hz", d.spike_rate_hz);
  p.spike_width_ms = j.value("spike_width_ms", d.spike_width_ms);
  p.spike_amplitude = j.value("spike_amplitude", d.spike_amplitude);
  p.spike_polarity = j.value("spike_polarity", d.spike_polarity);
  p.slow_wave_mix = j.value("slow_wave_mix", d.slow_wave_mix);
  p.slow_wave_width_ms = j.value("slow_wave_width_ms", d.slow_wave_width_ms);
  p.benign_rate_hz = j.value("benign_rate_hz", d.benign_rate_hz);
  p.benign_width_ms = j.value("benign_width_ms", d.benign_width_ms);
  p.benign_amplitude = j.value("benign_amplitude", d.benign_amplitude);
  p.metadata = j.value("metadata", nlohmann::json::object());
}

namespace {

// Adds a Gaussian bump of the given amplitude and width (full width at half
// maximum, seconds) centred at t0.
void add_bump(std::vector<double>& x, double rate, double t0, double fwhm, double amplitude) {
  const double sigma = fwhm / 2.3548;
  const auto lo = static_cast<std::ptrdiff_t>(std::floor((t0 - 4 * sigma) * rate));
  const auto hi = static_cast<std::ptrdiff_t>(std::ceil((t0 + 4 * sigma) * rate));
  for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(lo, 0); i <= hi && i < static_cast<std::ptrdiff_t>(x.size()); ++i) {
    const double z = (static_cast<double>(i) / rate - t0) / sigma;
    x[static_cast<std::size_t>(i)] += amplitude * std::exp(-0.5 * z * z);
  }
}

// Poisson event times on [0, duration).
std::vector<double> poisson_times(std::mt19937_64& rng, double rate_hz, double duration) {
  std::vector<double> t;
  if (rate_hz <= 0) return t;
  std::exponential_distribution<double> gap(rate_hz);
  for (double now = gap(rng); now < duration; now += gap(rng)) t.push_back(now);
  return t;
}

std::vector<double> class_signal(const SynthParams& p, std::size_t samples, std::uint64_t seed, bool soz) {
  const double rate = p.native_rate_hz;
  std::vector<double> x = synth_background(p, samples, seed);
  std::mt19937_64 rng(mix64(seed, 0x6576656e7473ULL));
  const double duration = static_cast<double>(samples) / rate;
  // Background sd is 1 before gain; transient amplitudes are in those units.
  for (double t : poisson_times(rng, p.benign_rate_hz, duration)) {
    add_bump(x, rate, t, p.benign_width_ms * 1e-3, p.gain * p.benign_amplitude * p.spike_polarity);
  }
  if (soz) {
    for (double t : poisson_times(rng, p.spike_rate_hz, duration)) {
      const double spike = p.spike_width_ms * 1e-3;
      const double slow = p.slow_wave_width_ms * 1e-3;
      add_bump(x, rate, t, spike, p.gain * p.spike_amplitude * p.spike_polarity);
      if (p.slow_wave_mix > 0) {
        add_bump(x, rate, t + 0.5 * spike + 0.6 * slow, slow,
                 -p.gain * p.spike_amplitude * p.slow_wave_mix * p.spike_polarity);
      }
    }
  }
  return x;
}

}  // namespace

std::vector<double> synth_background(const SynthParams& p, std::size_t samples, std::uint64_t seed) {
  const double rate = p.native_rate_hz;
  const double omega = 2 * std::numbers::pi * p.ar_peak_hz / rate;
  const double a1 = 2 * p.ar_pole_radius * std::cos(omega);
  const double a2 = -p.ar_pole_radius * p.ar_pole_radius;
  // Stationary AR(2) variance for unit innovations.
  const double var = (1 - a2) / ((1 + a2) * ((1 - a2) * (1 - a2) - a1 * a1));
  const double innovation_sd = 1.0 / std::sqrt(var);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, innovation_sd);
  std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
  const double line_phase = phase(rng);

  constexpr std::size_t burn_in = 1000;
  double x1 = 0, x2 = 0;
  for (std::size_t i = 0; i < burn_in; ++i) {
    const double x0 = a1 * x1 + a2 * x2 + noise(rng);
    x2 = x1;
    x1 = x0;
  }
  std::vector<double> out(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const double x0 = a1 * x1 + a2 * x2 + noise(rng);
    const double tilted = x0 + p.spectral_tilt * (x0 - x1);
    const double line =
        p.line_noise_amplitude * std::sin(2 * std::numbers::pi * p.line_noise_hz * static_cast<double>(i) / rate + line_phase);
    out[i] = p.gain * (tilted + line);
    x2 = x1;
    x1 = x0;
  }
  return out;
}

PatientRecord synth_patient(const SynthParams& params, std::uint64_t seed) {
  params.validate();
  const auto native_window = static_cast<std::size_t>(std::llround(params.window_seconds * params.native_rate_hz));
  const auto samples = native_window * static_cast<std::size_t>(params.windows_per_class);
  const Index window_len = static_cast<Index>(std::llround(params.window_seconds * params.effective_rate_hz));

  PatientRecord r;
  r.patient_id = params.patient_id;
  r.sampling_rate_hz = params.native_rate_hz;
  r.effective_rate_hz = params.effective_rate_hz;
  r.seed = seed;
  r.metadata = params.metadata;
  r.windows.resize(2 * params.windows_per_class, window_len);
  std::vector<int> labels;
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<double> x;
    if (samples > 0) {
      x = class_signal(params, samples, mix64(seed, static_cast<std::uint64_t>(cls)), cls == 1);
      if (params.native_rate_hz == 2 * params.effective_rate_hz) x = downsample_2to1(x);
    }
    const auto w = window_signal(x, params.effective_rate_hz, params.window_seconds);
    if (w.rows() != params.windows_per_class) throw IntegrityError("synth: window count mismatch");
    r.windows.middleRows(cls * params.windows_per_class, params.windows_per_class) = w.cast<float>();
    labels.insert(labels.end(), static_cast<std::size_t>(params.windows_per_class), cls);
  }
  r.set_labels(std::move(labels));
  return r;
}

std::vector<SynthParams> default_cohort_params(std::size_t n_patients, Index windows_per_class, CohortScale scale,
                                               std::uint64_t master_seed) {
  const int effective = scale == CohortScale::Desk ? 250 : 1000;
  std::mt19937_64 rng(mix64(master_seed, 0x636f686f7274ULL));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t downsampled = (n_patients * 8 + 10) / 11;
  // About a third of the cohort follows the spike-wave convention.
  std::vector<std::size_t> order(n_patients);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> spike_wave(n_patients, false);
  for (std::size_t k = 0; k < (n_patients + 1) / 3; ++k) spike_wave[order[k]] = true;

  std::vector<SynthParams> out;
  for (std::size_t i = 0; i < n_patients; ++i) {
    SynthParams p;
    char id[32];
    std::snprintf(id, sizeof id, "P%02zu", i + 1);
    p.patient_id = id;
    p.effective_rate_hz = effective;
    p.native_rate_hz = i < downsampled ? 2 * effective : effective;
    p.windows_per_class = windows_per_class;
    // Background shift is drawn from one distribution for every patient, so
    // the rhythm identifies the patient but not the labeling convention.
    p.gain = 20.0 + 60.0 * u(rng);
    p.ar_peak_hz = 8.0 + 10.0 * u(rng);
    p.ar_pole_radius = 0.88 + 0.07 * u(rng);
    p.spectral_tilt = 1.2 * u(rng);
    p.line_noise_hz = u(rng) < 0.5 ? 50.0 : 60.0;
    p.line_noise_amplitude = 0.3 * u(rng);
    p.spike_polarity = -1;
    p.spike_rate_hz = 3.6 + 2.4 * u(rng);
    p.spike_width_ms = 16.0 + 10.0 * u(rng);
    p.spike_amplitude = 5.0 + 2.0 * u(rng);
    // The two conventions conflict on isolated sharp transients. In "sharp"
    // patients any sharp transient marks SOZ. In "spike-wave" patients
    // isolated sharps occur in both classes at the same rate and only
    // spike-and-slow-wave complexes mark SOZ.
    if (!spike_wave[i]) {
      p.slow_wave_mix = 0.0;
      p.metadata["phenotype"] = "sharp";
    } else {
      p.slow_wave_mix = 0.9 + 0.3 * u(rng);
      p.slow_wave_width_ms = 150.0 + 80.0 * u(rng);
      p.benign_rate_hz = p.spike_rate_hz;
      p.benign_width_ms = p.spike_width_ms;
      p.benign_amplitude = p.spike_amplitude;
      p.metadata["phenotype"] = "spike-wave";
    }
    p.metadata["gain"] = p.gain;
    out.push_back(std::move(p));
  }
  return out;
}

Cohort synth_cohort(const std::vector<SynthParams>& params, std::uint64_t master_seed) {
  Cohort c;
  for (const auto& p : params) c.patients.push_back(synth_patient(p, derive_seed(master_seed, p.patient_id)));
  c.validate();
  return c;
}

}  // namespace soz
