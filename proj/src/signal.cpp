#include "soz/signal.hpp"

#include <cmath>
#include <numbers>

#include "soz/errors.hpp"

namespace soz {

std::vector<double> halfband_lowpass_taps(int taps, double cutoff_fraction) {
  if (taps < 1 || taps % 2 == 0) throw ConfigError("downsample: tap count must be odd and positive");
  if (!(cutoff_fraction > 0 && cutoff_fraction <= 1)) throw ConfigError("downsample: cutoff fraction must be in (0, 1]");
  // Cutoff in cycles/sample of the input: output Nyquist is 1/4.
  const double fc = 0.25 * cutoff_fraction;
  const int half = taps / 2;
  std::vector<double> h(static_cast<std::size_t>(taps));
  double total = 0;
  // Designed from the centre out and mirrored, so the taps are exactly symmetric.
  for (int m = 0; m <= half; ++m) {
    const double sinc = m == 0 ? 2 * fc : std::sin(2 * std::numbers::pi * fc * m) / (std::numbers::pi * m);
    const double hamming = taps == 1 ? 1.0 : 0.54 + 0.46 * std::cos(2 * std::numbers::pi * m / (taps - 1));
    h[static_cast<std::size_t>(half + m)] = sinc * hamming;
    h[static_cast<std::size_t>(half - m)] = sinc * hamming;
  }
  for (double v : h) total += v;
  for (double& v : h) v /= total;
  return h;
}

std::vector<double> downsample_2to1(std::span<const double> signal, int taps, double cutoff_fraction) {
  const auto n = static_cast<std::ptrdiff_t>(signal.size());
  if (n % 2 != 0) throw ConfigError("downsample: signal length must be even, got " + std::to_string(n));
  if (n < taps) throw ConfigError("downsample: signal of " + std::to_string(n) + " samples is shorter than " +
                                  std::to_string(taps) + " taps");
  const auto h = halfband_lowpass_taps(taps, cutoff_fraction);
  const int half = taps / 2;
  auto at = [&](std::ptrdiff_t i) {
    // Symmetric (mirror) extension without repeating the edge sample.
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
    return signal[static_cast<std::size_t>(i)];
  };
  std::vector<double> out(static_cast<std::size_t>(n / 2));
  for (std::ptrdiff_t j = 0; j < n / 2; ++j) {
    double acc = 0;
    for (int k = 0; k < taps; ++k) acc += h[static_cast<std::size_t>(k)] * at(2 * j + k - half);
    out[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

RowMatrixX<double> window_signal(std::span<const double> signal, int rate_hz, double window_seconds) {
  const auto len = static_cast<Index>(std::llround(window_seconds * rate_hz));
  if (len < 1) throw ConfigError("window: window length must be at least one sample");
  const Index count = static_cast<Index>(signal.size()) / len;
  RowMatrixX<double> out(count, len);
  for (Index i = 0; i < count; ++i) {
    out.row(i) = Eigen::Map<const Eigen::RowVectorXd>(signal.data() + i * len, len);
  }
  return out;
}

std::vector<double> zscore(std::span<const double> window) {
  std::vector<double> out(window.begin(), window.end());
  zscore_inplace(Eigen::Map<Eigen::RowVectorXd>(out.data(), static_cast<Index>(out.size())));
  return out;
}

}  // namespace soz
