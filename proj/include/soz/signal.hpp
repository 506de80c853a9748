#pragma once

#include <span>
#include <vector>

#include "soz/tensor.hpp"

namespace soz {

/// Low-pass FIR (Hamming-windowed sinc, unit DC gain, reflected edges) followed
/// by keeping every second sample. `cutoff_fraction` is relative to the
/// output Nyquist frequency.
std::vector<double> downsample_2to1(std::span<const double> signal, int taps = 31, double cutoff_fraction = 0.7);

/// Filter taps used by downsample_2to1.
std::vector<double> halfband_lowpass_taps(int taps, double cutoff_fraction);

/// Non-overlapping windows of window_seconds * rate_hz samples, one per row;
/// the tail that does not fill a window is dropped.
RowMatrixX<double> window_signal(std::span<const double> signal, int rate_hz, double window_seconds = 3.0);

/// Zero mean, unit (population) standard deviation. Windows with sd below
/// 1e-8 map to zeros.
template <typename Derived>
void zscore_inplace(Eigen::MatrixBase<Derived>&& row) {
  using Scalar = typename Derived::Scalar;
  const double n = static_cast<double>(row.size());
  const double mean = row.template cast<double>().sum() / n;
  const double var = (row.template cast<double>().array() - mean).square().sum() / n;
  const double sd = std::sqrt(var);
  if (sd < 1e-8) {
    row.setZero();
  } else {
    row = ((row.template cast<double>().array() - mean) / sd).matrix().template cast<Scalar>();
  }
}

std::vector<double> zscore(std::span<const double> window);

}  // namespace soz
