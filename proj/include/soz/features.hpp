#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Core>

#include "soz/checkpoint.hpp"
#include "soz/soznet.hpp"

namespace soz {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Last-conv-block activations of one patient's windows, one row per window.
/// No labels: feature sets feed the weight computation, which must not see
/// the test patient's labels.
struct FeatureSet {
  static constexpr std::uint32_t kVersion = 1;

  std::string patient_id;
  FeatureMatrix rows;
  std::string model_fingerprint;

  Index feature_dim() const noexcept { return rows.cols(); }
  Index size() const noexcept { return rows.rows(); }

  /// SHA-256 over id, model fingerprint and row bytes.
  std::string content_fingerprint() const;

  /// "SOZF1" | u32 version | u32 header length | JSON {patient_id, rows, cols,
  /// model_fingerprint} | float64 row-major payload.
  std::string serialize() const;
  static FeatureSet parse(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static FeatureSet load(const std::filesystem::path& path);
};

/// Eval-mode features for model-ready windows [n x input_length] (already
/// normalized), processed in batches.
template <typename Scalar, typename Derived>
FeatureMatrix extract_feature_rows(const SozNet<Scalar>& net, const Eigen::MatrixBase<Derived>& windows,
                                   Index batch_size = 512) {
  const Index n = windows.rows();
  const Index len = windows.cols();
  FeatureMatrix out(n, net.config().flatten_width());
  for (Index first = 0; first < n; first += batch_size) {
    const Index count = std::min(batch_size, n - first);
    Tensor<Scalar> batch({count, 1, len});
    Eigen::Map<RowMatrixX<Scalar>>(batch.data().data(), count, len) =
        windows.middleRows(first, count).template cast<Scalar>();
    out.middleRows(first, count) = net.extract_features(batch).template cast<double>();
  }
  if (!out.allFinite()) throw IntegrityError("features: non-finite activations");
  return out;
}

}  // namespace soz
