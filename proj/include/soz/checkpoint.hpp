#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soz/soznet.hpp"

namespace soz {

/// Serialized model: config, flat float32 parameter arrays in declaration order,
/// and a fingerprint over (canonical config JSON, parameter bytes).
///
/// File layout (little-endian):
///   "SOZN1" | u32 version | u32 header length | header JSON
///   | 64-byte hex SHA-256 fingerprint | u64 float count | float32 payload
/// The header JSON holds {"config": ..., "provenance": ...}. Provenance
/// (optimizer settings, parent fingerprints, loss curve) is descriptive and is
/// not covered by the fingerprint.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  SozNetConfig config;
  nlohmann::json provenance = nlohmann::json::object();
  std::vector<std::vector<float>> arrays;
  std::string fingerprint;

  /// Recomputes the fingerprint from config and arrays.
  std::string compute_fingerprint() const;

  std::string serialize() const;

  /// Throws TruncatedError for short input, VersionError for unknown versions,
  /// IntegrityError for bad magic, array sizes, or fingerprint mismatch.
  static Checkpoint parse(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

template <typename Scalar>
Checkpoint make_checkpoint(const SozNet<Scalar>& net, nlohmann::json provenance = nlohmann::json::object()) {
  Checkpoint c;
  c.config = net.config();
  c.provenance = std::move(provenance);
  c.provenance["init_seed"] = net.seed();
  for (const auto& p : net.parameters()) {
    const auto& d = p.value().data();
    std::vector<float> a(static_cast<std::size_t>(d.size()));
    for (Index i = 0; i < d.size(); ++i) a[static_cast<std::size_t>(i)] = static_cast<float>(d[i]);
    c.arrays.push_back(std::move(a));
  }
  c.fingerprint = c.compute_fingerprint();
  return c;
}

template <typename Scalar>
SozNet<Scalar> load_net(const Checkpoint& c) {
  const std::uint64_t seed = c.provenance.value("init_seed", std::uint64_t{0});
  SozNet<Scalar> net(c.config, seed);
  auto& params = net.parameters();
  if (params.size() != c.arrays.size()) {
    throw IntegrityError("checkpoint: " + std::to_string(c.arrays.size()) + " arrays for a net with " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& d = params[i].mutable_value().data();
    if (static_cast<std::size_t>(d.size()) != c.arrays[i].size()) {
      throw IntegrityError("checkpoint: array " + std::to_string(i) + " has the wrong size");
    }
    for (Index j = 0; j < d.size(); ++j) d[j] = static_cast<Scalar>(c.arrays[i][static_cast<std::size_t>(j)]);
  }
  return net;
}

}  // namespace soz
