#include "soz/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "soz/errors.hpp"
#include "soz/hash.hpp"
#include "soz/io_util.hpp"

namespace soz {

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'S', 'O', 'Z', 'N', '1'};

std::vector<Index> expected_sizes(const SozNetConfig& c) {
  std::vector<Index> sizes;
  for (const auto& l : c.conv_spec) {
    sizes.push_back(l.out_channels * l.in_channels * l.kernel);
    sizes.push_back(l.out_channels);
  }
  for (std::size_t i = 0; i + 1 < c.fc_spec.size(); ++i) {
    sizes.push_back(c.fc_spec[i + 1] * c.fc_spec[i]);
    sizes.push_back(c.fc_spec[i + 1]);
  }
  return sizes;
}

}  // namespace

std::string Checkpoint::compute_fingerprint() const {
  Sha256 h;
  h.update(canonical_json(config));
  for (const auto& a : arrays) h.update(std::as_bytes(std::span(a)));
  return h.hex_digest();
}

std::string Checkpoint::serialize() const {
  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  const std::string header = nlohmann::json{{"config", config}, {"provenance", provenance}}.dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.raw(header.data(), header.size());
  if (fingerprint.size() != 64) throw IntegrityError("checkpoint: fingerprint must be 64 hex characters");
  w.raw(fingerprint.data(), fingerprint.size());
  std::uint64_t count = 0;
  for (const auto& a : arrays) count += a.size();
  w.u64(count);
  for (const auto& a : arrays) w.raw(a.data(), a.size() * sizeof(float));
  return std::move(w).str();
}

Checkpoint Checkpoint::parse(const std::string& bytes) {
  ByteReader r(bytes, "checkpoint");
  char magic[5];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw IntegrityError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw VersionError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t header_len = r.u32();
  std::string header(header_len, '\0');
  r.raw(header.data(), header_len);
  Checkpoint c;
  try {
    const auto j = nlohmann::json::parse(header);
    c.config = j.at("config").get<SozNetConfig>();
    c.provenance = j.at("provenance");
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint: malformed header: ") + e.what());
  }
  std::string stored(64, '\0');
  r.raw(stored.data(), stored.size());
  const std::uint64_t count = r.u64();
  std::uint64_t expected = 0;
  const auto sizes = expected_sizes(c.config);
  for (Index s : sizes) expected += static_cast<std::uint64_t>(s);
  if (count != expected) {
    throw IntegrityError("checkpoint: payload declares " + std::to_string(count) + " floats, config needs " +
                         std::to_string(expected));
  }
  for (Index s : sizes) {
    std::vector<float> a(static_cast<std::size_t>(s));
    r.raw(a.data(), a.size() * sizeof(float));
    c.arrays.push_back(std::move(a));
  }
  if (!r.at_end()) throw IntegrityError("checkpoint: trailing bytes after payload");
  c.fingerprint = c.compute_fingerprint();
  if (c.fingerprint != stored) throw IntegrityError("checkpoint: fingerprint mismatch (file is corrupt)");
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return parse(read_file(path)); }

}  // namespace soz
