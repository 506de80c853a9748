#include "soz/features.hpp"

#include <cstring>

#include "soz/hash.hpp"
#include "soz/io_util.hpp"

namespace soz {

namespace {
constexpr char kMagic[5] = {'S', 'O', 'Z', 'F', '1'};
}

std::string FeatureSet::content_fingerprint() const {
  Sha256 h;
  h.update(patient_id);
  h.update(model_fingerprint);
  h.update(std::as_bytes(std::span(rows.data(), static_cast<std::size_t>(rows.size()))));
  return h.hex_digest();
}

std::string FeatureSet::serialize() const {
  ByteWriter w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kVersion);
  const std::string header = nlohmann::json{{"patient_id", patient_id},
                                            {"rows", rows.rows()},
                                            {"cols", rows.cols()},
                                            {"model_fingerprint", model_fingerprint}}
                                 .dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.raw(header.data(), header.size());
  w.raw(rows.data(), static_cast<std::size_t>(rows.size()) * sizeof(double));
  return std::move(w).str();
}

FeatureSet FeatureSet::parse(const std::string& bytes) {
  ByteReader r(bytes, "features");
  char magic[5];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw IntegrityError("features: bad magic");
  const auto version = r.u32();
  if (version != kVersion) throw VersionError("features: unsupported version " + std::to_string(version));
  std::string header(r.u32(), '\0');
  r.raw(header.data(), header.size());
  FeatureSet f;
  Index n = 0, d = 0;
  try {
    const auto j = nlohmann::json::parse(header);
    f.patient_id = j.at("patient_id").get<std::string>();
    f.model_fingerprint = j.at("model_fingerprint").get<std::string>();
    n = j.at("rows").get<Index>();
    d = j.at("cols").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("features: malformed header: ") + e.what());
  }
  f.rows.resize(n, d);
  r.raw(f.rows.data(), static_cast<std::size_t>(n * d) * sizeof(double));
  if (!r.at_end()) throw IntegrityError("features: trailing bytes after payload");
  return f;
}

void FeatureSet::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

FeatureSet FeatureSet::load(const std::filesystem::path& path) { return parse(read_file(path)); }

}  // namespace soz
