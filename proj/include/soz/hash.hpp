#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace soz {

/// Incremental SHA-256; digest rendered as lowercase hex.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const std::byte> bytes);
  Sha256& update(std::string_view text);
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view text);

/// 64-bit seed derived from a master seed and a string key (e.g. a patient id).
std::uint64_t derive_seed(std::uint64_t master, std::string_view key);

}  // namespace soz
