#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace icalign {

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x00000100000001b3ULL;

// FNV-1a over bytes; `seed` is xor-folded into the offset basis so the same
// bytes hash differently under different seeds.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0) {
  std::uint64_t h = kFnvOffsetBasis ^ seed;
  for (unsigned char c : bytes) {
    h ^= static_cast<std::uint64_t>(c);
    h *= kFnvPrime;
  }
  return h;
}

// FNV-1a over a whole file. Throws InputError if the file cannot be read.
std::uint64_t hash_file(const std::string& path);

// 16-digit lowercase hex; manifests store 64-bit hashes this way because
// JSON numbers lose precision past 2^53.
std::string to_hex(std::uint64_t value);
std::uint64_t from_hex(std::string_view hex);

}  // namespace icalign
