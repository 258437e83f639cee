#pragma once

#include <cstdint>
#include <string_view>

namespace tagknn {

/// Seed mixed into every feature hash. Changing it changes every hashed embedding.
inline constexpr std::uint64_t kHashSeed = 0x9E3779B97F4A7C15ULL;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

/// 64-bit FNV-1a over the bytes followed by a splitmix64 finalizer keyed by `seed`.
/// Byte-oriented, so the result is identical on every platform.
constexpr std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed = kHashSeed) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return mix64(h ^ seed);
}

}  // namespace tagknn
