#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedexplore {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer (Steele, Lea & Flood). Constants:
///   z += 0x9E3779B97F4A7C15
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   z ^= z >> 31
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derives an independent child seed from a parent seed and a sequence of tags.
/// Each tag is folded in with one splitmix64 step, so derive(s, {a, b}) differs
/// from derive(s, {b, a}).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept {
    std::uint64_t h = splitmix64(seed);
    for (std::uint64_t t : tags) h = splitmix64(h ^ splitmix64(t + 0x632BE59BD9B4E019ULL));
    return h;
}

// Stream tags, kept distinct so that unrelated consumers never share a stream.
namespace stream {
inline constexpr std::uint64_t dataset = 0x10;
inline constexpr std::uint64_t prototypes = 0x11;
inline constexpr std::uint64_t noise = 0x12;
inline constexpr std::uint64_t split = 0x13;
inline constexpr std::uint64_t partition = 0x14;
inline constexpr std::uint64_t poison_select = 0x15;
inline constexpr std::uint64_t reference = 0x16;
inline constexpr std::uint64_t proposed = 0x20;
inline constexpr std::uint64_t baseline = 0x21;
inline constexpr std::uint64_t cluster_assign = 0x22;
inline constexpr std::uint64_t model_sample = 0x23;
inline constexpr std::uint64_t model_init = 0x24;
inline constexpr std::uint64_t local_train = 0x25;
}  // namespace stream

}  // namespace fedexplore
