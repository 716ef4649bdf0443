#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace pcmsr {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed of a named substream of `root`, further split by integer indices
/// (seed number, step, variant...). Distinct names give unrelated streams.
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view name,
                                    std::initializer_list<std::uint64_t> indices = {}) noexcept {
    std::uint64_t s = splitmix64(root ^ fnv1a64(name));
    for (std::uint64_t i : indices) s = splitmix64(s ^ splitmix64(i + 0x632be59bd9b4e019ULL));
    return s;
}

inline Rng substream(std::uint64_t root, std::string_view name,
                     std::initializer_list<std::uint64_t> indices = {}) {
    return Rng(substream_seed(root, name, indices));
}

/// One N(0,1) draw. A fresh distribution per call so that the number of engine
/// draws consumed depends only on the call sequence, never on cached state.
template <class Engine>
double standard_normal(Engine& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

template <class Engine>
double uniform01(Engine& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

} // namespace pcmsr
