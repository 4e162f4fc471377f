#pragma once

#include <cstdint>
#include <random>

namespace levsq {

// SplitMix64 finalizer: a bijective 64-bit mix.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed of stream `index` under `master`. Depends only on (master, index), so any
// trace can be regenerated in isolation. Distinct indices give distinct seeds
// because splitmix64 is a bijection.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(splitmix64(master) + index);
}

// Sub-stream of an already derived seed (e.g. measurement noise of one trace).
constexpr std::uint64_t substream(std::uint64_t seed, std::uint64_t tag) {
    return splitmix64(seed ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
}

using Engine = std::mt19937_64;

} // namespace levsq
