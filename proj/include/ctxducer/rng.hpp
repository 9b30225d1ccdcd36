#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ctxducer {

// splitmix64 finalizer; used to derive independent streams from a base seed.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based seed derivation: derive_seed(seed, {epoch, session, utt}) gives a
// stream that does not depend on how many numbers other streams consumed.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> ids) noexcept {
    std::uint64_t s = mix64(base);
    for (auto id : ids) {
        s = mix64(s ^ mix64(id + 0x632be59bd9b4e019ULL));
    }
    return s;
}

using Rng = std::mt19937_64;

} // namespace ctxducer
