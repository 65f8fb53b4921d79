#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mnat {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

/// Deterministic random stream derived from (root seed, purpose, index, iteration).
///
/// Every stochastic subroutine takes its own stream keyed by what it is doing and for
/// which sample / iteration, so results do not depend on evaluation order or threading.
class RngStream {
public:
    RngStream(std::uint64_t root_seed, std::string_view purpose, std::uint64_t index = 0,
              std::uint64_t iteration = 0)
        : engine_(derive(root_seed, purpose, index, iteration)) {}

    static std::uint64_t derive(std::uint64_t root_seed, std::string_view purpose, std::uint64_t index,
                                std::uint64_t iteration) {
        std::uint64_t h = detail::splitmix64(root_seed);
        h = detail::splitmix64(h ^ detail::fnv1a(purpose));
        h = detail::splitmix64(h ^ index);
        h = detail::splitmix64(h ^ (iteration * 0xd1b54a32d192ed03ULL));
        return h;
    }

    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
    double normal() { return normal_(engine_); }
    std::uint64_t bits() { return engine_(); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace mnat
