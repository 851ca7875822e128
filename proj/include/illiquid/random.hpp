#pragma once

#include <cstdint>
#include <random>

namespace illiquid {

/// One step of the SplitMix64 output function.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of child stream `index` under `master`. Pure function of its arguments,
/// so path p always sees the same draws regardless of evaluation order.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// A seeded random stream. Copyable; copies continue independently from the same state.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    static RandomStream child(std::uint64_t master, std::uint64_t index) {
        return RandomStream(derive_seed(master, index));
    }

    double standard_normal() { return normal_(engine_); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace illiquid
