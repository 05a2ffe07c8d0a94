#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ofakd {

// Mixes a 64-bit value (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x) noexcept;

// Derives an independent seed for the named sub-stream of `seed`.
// Sub-stream names in use: "data", "init", "branch", "shuffle", "subset".
std::uint64_t substream_seed(std::uint64_t seed, std::string_view name,
                             std::uint64_t index = 0) noexcept;

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
        return Rng(substream_seed(seed, name, index));
    }

    double uniform(double lo = 0.0, double hi = 1.0);
    double normal(double mean = 0.0, double stddev = 1.0);
    // Normal(0, stddev) resampled until it lands inside +-2 stddev.
    double truncated_normal(double stddev);
    std::size_t index(std::size_t n);

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace ofakd
