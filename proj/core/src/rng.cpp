#include "ofakd/rng.hpp"

namespace ofakd {

std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t substream_seed(std::uint64_t seed, std::string_view name,
                             std::uint64_t index) noexcept {
    // FNV-1a over the name, then fold in seed and index.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return mix64(mix64(seed ^ h) + index);
}

double Rng::uniform(double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(engine_);
}

double Rng::normal(double mean, double stddev) {
    std::normal_distribution<double> dist(mean, stddev);
    return dist(engine_);
}

double Rng::truncated_normal(double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (;;) {
        double v = dist(engine_);
        if (v >= -2.0 * stddev && v <= 2.0 * stddev) return v;
    }
}

std::size_t Rng::index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
}

}  // namespace ofakd
