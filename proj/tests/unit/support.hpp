#pragma once

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "ofakd/rng.hpp"
#include "ofakd/tensor.hpp"

namespace testing {

inline ofakd::Tensor<double> random_tensor(ofakd::Shape shape, ofakd::Rng& rng, double lo = -1.0,
                                           double hi = 1.0) {
    std::vector<double> v(ofakd::numel_of(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return ofakd::Tensor<double>(std::move(shape), std::move(v));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_rel_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]) / std::max({1.0, std::abs(a[i]), std::abs(b[i])}));
    }
    return m;
}

// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("ofakd-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
                 std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
