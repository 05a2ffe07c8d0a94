#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ofakd/gradcheck.hpp"

namespace ofakd {

struct GradCheckCaseResult {
    std::string name;
    std::size_t instances = 0;
    std::size_t failures = 0;
    double max_rel_error = 0.0;
    std::string first_failure;

    bool passed() const { return instances > 0 && failures == 0; }
};

struct GradCheckOptions {
    std::uint64_t seed = 0;
    std::size_t instances = 10;
    double step = 1e-5;
    double tolerance = 1e-4;
};

// Names of every case in the standard suite: each tensor op, each loss and
// the end-to-end distillation objective of a two-branch mini-CNN student.
std::vector<std::string> gradcheck_case_names();

// Runs the named cases (all when `names` is empty). Unknown names throw ConfigError.
std::vector<GradCheckCaseResult> run_gradcheck_suite(const GradCheckOptions& options,
                                                     const std::vector<std::string>& names = {});

}  // namespace ofakd
