#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofakd/trainer.hpp"

namespace ofakd {

enum class AblationAxis { branches, gamma, scale, clip };

std::string to_string(AblationAxis axis);
AblationAxis ablation_axis_from_string(std::string_view name);

// Default grids: branch sets {}, {1}, {2}, {3}, {4}, {1,4}, {1,2,4},
// {1,2,3,4}; gamma 1.0..1.5 in steps of 0.1; scale {0.5, 0.8, 1.0, 1.2,
// 1.4, 1.6}; clip {1, 3, 4, 5, 6, 7}.
std::vector<std::string> default_axis_values(AblationAxis axis);

// Applies one axis value ("none" or "1,2,4" for branches, a number otherwise).
RunManifest apply_axis_value(const RunManifest& base, AblationAxis axis, const std::string& value);

struct AblationRow {
    std::string setting;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
};

struct AblationSummary {
    std::string setting;
    std::size_t runs = 0;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation (n - 1); 0 for a single run
};

struct AblationResult {
    AblationAxis axis = AblationAxis::branches;
    std::vector<AblationRow> rows;
    std::vector<AblationSummary> summary;

    std::string rows_csv() const;
    std::string summary_csv() const;
    nlohmann::json to_json() const;
};

// Groups rows by setting (in first-seen order) and computes mean / std.
std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows);

// One distillation per (value, seed); the seed drives student init and
// shuffling. Final-epoch test accuracy is recorded.
template <typename T>
AblationResult ablate(const RunManifest& base, const StagedModel<T>& teacher, const DatasetPair& data,
                      AblationAxis axis, const std::vector<std::string>& values,
                      const std::vector<std::uint64_t>& seeds);

}  // namespace ofakd
