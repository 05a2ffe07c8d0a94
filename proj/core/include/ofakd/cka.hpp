#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofakd/tensor.hpp"

namespace ofakd {

// One layer's features: n samples by d flattened values.
struct FeatureRecord {
    std::string label;
    Tensor<double> matrix;
};

// Self-HSIC below this marks a feature matrix as constant.
inline constexpr double kDegenerateHsic = 1e-12;
inline constexpr std::size_t kMinCkaSamples = 4;

// X X^T for X [n x d].
Tensor<double> gram(const Tensor<double>& x);

// <HKH, HLH>_F / (n-1)^2 with H = I - 11^T/n.
double hsic(const Tensor<double>& k, const Tensor<double>& l);

// Linear CKA. Throws DegenerateFeaturesError when either self-HSIC is
// below kDegenerateHsic.
double cka(const Tensor<double>& x, const Tensor<double>& y);

// Mean of cka over consecutive row blocks of batch_size; a trailing
// partial block is dropped. Throws when fewer than batch_size rows exist.
double batched_cka(const Tensor<double>& x, const Tensor<double>& y, std::size_t batch_size);

struct CkaMatrix {
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::vector<double> values;  // row-major

    std::size_t rows() const { return row_labels.size(); }
    std::size_t cols() const { return col_labels.size(); }
    double at(std::size_t i, std::size_t j) const { return values.at(i * cols() + j); }

    std::string to_csv() const;
    // mean_diagonal, mean_off_diagonal, per-stage matched values.
    nlohmann::json summary() const;
};

// Entry (i, j) = cka(a[i], b[j]), or batched_cka when batch_size > 0.
CkaMatrix heatmap(const std::vector<FeatureRecord>& a, const std::vector<FeatureRecord>& b,
                  std::size_t batch_size = 0);

// Feature directory: manifest.json ({"layers": [...], "sample_indices": [...], ...})
// plus one <label>.oft per layer.
struct FeatureDump {
    std::vector<FeatureRecord> layers;
    std::vector<std::size_t> sample_indices;
    nlohmann::json extra;
};

void save_feature_dir(const std::filesystem::path& dir, const FeatureDump& dump);
FeatureDump load_feature_dir(const std::filesystem::path& dir);

}  // namespace ofakd
