#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofakd/layers.hpp"

namespace ofakd {

enum class Family { cnn, vit, mixer };

std::string to_string(Family family);
Family family_from_string(std::string_view name);

inline constexpr std::size_t kStageCount = 4;

struct ModelConfig {
    Family family = Family::cnn;
    std::array<std::size_t, kStageCount> widths{16, 32, 64, 128};  // cnn channels per stage
    std::size_t stage_depth = 1;  // cnn residual blocks after each transition
    std::size_t depth = 8;        // vit/mixer blocks in total
    std::size_t embed_dim = 64;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 2;
    std::size_t token_hidden = 32;  // mixer token-MLP width
    std::size_t patch_size = 4;
    bool class_token = false;  // vit only
    std::size_t class_count = 10;
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::uint64_t seed = 0;

    // Throws ConfigError naming the first offending field.
    void validate() const;
    std::size_t token_count() const;  // patches, excluding any class token
};

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// Blocks per stage for vit/mixer: depth split evenly, remainder to the earliest stages.
std::array<std::size_t, kStageCount> split_depth(std::size_t depth);

namespace detail {
template <typename T>
class Backbone;
template <typename T>
class BranchImpl;
}  // namespace detail

// A four-stage network. Copies share parameter storage.
template <typename T>
class StagedModel {
public:
    explicit StagedModel(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return config_; }

    Tensor<T> forward(const Tensor<T>& images) const;
    // Activation at the end of stage 1..4.
    Tensor<T> stage_features(const Tensor<T>& images, std::size_t stage) const;
    // Runs one stage on the previous stage's output (the images for stage 1).
    Tensor<T> run_stage(std::size_t stage, const Tensor<T>& input) const;
    Tensor<T> head(const Tensor<T>& stage4) const;

    struct Trace {
        std::array<Tensor<T>, kStageCount> stages;
        Tensor<T> logits;
    };
    Trace trace(const Tensor<T>& images) const;

    // Stage output flattened to [B x d]; a class token is dropped.
    Tensor<T> flatten_features(const Tensor<T>& stage_output) const;
    Shape feature_shape(std::size_t stage, std::size_t batch) const;

    ParameterList<T> parameters() const;
    std::size_t parameter_count() const;
    std::array<std::size_t, kStageCount> stage_blocks() const;

private:
    void check_images(const Tensor<T>& images) const;

    ModelConfig config_;
    std::shared_ptr<const detail::Backbone<T>> backbone_;
};

template <typename T>
StagedModel<T> build_model(const ModelConfig& config) {
    return StagedModel<T>(config);
}

// Auxiliary classifier reading one stage boundary. cnn: depthwise 3x3 +
// pointwise conv + norm + relu + pooling + linear. vit/mixer: one
// transformer block + norm + token pooling + linear.
template <typename T>
class ExitBranch {
public:
    ExitBranch(const ModelConfig& config, std::size_t stage);

    std::size_t stage() const noexcept { return stage_; }
    Tensor<T> operator()(const Tensor<T>& stage_output) const;
    void collect(ParameterList<T>& out) const;

private:
    std::size_t stage_;
    std::shared_ptr<const detail::BranchImpl<T>> impl_;
};

template <typename T>
class BranchedModel {
public:
    BranchedModel(StagedModel<T> backbone, std::vector<ExitBranch<T>> branches);

    const StagedModel<T>& backbone() const noexcept { return backbone_; }
    const std::vector<ExitBranch<T>>& branches() const noexcept { return branches_; }
    std::vector<std::size_t> branch_stages() const;

    struct Outputs {
        std::vector<Tensor<T>> branch_logits;  // in branch order
        Tensor<T> logits;
    };
    Outputs forward_exits(const Tensor<T>& images) const;
    Tensor<T> forward(const Tensor<T>& images) const { return backbone_.forward(images); }

    // Backbone parameters first, then branch parameters.
    ParameterList<T> parameters() const;
    std::size_t parameter_count() const;

private:
    StagedModel<T> backbone_;
    std::vector<ExitBranch<T>> branches_;
};

// Branch initialization is seeded from (config.seed, stage), so attaching
// never disturbs the backbone's parameters.
template <typename T>
BranchedModel<T> attach_branches(const StagedModel<T>& model, const std::vector<std::size_t>& stages);
template <typename T>
BranchedModel<T> attach_branches(const BranchedModel<T>& model, const std::vector<std::size_t>& stages);
template <typename T>
StagedModel<T> strip_branches(const BranchedModel<T>& model);

}  // namespace ofakd
