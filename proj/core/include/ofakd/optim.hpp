#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofakd/nn.hpp"

namespace ofakd {

enum class OptimizerKind { momentum_sgd, adamw };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(std::string_view name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::momentum_sgd;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;
    std::size_t epochs = 40;
    bool cosine = true;

    void validate() const;
    // SGD for cnn, AdamW for vit/mixer, with the toy-scale defaults.
    static OptimizerConfig defaults_for(Family family);
};

nlohmann::json optimizer_config_to_json(const OptimizerConfig& cfg);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

// Learning rate at `step` of `total_steps` (cosine decay to zero, or constant).
double scheduled_lr(const OptimizerConfig& cfg, std::size_t step, std::size_t total_steps);

// Global L2 norm over all parameter gradients (missing gradients count as zero).
template <typename T>
double global_grad_norm(const ParameterList<T>& params);

// Rescales every gradient by max_norm / g when the global norm g exceeds
// max_norm. Returns the applied factor (1 when untouched).
template <typename T>
double clip_gradients(const ParameterList<T>& params, double max_norm);

// Momentum SGD or AdamW over a fixed parameter list. Weight decay applies to
// weights of rank >= 2 only; biases and norm parameters are not decayed.
template <typename T>
class Optimizer {
public:
    Optimizer(ParameterList<T> params, OptimizerConfig cfg);

    void step(double learning_rate);
    void zero_grad();
    const ParameterList<T>& parameters() const noexcept { return params_; }
    std::size_t steps_taken() const noexcept { return steps_; }

private:
    ParameterList<T> params_;
    OptimizerConfig cfg_;
    std::vector<std::vector<double>> first_;
    std::vector<std::vector<double>> second_;
    std::size_t steps_ = 0;
};

}  // namespace ofakd
