#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "ofakd/ops.hpp"

namespace ofakd {

struct LossConfig {
    double lambda = 0.5;       // weight of the hard-label term in kd_loss
    double gamma = 1.4;        // OFA modulating exponent, >= 1
    double temperature = 1.0;  // softmax temperature on both sides
    double scale = 1.0;        // multiplied into the final loss

    void validate() const;
};

nlohmann::json loss_config_to_json(const LossConfig& cfg);
LossConfig loss_config_from_json(const nlohmann::json& j);

using Labels = std::span<const std::size_t>;

// Mean cross-entropy of softmax(logits / temperature) against labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, Labels labels, T temperature = T{1});

// scale * mean[lambda * CE(p_s, y) + (1 - lambda) * KL(p_t || p_s)].
// The teacher side is detached.
template <typename T>
Tensor<T> kd_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits, Labels labels,
                  const LossConfig& cfg);

template <typename T>
using FeatureTransform = std::function<Tensor<T>(const Tensor<T>&)>;

// sum_i mean_batch || F_t_i - proj_i(F_s_i) ||_2, teacher features detached.
template <typename T>
Tensor<T> hint_loss(const std::vector<Tensor<T>>& student_feats, const std::vector<Tensor<T>>& teacher_feats,
                    const std::vector<FeatureTransform<T>>& projectors);

// Constant softmax(teacher_logits / temperature); never carries a gradient.
template <typename T>
Tensor<T> teacher_probabilities(const Tensor<T>& teacher_logits, T temperature = T{1});

// Per sample -(1 + p_t[c]) log p_s[c] - sum_{k != c} p_t[k] log p_s[k], batch mean.
template <typename T>
Tensor<T> kd_loss_reformulated(const Tensor<T>& student_logits, const Tensor<T>& teacher_probs, Labels labels);

// Per sample -(1 + p_t[c])^gamma log p_s[c] - sum_{k != c} p_t[k] log p_s[k],
// batch mean, times cfg.scale. The student side uses cfg.temperature.
template <typename T>
Tensor<T> ofa_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_probs, Labels labels,
                   const LossConfig& cfg);

// Mean of ofa_loss over every branch exit plus the final head.
template <typename T>
Tensor<T> distillation_objective(const std::vector<Tensor<T>>& branch_logits, const Tensor<T>& final_logits,
                                 const Tensor<T>& teacher_logits, Labels labels, const LossConfig& cfg);

// Coefficient of the extra -log p_s[c] term that gamma adds over gamma = 1:
// (1 + p)^gamma - 1 - p.
double ofa_extra_coefficient(double p_target, double gamma);

// 1.1 when the teacher beats the student baseline by more than
// `wide_margin` (accuracy fraction), otherwise 1.4.
double choose_gamma(std::optional<double> teacher_accuracy, std::optional<double> baseline_accuracy,
                    double wide_margin = 0.05);

}  // namespace ofakd
