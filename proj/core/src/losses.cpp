#include "ofakd/losses.hpp"

#include <cmath>

namespace ofakd {

void LossConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("loss config: lambda " + std::to_string(lambda) + " outside [0, 1]");
    }
    if (!(gamma >= 1.0) || !std::isfinite(gamma)) {
        throw ConfigError("loss config: gamma " + std::to_string(gamma) + " must be >= 1");
    }
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ConfigError("loss config: temperature must be positive");
    }
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw ConfigError("loss config: scale must be positive");
    }
}

nlohmann::json loss_config_to_json(const LossConfig& cfg) {
    return {{"lambda", cfg.lambda}, {"gamma", cfg.gamma}, {"temperature", cfg.temperature}, {"scale", cfg.scale}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
    LossConfig cfg;
    try {
        cfg.lambda = j.value("lambda", cfg.lambda);
        cfg.gamma = j.value("gamma", cfg.gamma);
        cfg.temperature = j.value("temperature", cfg.temperature);
        cfg.scale = j.value("scale", cfg.scale);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("loss config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

namespace {

template <typename T>
void check_logits(const Tensor<T>& logits, Labels labels, const char* what) {
    if (logits.rank() != 2) {
        throw DimensionError(std::string(what) + ": logits must be [batch x C], got " + to_string(logits.shape()));
    }
    if (labels.size() != logits.dim(0)) {
        throw DimensionError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for batch of " +
                             std::to_string(logits.dim(0)));
    }
    for (auto y : labels) {
        if (y >= logits.dim(1)) {
            throw DomainError(std::string(what) + ": label " + std::to_string(y) + " out of range for " +
                              std::to_string(logits.dim(1)) + " classes");
        }
    }
}

template <typename T>
void check_probs(const Tensor<T>& logits, const Tensor<T>& probs, const char* what) {
    if (probs.shape() != logits.shape()) {
        throw DimensionError(std::string(what) + ": teacher probabilities " + to_string(probs.shape()) +
                             " do not match student logits " + to_string(logits.shape()));
    }
}

// -sum(weights * logp) / n over a constant weight matrix.
template <typename T>
Tensor<T> weighted_nll(const Tensor<T>& logp, std::vector<T> weights) {
    Tensor<T> w(logp.shape(), std::move(weights));
    return scale(sum(mul(logp, w)), T(-1) / static_cast<T>(logp.dim(0)));
}

}  // namespace

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, Labels labels, T temperature) {
    check_logits(logits, labels, "cross_entropy");
    return scale(mean(pick(log_softmax(logits, temperature), labels)), T(-1));
}

template <typename T>
Tensor<T> teacher_probabilities(const Tensor<T>& teacher_logits, T temperature) {
    NoGradScope<T> no_grad;
    return softmax(teacher_logits.detach(), temperature).detach();
}

template <typename T>
Tensor<T> kd_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits, Labels labels,
                  const LossConfig& cfg) {
    cfg.validate();
    check_logits(student_logits, labels, "kd_loss");
    if (teacher_logits.shape() != student_logits.shape()) {
        throw DimensionError("kd_loss: teacher logits " + to_string(teacher_logits.shape()) +
                             " do not match student logits " + to_string(student_logits.shape()));
    }
    const T tau = static_cast<T>(cfg.temperature);
    const T lam = static_cast<T>(cfg.lambda);
    const std::size_t n = student_logits.dim(0);
    const std::size_t c = student_logits.dim(1);

    std::vector<T> pt;
    std::vector<T> log_pt;
    {
        NoGradScope<T> no_grad;
        const Tensor<T> t = teacher_logits.detach();
        const Tensor<T> st = softmax(t, tau);
        pt.assign(st.data().begin(), st.data().end());
        const Tensor<T> lt = log_softmax(t, tau);
        log_pt.assign(lt.data().begin(), lt.data().end());
    }
    // lambda*CE + (1-lambda)*KL = -sum_k w_k log p_s[k] + (1-lambda) sum_k p_t log p_t
    std::vector<T> w(n * c);
    T entropy_term = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < c; ++k) {
            const std::size_t idx = i * c + k;
            w[idx] = (T(1) - lam) * pt[idx] + (k == labels[i] ? lam : T(0));
            if (pt[idx] > T(0)) entropy_term += pt[idx] * log_pt[idx];
        }
    }
    entropy_term *= (T(1) - lam) / static_cast<T>(n);
    Tensor<T> base = weighted_nll(log_softmax(student_logits, tau), std::move(w));
    base = add(base, Tensor<T>::scalar(entropy_term));
    return scale(base, static_cast<T>(cfg.scale));
}

template <typename T>
Tensor<T> hint_loss(const std::vector<Tensor<T>>& student_feats, const std::vector<Tensor<T>>& teacher_feats,
                    const std::vector<FeatureTransform<T>>& projectors) {
    if (student_feats.size() != teacher_feats.size() || student_feats.size() != projectors.size()) {
        throw DimensionError("hint_loss: " + std::to_string(student_feats.size()) + " student, " +
                             std::to_string(teacher_feats.size()) + " teacher features and " +
                             std::to_string(projectors.size()) + " projectors");
    }
    if (student_feats.empty()) throw DimensionError("hint_loss: no feature pairs");
    Tensor<T> total;
    for (std::size_t i = 0; i < student_feats.size(); ++i) {
        const Tensor<T> projected = projectors[i](student_feats[i]);
        const Tensor<T> target = teacher_feats[i].detach();
        if (projected.shape() != target.shape()) {
            throw DimensionError("hint_loss: layer " + std::to_string(i) + " projects to " +
                                 to_string(projected.shape()) + " but teacher feature is " +
                                 to_string(target.shape()));
        }
        const std::size_t b = target.dim(0);
        const Tensor<T> diff = reshape(sub(target, projected), {b, target.numel() / b});
        const Tensor<T> term = mean(l2_norm(diff, std::size_t{1}));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

template <typename T>
Tensor<T> ofa_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_probs, Labels labels,
                   const LossConfig& cfg) {
    cfg.validate();
    check_logits(student_logits, labels, "ofa_loss");
    check_probs(student_logits, teacher_probs, "ofa_loss");
    const std::size_t n = student_logits.dim(0);
    const std::size_t c = student_logits.dim(1);
    const auto pt = teacher_probs.data();
    std::vector<T> w(pt.begin(), pt.end());
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = i * c + labels[i];
        w[idx] = static_cast<T>(std::pow(1.0 + static_cast<double>(pt[idx]), cfg.gamma));
    }
    const Tensor<T> base = weighted_nll(log_softmax(student_logits, static_cast<T>(cfg.temperature)), std::move(w));
    return scale(base, static_cast<T>(cfg.scale));
}

template <typename T>
Tensor<T> kd_loss_reformulated(const Tensor<T>& student_logits, const Tensor<T>& teacher_probs, Labels labels) {
    check_logits(student_logits, labels, "kd_loss_reformulated");
    check_probs(student_logits, teacher_probs, "kd_loss_reformulated");
    const std::size_t n = student_logits.dim(0);
    const std::size_t c = student_logits.dim(1);
    const auto pt = teacher_probs.data();
    std::vector<T> w(pt.begin(), pt.end());
    for (std::size_t i = 0; i < n; ++i) w[i * c + labels[i]] += T(1);
    return weighted_nll(log_softmax(student_logits), std::move(w));
}

template <typename T>
Tensor<T> distillation_objective(const std::vector<Tensor<T>>& branch_logits, const Tensor<T>& final_logits,
                                 const Tensor<T>& teacher_logits, Labels labels, const LossConfig& cfg) {
    cfg.validate();
    if (teacher_logits.shape() != final_logits.shape()) {
        throw DimensionError("distillation_objective: teacher logits " + to_string(teacher_logits.shape()) +
                             " do not match final logits " + to_string(final_logits.shape()));
    }
    const Tensor<T> probs = teacher_probabilities(teacher_logits, static_cast<T>(cfg.temperature));
    Tensor<T> total;
    for (const auto& logits : branch_logits) {
        const Tensor<T> term = ofa_loss(logits, probs, labels, cfg);
        total = total.defined() ? add(total, term) : term;
    }
    const Tensor<T> last = ofa_loss(final_logits, probs, labels, cfg);
    if (!total.defined()) return last;
    return scale(add(total, last), T(1) / static_cast<T>(branch_logits.size() + 1));
}

double ofa_extra_coefficient(double p_target, double gamma) {
    return std::pow(1.0 + p_target, gamma) - 1.0 - p_target;
}

double choose_gamma(std::optional<double> teacher_accuracy, std::optional<double> baseline_accuracy,
                    double wide_margin) {
    if (teacher_accuracy && baseline_accuracy && *teacher_accuracy - *baseline_accuracy > wide_margin) {
        return 1.1;
    }
    return 1.4;
}

#define OFAKD_INSTANTIATE(T)                                                                                  \
    template Tensor<T> cross_entropy<T>(const Tensor<T>&, Labels, T);                                         \
    template Tensor<T> teacher_probabilities<T>(const Tensor<T>&, T);                                         \
    template Tensor<T> kd_loss<T>(const Tensor<T>&, const Tensor<T>&, Labels, const LossConfig&);             \
    template Tensor<T> hint_loss<T>(const std::vector<Tensor<T>>&, const std::vector<Tensor<T>>&,             \
                                    const std::vector<FeatureTransform<T>>&);                                 \
    template Tensor<T> ofa_loss<T>(const Tensor<T>&, const Tensor<T>&, Labels, const LossConfig&);            \
    template Tensor<T> kd_loss_reformulated<T>(const Tensor<T>&, const Tensor<T>&, Labels);                   \
    template Tensor<T> distillation_objective<T>(const std::vector<Tensor<T>>&, const Tensor<T>&,             \
                                                 const Tensor<T>&, Labels, const LossConfig&);

OFAKD_INSTANTIATE(float)
OFAKD_INSTANTIATE(double)
#undef OFAKD_INSTANTIATE

}  // namespace ofakd
