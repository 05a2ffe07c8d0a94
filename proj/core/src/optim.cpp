#include "ofakd/optim.hpp"

#include <cmath>
#include <numbers>

namespace ofakd {

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::momentum_sgd ? "momentum_sgd" : "adamw";
}

OptimizerKind optimizer_kind_from_string(std::string_view name) {
    if (name == "momentum_sgd" || name == "sgd") return OptimizerKind::momentum_sgd;
    if (name == "adamw") return OptimizerKind::adamw;
    throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected momentum_sgd or adamw)");
}

void OptimizerConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("optimizer: learning_rate must be finite and non-negative");
    }
    if (epochs == 0) throw ConfigError("optimizer: epochs must be at least 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer: momentum must be in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("optimizer: betas must be in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight_decay must be non-negative");
}

OptimizerConfig OptimizerConfig::defaults_for(Family family) {
    OptimizerConfig cfg;
    if (family != Family::cnn) {
        cfg.kind = OptimizerKind::adamw;
        cfg.learning_rate = 1e-3;
        cfg.weight_decay = 0.05;
    }
    return cfg;
}

nlohmann::json optimizer_config_to_json(const OptimizerConfig& c) {
    return {{"kind", to_string(c.kind)}, {"learning_rate", c.learning_rate}, {"momentum", c.momentum},
            {"beta1", c.beta1},          {"beta2", c.beta2},                 {"eps", c.eps},
            {"weight_decay", c.weight_decay}, {"epochs", c.epochs},          {"cosine", c.cosine}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
    OptimizerConfig c;
    try {
        if (j.contains("kind")) {
            const auto kind = optimizer_kind_from_string(j["kind"].get<std::string>());
            c = OptimizerConfig::defaults_for(kind == OptimizerKind::adamw ? Family::vit : Family::cnn);
        }
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.momentum = j.value("momentum", c.momentum);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.eps = j.value("eps", c.eps);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.epochs = j.value("epochs", c.epochs);
        c.cosine = j.value("cosine", c.cosine);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("optimizer: ") + e.what());
    }
    c.validate();
    return c;
}

double scheduled_lr(const OptimizerConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (!cfg.cosine || total_steps == 0) return cfg.learning_rate;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
double global_grad_norm(const ParameterList<T>& params) {
    double total = 0.0;
    for (const auto& p : params) {
        if (!p.value.has_grad()) continue;
        for (T g : p.value.grad()) total += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(total);
}

template <typename T>
double clip_gradients(const ParameterList<T>& params, double max_norm) {
    if (!(max_norm > 0.0)) throw ConfigError("clip_gradients: max_norm must be positive");
    const double norm = global_grad_norm(params);
    if (norm <= max_norm) return 1.0;
    const double factor = max_norm / norm;
    for (const auto& p : params) {
        if (!p.value.has_grad()) continue;
        Tensor<T> t = p.value;
        for (auto& g : t.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * factor);
    }
    return factor;
}

template <typename T>
Optimizer<T>::Optimizer(ParameterList<T> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    first_.resize(params_.size());
    second_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        first_[i].assign(params_[i].value.numel(), 0.0);
        if (cfg_.kind == OptimizerKind::adamw) second_[i].assign(params_[i].value.numel(), 0.0);
    }
}

template <typename T>
void Optimizer<T>::step(double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor<T> p = params_[i].value;
        if (!p.has_grad()) continue;
        const double decay = p.rank() >= 2 ? cfg_.weight_decay : 0.0;
        auto w = p.mutable_data();
        const auto g = p.grad();
        auto& m = first_[i];
        if (cfg_.kind == OptimizerKind::momentum_sgd) {
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double grad = static_cast<double>(g[k]) + decay * static_cast<double>(w[k]);
                m[k] = cfg_.momentum * m[k] + grad;
                w[k] = static_cast<T>(static_cast<double>(w[k]) - lr * m[k]);
            }
        } else {
            auto& v = second_[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double grad = static_cast<double>(g[k]);
                m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * grad;
                v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * grad * grad;
                const double update = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
                const double wk = static_cast<double>(w[k]);
                w[k] = static_cast<T>(wk - lr * (update + decay * wk));
            }
        }
    }
}

template <typename T>
void Optimizer<T>::zero_grad() {
    for (auto& p : params_) {
        Tensor<T> t = p.value;
        t.clear_grad();
    }
}

template double global_grad_norm<float>(const ParameterList<float>&);
template double global_grad_norm<double>(const ParameterList<double>&);
template double clip_gradients<float>(const ParameterList<float>&, double);
template double clip_gradients<double>(const ParameterList<double>&, double);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace ofakd
