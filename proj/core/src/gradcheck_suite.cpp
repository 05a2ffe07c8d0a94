#include "ofakd/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ofakd/losses.hpp"
#include "ofakd/nn.hpp"
#include "ofakd/ops.hpp"
#include "ofakd/rng.hpp"

namespace ofakd {

namespace {

using D = Tensor<double>;
using Inputs = std::vector<D>;
using MultiFn = std::function<D(const Inputs&)>;

D random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel_of(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return D(std::move(shape), std::move(v));
}

// Uniform in [-1, 1] but at least `gap` away from zero (keeps relu off its kink).
D away_from_zero(Shape shape, Rng& rng, double gap = 0.05) {
    std::vector<double> v(numel_of(shape));
    for (auto& x : v) {
        const double m = rng.uniform(gap, 1.0);
        x = rng.uniform() < 0.5 ? -m : m;
    }
    return D(std::move(shape), std::move(v));
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
    std::vector<std::size_t> out(n);
    for (auto& y : out) y = rng.index(classes);
    return out;
}

void merge(GradCheckReport& into, const GradCheckReport& r) {
    into.elements += r.elements;
    into.max_abs_error = std::max(into.max_abs_error, r.max_abs_error);
    if (r.max_rel_error > into.max_rel_error) {
        into.max_rel_error = r.max_rel_error;
        into.worst_index = r.worst_index;
    }
    into.finite = into.finite && r.finite;
    if (!r.passed && into.message.empty()) into.message = r.message.empty() ? "failed" : r.message;
    into.passed = into.passed && r.passed;
}

// Checks f against every input in turn. Non-scalar outputs are contracted
// with fixed random weights so that no gradient direction is trivially zero.
GradCheckReport check_inputs(const Inputs& inputs, const MultiFn& f, Rng& rng, const GradCheckOptions& o) {
    D weights;
    {
        NoGradScope<double> no_grad;
        const D y = f(inputs);
        if (y.numel() != 1) weights = random_tensor(y.shape(), rng);
    }
    GradCheckReport merged;
    merged.passed = true;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto g = [&, i](const D& xi) {
            Inputs in = inputs;
            in[i] = xi;
            const D y = f(in);
            return weights.defined() ? sum(mul(y, weights)) : y;
        };
        merge(merged, grad_check(g, inputs[i], o.step, o.tolerance));
    }
    return merged;
}

using CaseFn = std::function<GradCheckReport(Rng&, const GradCheckOptions&)>;

GradCheckReport distillation_e2e(Rng& rng, const GradCheckOptions& o) {
    ModelConfig cfg;
    cfg.family = Family::cnn;
    cfg.widths = {4, 4, 8, 8};
    cfg.stage_depth = 1;
    cfg.class_count = 3;
    cfg.height = 16;
    cfg.width = 16;
    cfg.seed = rng.engine()();
    const StagedModel<double> student(cfg);
    const BranchedModel<double> branched = attach_branches(student, {2, 4});
    const D images = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
    const D teacher_logits = random_tensor({2, 3}, rng, -2.0, 2.0);
    const auto labels = random_labels(2, 3, rng);
    LossConfig loss;
    loss.gamma = rng.uniform(1.0, 2.0);
    loss.temperature = rng.uniform(0.5, 2.0);

    auto objective = [&]() {
        const auto exits = branched.forward_exits(images);
        return distillation_objective(exits.branch_logits, exits.logits, teacher_logits, Labels(labels), loss);
    };
    GradCheckReport merged;
    merged.passed = true;
    for (const auto& p : branched.parameters()) {
        auto r = grad_check_parameter(objective, p.value, o.step, o.tolerance, 4);
        if (!r.passed && !r.message.empty()) r.message = p.name + ": " + r.message;
        merge(merged, r);
    }
    return merged;
}

const std::map<std::string, CaseFn>& cases() {
    static const std::map<std::string, CaseFn> table = [] {
        std::map<std::string, CaseFn> t;
        auto unary = [&t](const std::string& name, UnaryOp op, bool positive, bool kink) {
            t[name] = [=](Rng& rng, const GradCheckOptions& o) {
                const D x = positive ? random_tensor({3, 4}, rng, 0.5, 2.0)
                                     : (kink ? away_from_zero({3, 4}, rng) : random_tensor({3, 4}, rng));
                return check_inputs({x}, [=](const Inputs& in) { return elementwise(op, in[0]); }, rng, o);
            };
        };
        unary("relu", UnaryOp::relu, false, true);
        unary("gelu", UnaryOp::gelu, false, false);
        unary("log", UnaryOp::log, true, false);
        unary("exp", UnaryOp::exp, false, false);
        auto binary = [&t](const std::string& name, BinaryOp op) {
            t[name] = [=](Rng& rng, const GradCheckOptions& o) {
                auto f = [=](const Inputs& in) { return elementwise(op, in[0], in[1]); };
                auto r = check_inputs({random_tensor({2, 3, 4}, rng), random_tensor({3, 4}, rng)}, f, rng, o);
                merge(r, check_inputs({random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}, f, rng, o));
                return r;
            };
        };
        binary("add", BinaryOp::add);
        binary("sub", BinaryOp::sub);
        binary("mul", BinaryOp::mul);
        t["scale"] = [](Rng& rng, const GradCheckOptions& o) {
            const double factor = rng.uniform(-2.0, 2.0);
            return check_inputs({random_tensor({3, 4}, rng)},
                                [=](const Inputs& in) { return scale(in[0], factor); }, rng, o);
        };
        t["reshape"] = [](Rng& rng, const GradCheckOptions& o) {
            return check_inputs({random_tensor({2, 6}, rng)},
                                [](const Inputs& in) { return reshape(in[0], {3, 4}); }, rng, o);
        };
        t["permute"] = [](Rng& rng, const GradCheckOptions& o) {
            return check_inputs({random_tensor({2, 3, 4}, rng)},
                                [](const Inputs& in) { return permute(in[0], {2, 0, 1}); }, rng, o);
        };
        t["concat"] = [](Rng& rng, const GradCheckOptions& o) {
            return check_inputs({random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)},
                                [](const Inputs& in) { return concat<double>({in[0], in[1]}, 1); }, rng, o);
        };
        t["narrow"] = [](Rng& rng, const GradCheckOptions& o) {
            return check_inputs({random_tensor({4, 5}, rng)},
                                [](const Inputs& in) { return narrow(in[0], 1, 1, 3); }, rng, o);
        };
        t["matmul"] = [](Rng& rng, const GradCheckOptions& o) {
            return check_inputs({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                                [](const Inputs& in) { return matmul(in[0], in[1]); }, rng, o);
        };
        t["bmm"] = [](Rng& rng, const GradCheckOptions& o) {
            return check_inputs({random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)},
                                [](const Inputs& in) { return bmm(in[0], in[1]); }, rng, o);
        };
        t["linear"] = [](Rng& rng, const GradCheckOptions& o) {
            return check_inputs({random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)},
                                [](const Inputs& in) { return linear(in[0], in[1], in[2]); }, rng, o);
        };
        auto reduction = [&t](const std::string& name, ReduceOp op) {
            t[name] = [=](Rng& rng, const GradCheckOptions& o) {
                auto r = check_inputs({random_tensor({3, 4, 2}, rng)},
                                      [=](const Inputs& in) { return reduce(op, in[0]); }, rng, o);
                merge(r, check_inputs({random_tensor({3, 4, 2}, rng)},
                                      [=](const Inputs& in) { return reduce(op, in[0], std::size_t{1}); }, rng, o));
                return r;
            };
        };
        reduction("sum", ReduceOp::sum);
        reduction("mean", ReduceOp::mean);
        reduction("l2_norm", ReduceOp::l2_norm);
        t["softmax"] = [](Rng& rng, const GradCheckOptions& o) {
            const double tau = rng.uniform(0.5, 2.0);
            return check_inputs({random_tensor({3, 5}, rng, -3.0, 3.0)},
                                [=](const Inputs& in) { return softmax(in[0], tau); }, rng, o);
        };
        t["log_softmax"] = [](Rng& rng, const GradCheckOptions& o) {
            const double tau = rng.uniform(0.5, 2.0);
            return check_inputs({random_tensor({3, 5}, rng, -3.0, 3.0)},
                                [=](const Inputs& in) { return log_softmax(in[0], tau); }, rng, o);
        };
        t["pick"] = [](Rng& rng, const GradCheckOptions& o) {
            const auto idx = random_labels(3, 5, rng);
            return check_inputs({random_tensor({3, 5}, rng)},
                                [=](const Inputs& in) { return pick(in[0], std::span<const std::size_t>(idx)); },
                                rng, o);
        };
        t["layernorm"] = [](Rng& rng, const GradCheckOptions& o) {
            return check_inputs(
                {random_tensor({2, 3, 6}, rng), random_tensor({6}, rng, 0.5, 1.5), random_tensor({6}, rng)},
                [](const Inputs& in) { return layernorm(in[0], in[1], in[2], 1e-5); }, rng, o);
        };
        t["group_norm"] = [](Rng& rng, const GradCheckOptions& o) {
            return check_inputs(
                {random_tensor({2, 4, 3, 3}, rng), random_tensor({4}, rng, 0.5, 1.5), random_tensor({4}, rng)},
                [](const Inputs& in) { return group_norm(in[0], in[1], in[2], 2, 1e-5); }, rng, o);
        };
        t["conv2d"] = [](Rng& rng, const GradCheckOptions& o) {
            auto r = check_inputs(
                {random_tensor({2, 4, 5, 5}, rng), random_tensor({6, 2, 3, 3}, rng), random_tensor({6}, rng)},
                [](const Inputs& in) { return conv2d(in[0], in[1], in[2], {2, 1, 2}); }, rng, o);
            merge(r, check_inputs({random_tensor({1, 2, 4, 4}, rng), random_tensor({3, 2, 2, 2}, rng)},
                                  [](const Inputs& in) { return conv2d(in[0], in[1], D(), {1, 0, 1}); }, rng, o));
            return r;
        };
        t["cross_entropy"] = [](Rng& rng, const GradCheckOptions& o) {
            const auto y = random_labels(4, 5, rng);
            const double tau = rng.uniform(0.5, 2.0);
            return check_inputs({random_tensor({4, 5}, rng, -3.0, 3.0)},
                                [=](const Inputs& in) { return cross_entropy(in[0], Labels(y), tau); }, rng, o);
        };
        t["kd_loss"] = [](Rng& rng, const GradCheckOptions& o) {
            const auto y = random_labels(4, 5, rng);
            const D teacher = random_tensor({4, 5}, rng, -3.0, 3.0);
            LossConfig cfg;
            cfg.lambda = rng.uniform();
            cfg.temperature = rng.uniform(0.5, 4.0);
            cfg.scale = rng.uniform(0.5, 1.5);
            return check_inputs({random_tensor({4, 5}, rng, -3.0, 3.0)},
                                [=](const Inputs& in) { return kd_loss(in[0], teacher, Labels(y), cfg); }, rng, o);
        };
        t["hint_loss"] = [](Rng& rng, const GradCheckOptions& o) {
            const D t1 = random_tensor({3, 6}, rng);
            const D t2 = random_tensor({3, 2, 2}, rng);
            return check_inputs({random_tensor({3, 4}, rng), random_tensor({4, 6}, rng), random_tensor({3, 2, 2}, rng)},
                                [=](const Inputs& in) {
                                    const D w = in[1];
                                    std::vector<FeatureTransform<double>> proj{
                                        [w](const D& x) { return matmul(x, w); }, [](const D& x) { return x; }};
                                    return hint_loss<double>({in[0], in[2]}, {t1, t2}, proj);
                                },
                                rng, o);
        };
        auto teacher_probs = [](Rng& rng) {
            return teacher_probabilities(random_tensor({4, 5}, rng, -3.0, 3.0));
        };
        t["kd_loss_reformulated"] = [=](Rng& rng, const GradCheckOptions& o) {
            const auto y = random_labels(4, 5, rng);
            const D probs = teacher_probs(rng);
            return check_inputs({random_tensor({4, 5}, rng, -3.0, 3.0)},
                                [=](const Inputs& in) { return kd_loss_reformulated(in[0], probs, Labels(y)); },
                                rng, o);
        };
        t["ofa_loss"] = [=](Rng& rng, const GradCheckOptions& o) {
            const auto y = random_labels(4, 5, rng);
            const D probs = teacher_probs(rng);
            LossConfig cfg;
            cfg.gamma = rng.uniform(1.0, 3.0);
            cfg.scale = rng.uniform(0.5, 1.5);
            return check_inputs({random_tensor({4, 5}, rng, -3.0, 3.0)},
                                [=](const Inputs& in) { return ofa_loss(in[0], probs, Labels(y), cfg); }, rng, o);
        };
        t["distillation_objective"] = [](Rng& rng, const GradCheckOptions& o) {
            const auto y = random_labels(4, 5, rng);
            const D teacher = random_tensor({4, 5}, rng, -3.0, 3.0);
            LossConfig cfg;
            cfg.gamma = rng.uniform(1.0, 2.0);
            return check_inputs(
                {random_tensor({4, 5}, rng, -3.0, 3.0), random_tensor({4, 5}, rng, -3.0, 3.0),
                 random_tensor({4, 5}, rng, -3.0, 3.0)},
                [=](const Inputs& in) {
                    return distillation_objective<double>({in[0], in[1]}, in[2], teacher, Labels(y), cfg);
                },
                rng, o);
        };
        t["distillation_e2e"] = distillation_e2e;
        return t;
    }();
    return table;
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
    std::vector<std::string> out;
    for (const auto& [name, fn] : cases()) out.push_back(name);
    return out;
}

std::vector<GradCheckCaseResult> run_gradcheck_suite(const GradCheckOptions& options,
                                                     const std::vector<std::string>& names) {
    const auto selected = names.empty() ? gradcheck_case_names() : names;
    std::vector<GradCheckCaseResult> results;
    for (const auto& name : selected) {
        const auto it = cases().find(name);
        if (it == cases().end()) throw ConfigError("unknown gradcheck case '" + name + "'");
        GradCheckCaseResult res;
        res.name = name;
        Rng rng = Rng::stream(options.seed, "gradcheck:" + name);
        for (std::size_t i = 0; i < options.instances; ++i) {
            const GradCheckReport r = it->second(rng, options);
            ++res.instances;
            res.max_rel_error = std::max(res.max_rel_error, r.max_rel_error);
            if (!r.passed) {
                ++res.failures;
                if (res.first_failure.empty()) {
                    res.first_failure = "instance " + std::to_string(i) + ": " + r.message;
                }
            }
        }
        results.push_back(std::move(res));
    }
    return results;
}

}  // namespace ofakd
