#include "ofakd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ofakd {

namespace {

// Folds one analytic/numeric pair into the report.
void compare(GradCheckReport& report, std::size_t i, double analytic, double numeric) {
    const double abs_err = std::abs(analytic - numeric);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
    const double rel = abs_err / denom;
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_index = i;
    }
}

void finish(GradCheckReport& report, double tol) {
    report.passed = report.finite && report.max_rel_error <= tol;
    if (!report.passed && report.message.empty()) {
        report.message = "max relative error " + std::to_string(report.max_rel_error) + " at index " +
                         std::to_string(report.worst_index);
    }
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, const Tensor<double>& x, double step, double tol) {
    GradCheckReport report;
    report.elements = x.numel();

    std::vector<double> analytic(x.numel(), 0.0);
    try {
        Tensor<double> leaf = x.detach();
        leaf.set_requires_grad(true);
        GradTape<double> tape;
        TapeScope<double> scope(&tape);
        Tensor<double> y = f(leaf);
        if (y.numel() != 1) {
            report.message = "function is not scalar-valued: " + to_string(y.shape());
            return report;
        }
        if (!tape.empty()) {
            tape.backward(y);
            if (leaf.has_grad()) analytic.assign(leaf.grad().begin(), leaf.grad().end());
        }
    } catch (const NonFiniteError& e) {
        report.finite = false;
        report.message = e.what();
        return report;
    }

    NoGradScope<double> no_grad;
    std::vector<double> probe(x.data().begin(), x.data().end());
    auto evaluate = [&](std::size_t i, double value) {
        const double saved = probe[i];
        probe[i] = value;
        Tensor<double> t(x.shape(), probe);
        probe[i] = saved;
        return f(t).item();
    };

    for (std::size_t i = 0; i < probe.size(); ++i) {
        try {
            const double numeric =
                (evaluate(i, probe[i] + step) - evaluate(i, probe[i] - step)) / (2.0 * step);
            compare(report, i, analytic[i], numeric);
        } catch (const NonFiniteError& e) {
            report.finite = false;
            report.message = e.what();
            return report;
        } catch (const DomainError& e) {
            // A perturbed point left the function's domain.
            report.message = std::string("perturbation at index ") + std::to_string(i) + ": " + e.what();
            return report;
        }
    }
    finish(report, tol);
    return report;
}

GradCheckReport grad_check_parameter(const std::function<Tensor<double>()>& loss, Tensor<double> param,
                                     double step, double tol, std::size_t max_elements) {
    GradCheckReport report;
    const std::size_t n = param.numel();
    const std::size_t stride =
        (max_elements == 0 || max_elements >= n) ? 1 : (n + max_elements - 1) / max_elements;

    std::vector<double> analytic(n, 0.0);
    const bool had_flag = param.requires_grad();
    try {
        param.set_requires_grad(true);
        param.clear_grad();
        GradTape<double> tape;
        TapeScope<double> scope(&tape);
        Tensor<double> y = loss();
        if (y.numel() != 1) {
            report.message = "loss is not scalar-valued: " + to_string(y.shape());
            param.set_requires_grad(had_flag);
            return report;
        }
        tape.backward(y);
        if (param.has_grad()) analytic.assign(param.grad().begin(), param.grad().end());
        param.clear_grad();
    } catch (const NonFiniteError& e) {
        param.set_requires_grad(had_flag);
        report.finite = false;
        report.message = e.what();
        return report;
    }
    param.set_requires_grad(had_flag);

    NoGradScope<double> no_grad;
    auto values = param.mutable_data();
    for (std::size_t i = 0; i < n; i += stride) {
        const double saved = values[i];
        try {
            values[i] = saved + step;
            const double up = loss().item();
            values[i] = saved - step;
            const double down = loss().item();
            values[i] = saved;
            compare(report, i, analytic[i], (up - down) / (2.0 * step));
            ++report.elements;
        } catch (const NonFiniteError& e) {
            values[i] = saved;
            report.finite = false;
            report.message = e.what();
            return report;
        } catch (const DomainError& e) {
            values[i] = saved;
            report.message = std::string("perturbation at index ") + std::to_string(i) + ": " + e.what();
            return report;
        }
    }
    finish(report, tol);
    return report;
}

}  // namespace ofakd
