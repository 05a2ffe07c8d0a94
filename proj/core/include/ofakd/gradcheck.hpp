#pragma once

#include <functional>
#include <string>

#include "ofakd/tensor.hpp"

namespace ofakd {

struct GradCheckReport {
    std::size_t elements = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t worst_index = 0;
    bool finite = true;
    bool passed = false;
    std::string message;
};

using ScalarFunction = std::function<Tensor<double>(const Tensor<double>&)>;

// Magnitude below which gradient entries are compared on an absolute scale:
// rel = |analytic - numeric| / max(|analytic|, |numeric|, kGradCheckFloor).
inline constexpr double kGradCheckFloor = 1e-3;

// Compares the tape gradient of scalar f at x with central differences.
// Any NaN/Inf along the way is reported as a failure.
GradCheckReport grad_check(const ScalarFunction& f, const Tensor<double>& x, double step = 1e-5,
                           double tol = 1e-4);

// Same check for a tensor that lives inside a model: `loss` closes over
// `param`, which is perturbed in place and restored. When max_elements is
// non-zero only an evenly strided subset of entries is probed.
GradCheckReport grad_check_parameter(const std::function<Tensor<double>()>& loss, Tensor<double> param,
                                     double step = 1e-5, double tol = 1e-4,
                                     std::size_t max_elements = 0);

}  // namespace ofakd
