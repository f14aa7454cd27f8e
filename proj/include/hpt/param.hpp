#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hpt/tensor.hpp"

namespace hpt {

// A named learnable tensor with its gradient accumulator. Gradient shape
// always equals value shape; grads are zero after reset / after an SGD step.
struct Parameter {
    std::string name;
    Tensor2 value;
    Tensor2 grad;

    Parameter() = default;
    Parameter(std::string n, Tensor2 v)
        : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}

    void zero_grad() { grad.fill(0.0); }
};

using ParamRefs = std::vector<Parameter*>;

// value <- value - lr * grad, then grads reset to zero. lr must be positive.
void sgd_step(const ParamRefs& params, double lr);

void zero_grads(const ParamRefs& params);

// Central finite differences of a scalar loss: (f(p+h) - f(p-h)) / 2h per
// scalar entry. loss_fn must be deterministic and read parameter values live.
std::vector<Tensor2> finite_diff_grad(const std::function<double()>& loss_fn,
                                      const ParamRefs& params, double h);

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool passed(double tol) const { return max_rel_err < tol; }
};

// Guarded relative error |a-b| / max(1, |a|, |b|) between the analytic grads
// currently stored in params and central finite differences of loss_fn.
// Analytic grads must already be accumulated before the call.
GradCheckReport check_gradients(const std::function<double()>& loss_fn,
                                const ParamRefs& params, double h);

}  // namespace hpt
