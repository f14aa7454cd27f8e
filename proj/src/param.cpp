#include "hpt/param.hpp"

#include <cmath>
#include <stdexcept>

namespace hpt {

void sgd_step(const ParamRefs& params, double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
    for (Parameter* p : params) {
        if (!p->grad.same_shape(p->value)) throw std::logic_error("sgd_step: grad shape mismatch");
        for (size_t i = 0; i < p->value.data.size(); ++i) p->value.data[i] -= lr * p->grad.data[i];
        p->zero_grad();
    }
}

void zero_grads(const ParamRefs& params) {
    for (Parameter* p : params) p->zero_grad();
}

std::vector<Tensor2> finite_diff_grad(const std::function<double()>& loss_fn,
                                      const ParamRefs& params, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
    std::vector<Tensor2> out;
    out.reserve(params.size());
    for (Parameter* p : params) {
        Tensor2 g(p->value.rows, p->value.cols);
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            const double saved = p->value.data[i];
            p->value.data[i] = saved + h;
            const double fp = loss_fn();
            p->value.data[i] = saved - h;
            const double fm = loss_fn();
            p->value.data[i] = saved;
            g.data[i] = (fp - fm) / (2.0 * h);
        }
        out.push_back(std::move(g));
    }
    return out;
}

GradCheckReport check_gradients(const std::function<double()>& loss_fn,
                                const ParamRefs& params, double h) {
    GradCheckReport report;
    const std::vector<Tensor2> fd = finite_diff_grad(loss_fn, params, h);
    for (size_t k = 0; k < params.size(); ++k) {
        GradCheckEntry e;
        e.name = params[k]->name;
        const Tensor2& a = params[k]->grad;
        const Tensor2& b = fd[k];
        for (size_t i = 0; i < a.data.size(); ++i) {
            const double abs_err = std::fabs(a.data[i] - b.data[i]);
            const double denom = std::max({1.0, std::fabs(a.data[i]), std::fabs(b.data[i])});
            e.max_abs_err = std::max(e.max_abs_err, abs_err);
            e.max_rel_err = std::max(e.max_rel_err, abs_err / denom);
        }
        report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace hpt
