#include "prer/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "prer/error.hpp"

namespace prer {

GradCheckResult grad_check(const std::function<Tensor()>& fn, Tensor& param, double h) {
    if (!param.requires_grad()) throw ContractError("grad_check: parameter must require grad");
    param.clear_grad();
    autograd::tape().clear();
    Tensor loss = fn();
    autograd::backward(loss);
    const std::vector<double> analytic(param.grad().begin(), param.grad().end());
    param.clear_grad();

    GradCheckResult result;
    auto w = param.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
        const double saved = w[k];
        double plus, minus;
        {
            autograd::NoGradGuard guard;
            w[k] = saved + h;
            plus = fn().item();
            w[k] = saved - h;
            minus = fn().item();
        }
        w[k] = saved;
        const double numeric = (plus - minus) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-8});
        const double err = std::abs(analytic[k] - numeric) / denom;
        if (k == 0 || err > result.max_rel_error) result = {err, k, analytic[k], numeric};
    }
    return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double h) {
    Tensor x = point.clone();
    x.set_requires_grad(true);
    return grad_check([&]() { return fn(x); }, x, h);
}

}  // namespace prer
