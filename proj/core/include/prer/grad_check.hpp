#pragma once

#include <functional>

#include "prer/tensor.hpp"

namespace prer {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`. The error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// `fn` must rebuild its graph from the current values of `param` on every
/// call; `param` is perturbed in place and restored.
GradCheckResult grad_check(const std::function<Tensor()>& fn, Tensor& param, double h = 1e-5);

/// Convenience form: checks d fn(x) / dx at `point`.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double h = 1e-5);

}  // namespace prer
