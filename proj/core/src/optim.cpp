#include "prer/optim.hpp"

#include <cmath>

#include "prer/error.hpp"

namespace prer {

OptimizerKind parse_optimizer_kind(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ContractError("unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(std::vector<Tensor> params, OptimizerSettings settings)
    : params_(std::move(params)), settings_(settings) {
    if (!(settings_.learning_rate > 0.0)) throw ContractError("learning rate must be positive");
    for (const auto& p : params_)
        if (!p.requires_grad()) throw ContractError("optimizer parameter does not require grad");
    if (settings_.kind == OptimizerKind::adam) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }
}

void Optimizer::step() {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (!params_[i].has_grad())
            throw ContractError("optimizer step: parameter " + std::to_string(i) + " of shape " +
                                to_string(params_[i].shape()) + " has no gradient");
    ++step_;
    const double lr = settings_.learning_rate;
    if (settings_.kind == OptimizerKind::sgd) {
        for (auto& p : params_) {
            auto w = p.data();
            auto g = p.grad();
            for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * g[k];
            p.clear_grad();
        }
        return;
    }
    const double b1 = settings_.beta1, b2 = settings_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto w = params_[i].data();
        auto g = params_[i].grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            w[k] -= lr * mhat / (std::sqrt(vhat) + settings_.epsilon);
        }
        params_[i].clear_grad();
    }
}

void Optimizer::zero_grad() {
    for (auto& p : params_) p.clear_grad();
}

}  // namespace prer
