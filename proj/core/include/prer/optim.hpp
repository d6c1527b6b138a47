#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prer/tensor.hpp"

namespace prer {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerSettings {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// SGD or bias-corrected Adam over a fixed parameter set.
class Optimizer {
public:
    Optimizer(std::vector<Tensor> params, OptimizerSettings settings);

    /// Applies one update and clears every parameter's gradient. Throws
    /// ContractError if a parameter has no populated gradient.
    void step();
    void zero_grad();

    const OptimizerSettings& settings() const noexcept { return settings_; }
    std::uint64_t steps() const noexcept { return step_; }
    const std::vector<Tensor>& params() const noexcept { return params_; }
    /// Adam moment buffers, empty for SGD.
    const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
    const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }

private:
    std::vector<Tensor> params_;
    OptimizerSettings settings_;
    std::uint64_t step_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace prer
