#pragma once

#include <cmath>
#include <vector>

#include "prer/flow.hpp"
#include "prer/ops.hpp"
#include "prer/optim.hpp"
#include "prer/rng.hpp"

namespace prer::test {

/// Zeroes every conditioner head, pins batch norm to (0, 1) and uses
/// identity permutations. With raw_exp and eps = 0 the flow is the identity.
inline void make_identity(flow::FlowModel& model) {
    for (auto& level : model.levels())
        for (auto& block : level) {
            for (auto* lin : {&block.coupling.log_scale, &block.coupling.shift}) {
                for (double& v : lin->weight.data()) v = 0.0;
                for (double& v : lin->bias.data()) v = 0.0;
            }
            const std::size_t d = block.norm.dim();
            block.norm.set_running(std::vector<double>(d, 0.0), std::vector<double>(d, 1.0));
            block.permutation = flow::Permutation::identity(d);
        }
}

/// Random running statistics and inflated conditioner weights so that every
/// block does real work.
inline void randomise(flow::FlowModel& model, Rng& rng, double weight_scale = 1.0) {
    for (auto& level : model.levels())
        for (auto& block : level) {
            for (auto* lin : {&block.coupling.hidden, &block.coupling.log_scale, &block.coupling.shift}) {
                for (double& v : lin->weight.data()) v = weight_scale * rng.uniform(-1, 1);
                for (double& v : lin->bias.data()) v = weight_scale * rng.uniform(-0.5, 0.5);
            }
            const std::size_t d = block.norm.dim();
            std::vector<double> m(d), s(d);
            for (std::size_t i = 0; i < d; ++i) {
                m[i] = rng.uniform(-0.5, 0.5);
                s[i] = rng.uniform(0.5, 2.0);
            }
            block.norm.set_running(m, s);
        }
}

/// Two isotropic blobs in 2-D, half the points each.
inline Tensor two_blob_mixture(std::size_t n, Rng& rng, std::vector<int>* labels = nullptr) {
    std::vector<double> v(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % 2);
        const double cx = c == 0 ? -1.5 : 1.5, cy = c == 0 ? 0.5 : -0.5;
        v[2 * i] = cx + 0.5 * rng.normal();
        v[2 * i + 1] = cy + 0.5 * rng.normal();
        if (labels) labels->push_back(c);
    }
    return Tensor({n, 2}, std::move(v));
}

/// Minibatch maximum-likelihood training; returns the mean NLL per epoch.
inline std::vector<double> fit_flow(flow::FlowModel& model, const Tensor& data, const std::vector<int>& labels,
                                    std::size_t epochs, double lr, std::size_t batch, Rng& rng) {
    Optimizer opt(tensors_of(model.parameters()), {OptimizerKind::adam, lr});
    const std::size_t n = data.rows(), d = data.cols();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::vector<double> history;
    for (std::size_t e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        double total = 0.0;
        std::size_t seen = 0;
        for (std::size_t s = 0; s + 1 < n; s += batch) {
            const std::size_t m = std::min(batch, n - s);
            if (m < 2) break;
            std::vector<double> rows;
            std::vector<int> cls;
            for (std::size_t k = 0; k < m; ++k) {
                const auto r = data.values().subspan(order[s + k] * d, d);
                rows.insert(rows.end(), r.begin(), r.end());
                if (!labels.empty()) cls.push_back(labels[order[s + k]]);
            }
            Tensor loss = model.nll_loss(Tensor({m, d}, std::move(rows)), cls);
            total += loss.item() * static_cast<double>(m);
            seen += m;
            autograd::backward(loss);
            opt.step();
        }
        history.push_back(total / static_cast<double>(seen));
    }
    return history;
}

}  // namespace prer::test
