#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <vector>

#include "prer/tensor.hpp"

namespace prer::test {

inline Tensor mat(std::size_t r, std::size_t c, std::vector<double> v, bool grad = false) {
    return Tensor({r, c}, std::move(v), grad);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

inline Eigen::MatrixXd to_eigen(const Tensor& t) {
    Eigen::MatrixXd m(t.rows(), t.cols());
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t.at(r, c);
    return m;
}

/// Central-difference Jacobian of a map R^d -> R^d evaluated one row at a time.
inline Eigen::MatrixXd numeric_jacobian(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                                        const std::vector<double>& x, double h = 1e-6) {
    const auto d = static_cast<Eigen::Index>(x.size());
    Eigen::MatrixXd j(d, d);
    for (Eigen::Index k = 0; k < d; ++k) {
        auto xp = x, xm = x;
        xp[static_cast<std::size_t>(k)] += h;
        xm[static_cast<std::size_t>(k)] -= h;
        const auto fp = f(xp), fm = f(xm);
        for (Eigen::Index i = 0; i < d; ++i)
            j(i, k) = (fp[static_cast<std::size_t>(i)] - fm[static_cast<std::size_t>(i)]) / (2 * h);
    }
    return j;
}

/// log|det J| through a pivoted LU factorisation.
inline double log_abs_det(const Eigen::MatrixXd& j) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(j);
    const Eigen::MatrixXd u = lu.matrixLU().triangularView<Eigen::Upper>();
    double s = 0.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) s += std::log(std::abs(u(i, i)));
    return s;
}

}  // namespace prer::test
