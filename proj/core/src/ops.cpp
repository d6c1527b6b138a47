#include "prer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prer/error.hpp"
#include "prer/rng.hpp"

namespace prer {

using autograd::grad_buffer;
using autograd::ImplPtr;
using autograd::make_result;
using detail::TensorImpl;

namespace {

// ---------------------------------------------------------------------------
// Broadcasting for binary ops.
// ---------------------------------------------------------------------------

struct Extent {
    std::size_t rows;
    std::size_t cols;
};

struct Broadcast {
    Shape out_shape;
    bool same = false;
    Extent out{};
    Extent a{};
    Extent b{};
};

Extent as_matrix(const Tensor& t) {
    if (t.numel() == 1) return {1, 1};
    if (t.rank() == 1) return {1, t.dim(0)};
    if (t.rank() == 2) return {t.dim(0), t.dim(1)};
    return {0, 0};
}

Broadcast resolve(const Tensor& a, const Tensor& b, const char* op) {
    Broadcast bc;
    if (a.shape() == b.shape()) {
        bc.same = true;
        bc.out_shape = a.shape();
        return bc;
    }
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (a_scalar || b_scalar) {
        const Tensor& big = a_scalar ? b : a;
        bc.out_shape = big.shape();
        const std::size_t n = big.numel();
        bc.out = {1, n};
        bc.a = a_scalar ? Extent{1, 1} : Extent{1, n};
        bc.b = b_scalar ? Extent{1, 1} : Extent{1, n};
        return bc;
    }
    bc.a = as_matrix(a);
    bc.b = as_matrix(b);
    auto merge = [&](std::size_t x, std::size_t y) -> std::size_t {
        if (x == y || y == 1) return x;
        if (x == 1) return y;
        throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                             to_string(b.shape()) + " do not broadcast");
    };
    if (bc.a.rows == 0 || bc.b.rows == 0)
        throw DimensionError(std::string(op) + ": broadcasting needs matrices, got " + to_string(a.shape()) +
                             " and " + to_string(b.shape()));
    bc.out = {merge(bc.a.rows, bc.b.rows), merge(bc.a.cols, bc.b.cols)};
    bc.out_shape = {bc.out.rows, bc.out.cols};
    return bc;
}

inline std::size_t index_of(const Extent& e, std::size_t i, std::size_t j) {
    return (e.rows == 1 ? 0 : i) * e.cols + (e.cols == 1 ? 0 : j);
}

// f(x, y) -> value; dx(x, y, out) and dy(x, y, out) -> partial derivatives.
template <typename F, typename DX, typename DY>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, DX dx, DY dy) {
    const Broadcast bc = resolve(a, b, name);
    const auto& av = a.impl()->values;
    const auto& bv = b.impl()->values;
    std::vector<double> out;
    if (bc.same) {
        out.resize(av.size());
        for (std::size_t k = 0; k < av.size(); ++k) out[k] = f(av[k], bv[k]);
    } else {
        out.resize(bc.out.rows * bc.out.cols);
        for (std::size_t i = 0; i < bc.out.rows; ++i)
            for (std::size_t j = 0; j < bc.out.cols; ++j)
                out[i * bc.out.cols + j] = f(av[index_of(bc.a, i, j)], bv[index_of(bc.b, i, j)]);
    }
    ImplPtr ai = a.impl(), bi = b.impl();
    return make_result(name, bc.out_shape, std::move(out), {ai, bi}, [ai, bi, bc, dx, dy](const TensorImpl& o) {
        const auto& g = o.grad;
        const auto& av = ai->values;
        const auto& bv = bi->values;
        if (bc.same) {
            if (ai->requires_grad) {
                auto& ga = grad_buffer(*ai);
                for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * dx(av[k], bv[k], o.values[k]);
            }
            if (bi->requires_grad) {
                auto& gb = grad_buffer(*bi);
                for (std::size_t k = 0; k < g.size(); ++k) gb[k] += g[k] * dy(av[k], bv[k], o.values[k]);
            }
            return;
        }
        for (std::size_t i = 0; i < bc.out.rows; ++i) {
            for (std::size_t j = 0; j < bc.out.cols; ++j) {
                const std::size_t k = i * bc.out.cols + j;
                const std::size_t ia = index_of(bc.a, i, j);
                const std::size_t ib = index_of(bc.b, i, j);
                if (ai->requires_grad) grad_buffer(*ai)[ia] += g[k] * dx(av[ia], bv[ib], o.values[k]);
                if (bi->requires_grad) grad_buffer(*bi)[ib] += g[k] * dy(av[ia], bv[ib], o.values[k]);
            }
        }
    });
}

// f(x) -> value; df(x, y) -> derivative given input x and output y.
template <typename F, typename DF>
Tensor unary(const char* name, const Tensor& a, F f, DF df) {
    const auto& av = a.impl()->values;
    std::vector<double> out(av.size());
    for (std::size_t k = 0; k < av.size(); ++k) out[k] = f(av[k]);
    ImplPtr ai = a.impl();
    return make_result(name, a.shape(), std::move(out), {ai}, [ai, df](const TensorImpl& o) {
        auto& ga = grad_buffer(*ai);
        for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += o.grad[k] * df(ai->values[k], o.values[k]);
    });
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + ": expected a matrix, got shape " + to_string(t.shape()));
}

void require_nchw(const Tensor& t, const char* op) {
    if (t.rank() != 4)
        throw DimensionError(std::string(op) + ": expected [N, C, H, W], got shape " + to_string(t.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double o) { return -o / y; });
}

Tensor add(const Tensor& a, double c) {
    return unary(
        "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double c) {
    return unary(
        "scale", a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor relu(const Tensor& a) {
    return unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        "sigmoid", a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor log_sigmoid(const Tensor& a) {
    return unary(
        "log_sigmoid", a,
        [](double x) { return x < 0.0 ? x - std::log1p(std::exp(x)) : -std::log1p(std::exp(-x)); },
        [](double x, double) {
            // d/dx log sigmoid(x) = sigmoid(-x)
            if (x >= 0.0) {
                const double e = std::exp(-x);
                return e / (1.0 + e);
            }
            return 1.0 / (1.0 + std::exp(x));
        });
}

Tensor tanh(const Tensor& a) {
    return unary(
        "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
    return unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    if (autograd::checked_mode()) {
        const auto v = a.values();
        for (std::size_t k = 0; k < v.size(); ++k)
            if (!(v[k] > 0.0))
                throw DomainError("log of non-positive value " + std::to_string(v[k]) + " at index " +
                                  std::to_string(k));
    }
    return unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    if (autograd::checked_mode()) {
        for (double v : a.values())
            if (v < 0.0) throw DomainError("sqrt of negative value " + std::to_string(v));
    }
    return unary(
        "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
    return unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
    return unary(
        "abs", a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    ImplPtr ai = a.impl();
    return make_result("sum", {1}, {s}, {ai}, [ai](const TensorImpl& o) {
        auto& ga = grad_buffer(*ai);
        for (double& g : ga) g += o.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum_cols(const Tensor& a) {
    require_matrix(a, "sum_cols");
    const std::size_t m = a.rows(), n = a.cols();
    const auto& av = a.impl()->values;
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i] += av[i * n + j];
    ImplPtr ai = a.impl();
    return make_result("sum_cols", {m, 1}, std::move(out), {ai}, [ai, m, n](const TensorImpl& o) {
        auto& ga = grad_buffer(*ai);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += o.grad[i];
    });
}

Tensor sum_rows(const Tensor& a) {
    require_matrix(a, "sum_rows");
    const std::size_t m = a.rows(), n = a.cols();
    const auto& av = a.impl()->values;
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
    ImplPtr ai = a.impl();
    return make_result("sum_rows", {1, n}, std::move(out), {ai}, [ai, m, n](const TensorImpl& o) {
        auto& ga = grad_buffer(*ai);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += o.grad[j];
    });
}

Tensor mean_rows(const Tensor& a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows())); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                             to_string(b.shape()));
    const auto& av = a.impl()->values;
    const auto& bv = b.impl()->values;
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    ImplPtr ai = a.impl(), bi = b.impl();
    return make_result("matmul", {m, n}, std::move(out), {ai, bi}, [ai, bi, m, k, n](const TensorImpl& o) {
        const double* g = o.grad.data();
        if (ai->requires_grad) {
            auto& ga = grad_buffer(*ai);
            const double* bv = bi->values.data();
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = bv + p * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ga[i * k + p] += acc;
                }
            }
        }
        if (bi->requires_grad) {
            auto& gb = grad_buffer(*bi);
            const double* av = ai->values.data();
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = av[i * k + p];
                    if (aip == 0.0) continue;
                    double* gbrow = gb.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    const auto& av = a.impl()->values;
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    ImplPtr ai = a.impl();
    return make_result("transpose", {n, m}, std::move(out), {ai}, [ai, m, n](const TensorImpl& o) {
        auto& ga = grad_buffer(*ai);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += o.grad[j * m + i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.numel())
        throw DimensionError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
    ImplPtr ai = a.impl();
    return make_result("reshape", std::move(shape), a.impl()->values, {ai}, [ai](const TensorImpl& o) {
        auto& ga = grad_buffer(*ai);
        for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += o.grad[k];
    });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    require_matrix(a, "slice_cols");
    const std::size_t m = a.rows(), n = a.cols();
    if (begin >= end || end > n)
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") invalid for " + std::to_string(n) + " columns");
    const std::size_t w = end - begin;
    const auto& av = a.impl()->values;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(i * n + begin), w,
                    out.begin() + static_cast<std::ptrdiff_t>(i * w));
    ImplPtr ai = a.impl();
    return make_result("slice_cols", {m, w}, std::move(out), {ai}, [ai, m, n, w, begin](const TensorImpl& o) {
        auto& ga = grad_buffer(*ai);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += o.grad[i * w + j];
    });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    require_matrix(a, "slice_rows");
    const std::size_t m = a.rows(), n = a.cols();
    if (begin >= end || end > m)
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") invalid for " + std::to_string(m) + " rows");
    const auto& av = a.impl()->values;
    std::vector<double> out(av.begin() + static_cast<std::ptrdiff_t>(begin * n),
                            av.begin() + static_cast<std::ptrdiff_t>(end * n));
    ImplPtr ai = a.impl();
    return make_result("slice_rows", {end - begin, n}, std::move(out), {ai}, [ai, n, begin](const TensorImpl& o) {
        auto& ga = grad_buffer(*ai);
        for (std::size_t k = 0; k < o.grad.size(); ++k) ga[begin * n + k] += o.grad[k];
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t m = parts.front().rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
        total += p.cols();
    }
    std::vector<double> out(m * total);
    std::vector<ImplPtr> inputs;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        const auto& pv = p.impl()->values;
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                        out.begin() + static_cast<std::ptrdiff_t>(i * total + off));
        inputs.push_back(p.impl());
        offsets.push_back(off);
        off += w;
    }
    auto captured = inputs;
    return make_result("concat_cols", {m, total}, std::move(out), std::move(inputs),
                       [captured, offsets, m, total](const TensorImpl& o) {
                           for (std::size_t q = 0; q < captured.size(); ++q) {
                               auto& in = *captured[q];
                               if (!in.requires_grad) continue;
                               auto& g = grad_buffer(in);
                               const std::size_t w = in.shape[1];
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < w; ++j)
                                       g[i * w + j] += o.grad[i * total + offsets[q] + j];
                           }
                       });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::size_t n = parts.front().cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.cols() != n) throw DimensionError("concat_rows: column counts differ");
        total += p.rows();
    }
    std::vector<double> out;
    out.reserve(total * n);
    std::vector<ImplPtr> inputs;
    for (const auto& p : parts) {
        const auto& pv = p.impl()->values;
        out.insert(out.end(), pv.begin(), pv.end());
        inputs.push_back(p.impl());
    }
    auto captured = inputs;
    return make_result("concat_rows", {total, n}, std::move(out), std::move(inputs),
                       [captured](const TensorImpl& o) {
                           std::size_t off = 0;
                           for (const auto& in : captured) {
                               const std::size_t len = in->values.size();
                               if (in->requires_grad) {
                                   auto& g = grad_buffer(*in);
                                   for (std::size_t k = 0; k < len; ++k) g[k] += o.grad[off + k];
                               }
                               off += len;
                           }
                       });
}

Tensor gather_cols(const Tensor& a, std::span<const std::size_t> index) {
    require_matrix(a, "gather_cols");
    const std::size_t m = a.rows(), n = a.cols(), w = index.size();
    if (w == 0) throw DimensionError("gather_cols: empty index");
    for (std::size_t c : index)
        if (c >= n) throw DimensionError("gather_cols: column " + std::to_string(c) + " out of range");
    const auto& av = a.impl()->values;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = av[i * n + index[j]];
    ImplPtr ai = a.impl();
    std::vector<std::size_t> idx(index.begin(), index.end());
    return make_result("gather_cols", {m, w}, std::move(out), {ai}, [ai, idx, m, n, w](const TensorImpl& o) {
        auto& ga = grad_buffer(*ai);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) ga[i * n + idx[j]] += o.grad[i * w + j];
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_matrix(logits, "cross_entropy");
    const std::size_t m = logits.rows(), k = logits.cols();
    if (labels.size() != m) throw DimensionError("cross_entropy: label count differs from batch size");
    const auto& lv = logits.impl()->values;
    std::vector<double> probs(m * k);
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(k) +
                                ")");
        const double* row = lv.data() + i * k;
        const double mx = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        total += lse - row[y];
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - lse);
    }
    ImplPtr li = logits.impl();
    std::vector<int> ys(labels.begin(), labels.end());
    return make_result("cross_entropy", {1}, {total / static_cast<double>(m)}, {li},
                       [li, probs = std::move(probs), ys = std::move(ys), m, k](const TensorImpl& o) {
                           auto& g = grad_buffer(*li);
                           const double s = o.grad[0] / static_cast<double>(m);
                           for (std::size_t i = 0; i < m; ++i) {
                               for (std::size_t j = 0; j < k; ++j) {
                                   const double onehot = static_cast<int>(j) == ys[i] ? 1.0 : 0.0;
                                   g[i * k + j] += s * (probs[i * k + j] - onehot);
                               }
                           }
                       });
}

Tensor dropout(const Tensor& a, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout probability must be in [0, 1)");
    if (p == 0.0) return a;
    std::vector<double> mask(a.numel());
    const double keep = 1.0 / (1.0 - p);
    for (double& v : mask) v = rng.uniform() < p ? 0.0 : keep;
    return mul(a, Tensor(a.shape(), std::move(mask)));
}

std::size_t ConvGeometry::output_size(std::size_t input) const {
    if (kernel == 0 || stride == 0) throw ContractError("convolution kernel and stride must be positive");
    if (input + 2 * padding < kernel)
        throw DimensionError("convolution input of size " + std::to_string(input) + " is smaller than the kernel");
    return (input + 2 * padding - kernel) / stride + 1;
}

Tensor im2col(const Tensor& x, const ConvGeometry& geom) {
    require_nchw(x, "im2col");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t k = geom.kernel, s = geom.stride;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(geom.padding);
    const std::size_t OH = geom.output_size(H), OW = geom.output_size(W);
    const std::size_t rows = N * OH * OW, cols = C * k * k;
    const auto& xv = x.impl()->values;

    // For each output cell, the flat input index per patch column (or -1 for padding).
    std::vector<std::ptrdiff_t> src(rows * cols, -1);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t oh = 0; oh < OH; ++oh)
            for (std::size_t ow = 0; ow < OW; ++ow) {
                const std::size_t r = (n * OH + oh) * OW + ow;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t kh = 0; kh < k; ++kh)
                        for (std::size_t kw = 0; kw < k; ++kw) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s + kh) - pad;
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s + kw) - pad;
                            if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(H) ||
                                iw >= static_cast<std::ptrdiff_t>(W))
                                continue;
                            src[r * cols + (c * k + kh) * k + kw] =
                                static_cast<std::ptrdiff_t>(((n * C + c) * H + static_cast<std::size_t>(ih)) * W +
                                                            static_cast<std::size_t>(iw));
                        }
            }
    std::vector<double> out(rows * cols, 0.0);
    for (std::size_t q = 0; q < out.size(); ++q)
        if (src[q] >= 0) out[q] = xv[static_cast<std::size_t>(src[q])];
    ImplPtr xi = x.impl();
    return make_result("im2col", {rows, cols}, std::move(out), {xi}, [xi, src = std::move(src)](const TensorImpl& o) {
        auto& gx = grad_buffer(*xi);
        for (std::size_t q = 0; q < src.size(); ++q)
            if (src[q] >= 0) gx[static_cast<std::size_t>(src[q])] += o.grad[q];
    });
}

Tensor rows_to_nchw(const Tensor& rows, std::size_t batch, std::size_t height, std::size_t width) {
    require_matrix(rows, "rows_to_nchw");
    const std::size_t F = rows.cols();
    const std::size_t hw = height * width;
    if (rows.rows() != batch * hw) throw DimensionError("rows_to_nchw: row count does not match N*H*W");
    const auto& rv = rows.impl()->values;
    std::vector<double> out(batch * F * hw);
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t f = 0; f < F; ++f) out[(n * F + f) * hw + p] = rv[(n * hw + p) * F + f];
    ImplPtr ri = rows.impl();
    return make_result("rows_to_nchw", {batch, F, height, width}, std::move(out), {ri},
                       [ri, batch, F, hw](const TensorImpl& o) {
                           auto& g = grad_buffer(*ri);
                           for (std::size_t n = 0; n < batch; ++n)
                               for (std::size_t p = 0; p < hw; ++p)
                                   for (std::size_t f = 0; f < F; ++f)
                                       g[(n * hw + p) * F + f] += o.grad[(n * F + f) * hw + p];
                       });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeometry& geom) {
    require_nchw(x, "conv2d");
    const std::size_t OH = geom.output_size(x.dim(2)), OW = geom.output_size(x.dim(3));
    Tensor cols = im2col(x, geom);
    Tensor out = add(matmul(cols, weight), bias);
    return rows_to_nchw(out, x.dim(0), OH, OW);
}

Tensor upsample_nearest(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    require_nchw(x, "upsample_nearest");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (out_h == 0 || out_w == 0) throw DimensionError("upsample_nearest: empty output");
    std::vector<std::size_t> src(N * C * out_h * out_w);
    for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t i = 0; i < out_h; ++i)
            for (std::size_t j = 0; j < out_w; ++j)
                src[(nc * out_h + i) * out_w + j] = (nc * H + i * H / out_h) * W + j * W / out_w;
    const auto& xv = x.impl()->values;
    std::vector<double> out(src.size());
    for (std::size_t q = 0; q < src.size(); ++q) out[q] = xv[src[q]];
    ImplPtr xi = x.impl();
    return make_result("upsample_nearest", {N, C, out_h, out_w}, std::move(out), {xi},
                       [xi, src = std::move(src)](const TensorImpl& o) {
                           auto& gx = grad_buffer(*xi);
                           for (std::size_t q = 0; q < src.size(); ++q) gx[src[q]] += o.grad[q];
                       });
}

}  // namespace prer
