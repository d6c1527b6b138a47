#include "prer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "prer/error.hpp"
#include "prer/rng.hpp"

namespace prer {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (std::size_t d : shape)
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
    if (prer::numel(shape) != values.size())
        throw DimensionError("shape " + to_string(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    impl_ = std::make_shared<detail::TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = prer::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
    std::vector<double> v(prer::numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::normal(Shape shape, Rng& rng, bool requires_grad) {
    std::vector<double> v(prer::numel(shape));
    for (double& x : v) x = rng.normal();
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

detail::TensorImpl& Tensor::checked_impl() const {
    if (!impl_) throw ContractError("use of an undefined tensor");
    return *impl_;
}

const Shape& Tensor::shape() const { return checked_impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) throw DimensionError("axis out of range for shape " + to_string(s));
    return s[axis];
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw DimensionError("expected a matrix, got shape " + to_string(shape()));
    return shape()[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw DimensionError("expected a matrix, got shape " + to_string(shape()));
    return shape()[1];
}

std::span<const double> Tensor::values() const { return checked_impl().values; }

std::span<double> Tensor::data() { return checked_impl().values; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on a tensor of shape " + to_string(shape()));
    return values()[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

bool Tensor::requires_grad() const { return checked_impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
    checked_impl().requires_grad = flag;
    return *this;
}

bool Tensor::is_leaf() const { return checked_impl().is_leaf; }

bool Tensor::has_grad() const { return !checked_impl().grad.empty(); }

std::span<const double> Tensor::grad() const { return checked_impl().grad; }

std::span<double> Tensor::grad_data() { return checked_impl().grad; }

void Tensor::zero_grad() {
    auto& g = checked_impl().grad;
    std::fill(g.begin(), g.end(), 0.0);
}

void Tensor::clear_grad() {
    auto& g = checked_impl().grad;
    g.clear();
    g.shrink_to_fit();
}

Tensor Tensor::detach() const {
    const auto& impl = checked_impl();
    return Tensor(impl.shape, impl.values, false);
}

Tensor Tensor::clone() const {
    const auto& impl = checked_impl();
    return Tensor(impl.shape, impl.values, impl.requires_grad);
}

bool Tensor::all_finite() const {
    for (double v : values())
        if (!std::isfinite(v)) return false;
    return true;
}

namespace autograd {

namespace {

thread_local Tape g_tape;
thread_local bool g_grad_enabled = true;
thread_local bool g_checked = false;

}  // namespace

Tape& tape() { return g_tape; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool checked_mode() { return g_checked; }
void set_checked_mode(bool on) { g_checked = on; }

CheckedModeGuard::CheckedModeGuard(bool on) : previous_(g_checked) { g_checked = on; }
CheckedModeGuard::~CheckedModeGuard() { g_checked = previous_; }

void check_finite(std::span<const double> values, const char* where) {
    if (!g_checked) return;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i]))
            throw NumericError(std::string("non-finite value in ") + where + " at index " + std::to_string(i));
    }
}

std::vector<double>& grad_buffer(detail::TensorImpl& impl) {
    if (impl.grad.empty()) impl.grad.assign(impl.values.size(), 0.0);
    return impl.grad;
}

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<ImplPtr> inputs, BackwardFn backward) {
    check_finite(values, op);
    Tensor out(std::move(shape), std::move(values));
    if (!g_grad_enabled) return out;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in->requires_grad;
    if (!needs) return out;
    out.impl()->requires_grad = true;
    out.impl()->is_leaf = false;
    g_tape.record(TapeEntry{op, std::move(inputs), out.impl(), std::move(backward)});
    return out;
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    if (!loss.requires_grad() || loss.is_leaf())
        throw ContractError("backward(): loss is not connected to the active tape");

    auto& entries = g_tape.entries();
    grad_buffer(*loss.impl())[0] = 1.0;
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        if (it->output->grad.empty()) continue;
        check_finite(it->output->grad, it->op);
        it->backward(*it->output);
    }
    for (const auto& entry : entries) {
        for (const auto& in : entry.inputs) {
            if (in->requires_grad && in->is_leaf) {
                grad_buffer(*in);
                check_finite(in->grad, "leaf gradient");
            }
        }
    }
    for (const auto& entry : entries) {
        entry.output->grad.clear();
        entry.output->grad.shrink_to_fit();
    }
    g_tape.clear();
}

}  // namespace autograd

}  // namespace prer
