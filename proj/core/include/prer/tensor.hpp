#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace prer {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    // Empty means "no gradient populated".
    std::vector<double> grad;
    bool requires_grad = false;
    bool is_leaf = true;
};

}  // namespace detail

/// Dense row-major f64 array with an optional gradient slot.
///
/// `Tensor` is a shared handle: copies alias the same storage. Use `clone()`
/// for an independent copy and `detach()` for a constant view of the values.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);
    static Tensor normal(Shape shape, Rng& rng, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return values().size(); }
    /// Rank-2 accessors.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const;
    /// Mutable access to the value buffer. Writes are not recorded on the tape.
    std::span<double> data();
    double item() const;
    double at(std::size_t i) const { return values()[i]; }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> grad_data();
    void zero_grad();
    void clear_grad();

    /// Constant tensor sharing no history with this one (values copied).
    Tensor detach() const;
    /// Independent leaf with copied values and the same requires_grad flag.
    Tensor clone() const;

    bool is_same(const Tensor& other) const noexcept { return impl_ == other.impl_; }
    bool all_finite() const;

    const std::shared_ptr<detail::TensorImpl>& impl() const noexcept { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    detail::TensorImpl& checked_impl() const;

    std::shared_ptr<detail::TensorImpl> impl_;
};

namespace autograd {

using ImplPtr = std::shared_ptr<detail::TensorImpl>;
/// Receives the op's output (values and populated grad) and accumulates into
/// the grad buffers of its inputs.
using BackwardFn = std::function<void(const detail::TensorImpl& out)>;

struct TapeEntry {
    const char* op;
    std::vector<ImplPtr> inputs;
    ImplPtr output;
    BackwardFn backward;
};

/// Ordered record of differentiable operations executed on this thread.
class Tape {
public:
    void record(TapeEntry entry) { entries_.push_back(std::move(entry)); }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    void clear() { entries_.clear(); }
    const std::vector<TapeEntry>& entries() const noexcept { return entries_; }

private:
    std::vector<TapeEntry> entries_;
};

Tape& tape();

bool grad_enabled();

/// Disables recording for the current scope.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool checked_mode();
void set_checked_mode(bool on);

class CheckedModeGuard {
public:
    explicit CheckedModeGuard(bool on = true);
    ~CheckedModeGuard();
    CheckedModeGuard(const CheckedModeGuard&) = delete;
    CheckedModeGuard& operator=(const CheckedModeGuard&) = delete;

private:
    bool previous_;
};

/// Throws NumericError if checked mode is on and `values` holds NaN/Inf.
void check_finite(std::span<const double> values, const char* where);

/// Gradient buffer of `impl`, allocated as zeros on first use.
std::vector<double>& grad_buffer(detail::TensorImpl& impl);

/// Wraps freshly computed values as an op result and records `backward`
/// when gradients are enabled and any input requires them.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<ImplPtr> inputs, BackwardFn backward);

/// Reverse pass from a scalar `loss`. Populates the grad buffer of every
/// requires_grad leaf reached by the tape, then clears the tape.
void backward(const Tensor& loss);

}  // namespace autograd

}  // namespace prer
