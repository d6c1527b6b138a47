#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prer/ops.hpp"
#include "prer/tensor.hpp"

namespace prer {

class Rng;

struct NamedTensor {
    std::string name;
    Tensor* tensor;
};

/// Mutable references to the tensors a module owns, in a stable order.
using ParamRefs = std::vector<NamedTensor>;

std::vector<Tensor> tensors_of(const ParamRefs& refs);
/// Total number of stored scalars.
std::size_t count_values(const ParamRefs& refs);
/// FNV-1a over names, shapes, and the raw bytes of every value.
std::uint64_t checksum(const ParamRefs& refs);
/// Replaces every referenced tensor with an independent clone.
void detach_storage(const ParamRefs& refs);

/// Fully connected layer y = x W + b, W of shape [in, out].
/// Initialised uniform(-1/sqrt(in), 1/sqrt(in)).
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in_features, std::size_t out_features, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamRefs& out);

    std::size_t in_features() const noexcept { return in_; }
    std::size_t out_features() const noexcept { return out_; }

    Tensor weight;
    Tensor bias;

private:
    std::size_t in_ = 0;
    std::size_t out_ = 0;
};

/// 2-D convolution on [N, C, H, W] via im2col.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::size_t in_channels, std::size_t out_channels, ConvGeometry geom, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamRefs& out);

    const ConvGeometry& geometry() const noexcept { return geom_; }
    std::size_t in_channels() const noexcept { return in_; }
    std::size_t out_channels() const noexcept { return out_; }

    Tensor weight;  // [C*k*k, F]
    Tensor bias;    // [1, F]

private:
    std::size_t in_ = 0;
    std::size_t out_ = 0;
    ConvGeometry geom_;
};

}  // namespace prer
