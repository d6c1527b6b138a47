#include "prer/nn.hpp"

#include <cmath>
#include <cstring>

#include "prer/error.hpp"
#include "prer/rng.hpp"

namespace prer {

namespace {

void fnv(std::uint64_t& h, const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
}

}  // namespace

std::vector<Tensor> tensors_of(const ParamRefs& refs) {
    std::vector<Tensor> out;
    out.reserve(refs.size());
    for (const auto& r : refs) out.push_back(*r.tensor);
    return out;
}

std::size_t count_values(const ParamRefs& refs) {
    std::size_t n = 0;
    for (const auto& r : refs) n += r.tensor->numel();
    return n;
}

std::uint64_t checksum(const ParamRefs& refs) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& r : refs) {
        fnv(h, r.name.data(), r.name.size());
        for (std::size_t d : r.tensor->shape()) fnv(h, &d, sizeof d);
        const auto v = r.tensor->values();
        fnv(h, v.data(), v.size_bytes());
    }
    return h;
}

void detach_storage(const ParamRefs& refs) {
    for (const auto& r : refs) *r.tensor = r.tensor->clone();
}

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& rng)
    : in_(in_features), out_(out_features) {
    if (in_ == 0 || out_ == 0) throw DimensionError("Linear: zero-sized layer");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    weight = Tensor::uniform({in_, out_}, -bound, bound, rng, true);
    bias = Tensor::uniform({1, out_}, -bound, bound, rng, true);
}

Tensor Linear::forward(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != in_)
        throw DimensionError("Linear: expected [batch x " + std::to_string(in_) + "], got " + to_string(x.shape()));
    return add(matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, ParamRefs& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
}

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, ConvGeometry geom, Rng& rng)
    : in_(in_channels), out_(out_channels), geom_(geom) {
    const std::size_t fan_in = in_ * geom_.kernel * geom_.kernel;
    if (fan_in == 0 || out_ == 0) throw DimensionError("Conv2d: zero-sized layer");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    weight = Tensor::uniform({fan_in, out_}, -bound, bound, rng, true);
    bias = Tensor::uniform({1, out_}, -bound, bound, rng, true);
}

Tensor Conv2d::forward(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != in_)
        throw DimensionError("Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                             to_string(x.shape()));
    return conv2d(x, weight, bias, geom_);
}

void Conv2d::collect(const std::string& prefix, ParamRefs& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
}

}  // namespace prer
