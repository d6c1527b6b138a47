#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "prer/tensor.hpp"

namespace prer {

class Rng;

// Binary elementwise ops. Shapes must be equal, or matrices whose dimensions
// are equal or 1 (row/column broadcast), or one side must hold one element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// log(sigmoid(a)) computed without overflow.
Tensor log_sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
/// Natural log. In checked mode a non-positive input raises DomainError;
/// otherwise NaN/-Inf propagate.
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// [m x n] -> [m x 1]
Tensor sum_cols(const Tensor& a);
/// [m x n] -> [1 x n]
Tensor sum_rows(const Tensor& a);
Tensor mean_rows(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Columns [begin, end) of a matrix.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
/// Rows [begin, end) of a matrix.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
/// out[:, i] = a[:, index[i]]
Tensor gather_cols(const Tensor& a, std::span<const std::size_t> index);

/// Mean softmax cross-entropy of `logits` [m x k] against class indices.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Inverted dropout: zeroes entries with probability `p` and rescales the
/// rest by 1/(1-p). Identity when `p == 0`.
Tensor dropout(const Tensor& a, double p, Rng& rng);

struct ConvGeometry {
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t output_size(std::size_t input) const;
};

/// [N, C, H, W] -> [N*OH*OW, C*k*k] patch matrix (zero padding).
Tensor im2col(const Tensor& x, const ConvGeometry& geom);
/// [N*OH*OW, F] -> [N, F, OH, OW]
Tensor rows_to_nchw(const Tensor& rows, std::size_t batch, std::size_t height, std::size_t width);
/// 2-D convolution through im2col + matmul. `weight` is [C*k*k, F], `bias` [1, F].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeometry& geom);
/// Nearest-neighbour resize of [N, C, H, W] to [N, C, out_h, out_w].
Tensor upsample_nearest(const Tensor& x, std::size_t out_h, std::size_t out_w);

}  // namespace prer
