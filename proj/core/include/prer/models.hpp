#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "prer/checkpoint.hpp"
#include "prer/nn.hpp"
#include "prer/tensor.hpp"

namespace prer {
class Rng;
}

namespace prer::models {

enum class EncoderKind { mlp, conv3 };

EncoderKind parse_encoder_kind(const std::string& name);
std::string to_string(EncoderKind kind);

struct ImageShape {
    std::size_t channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;

    std::size_t numel() const noexcept { return channels * height * width; }
};

struct EncoderConfig {
    EncoderKind kind = EncoderKind::mlp;
    ImageShape input;
    std::size_t embedding_dim = 50;
    /// Hidden widths of the mlp encoder (mirrored by the decoder).
    std::vector<std::size_t> hidden = {256};
    /// Multiplier on the conv3 filter counts (12, 24, 48).
    double width_factor = 1.0;

    std::vector<std::size_t> conv_filters() const;
};

/// Shared encoder E: flat images [batch x C*H*W] -> embeddings [batch x d].
///
/// mlp: Linear/ReLU stack over `hidden`, then a linear projection to d.
/// conv3: three 4x4 stride-2 convolutions (padding 1) with ReLU, then a
/// linear projection of the flattened feature map to d.
class Encoder {
public:
    Encoder() = default;
    Encoder(const EncoderConfig& config, Rng& rng);

    Tensor forward(const Tensor& x) const;
    ParamRefs parameters();
    const EncoderConfig& config() const noexcept { return config_; }
    Encoder snapshot() const;

    /// Spatial size after each convolution (conv3 only).
    const std::vector<std::size_t>& feature_heights() const noexcept { return heights_; }
    const std::vector<std::size_t>& feature_widths() const noexcept { return widths_; }

private:
    EncoderConfig config_;
    std::vector<Linear> dense_;
    std::vector<Conv2d> convs_;
    std::vector<std::size_t> heights_;
    std::vector<std::size_t> widths_;
};

/// Decoder D: embeddings -> flat images in (0, 1).
///
/// mlp: mirror of the encoder stack with a sigmoid output.
/// conv3: linear layer to the encoder's last feature map, then three stages
/// of nearest-neighbour upsampling followed by a 4x4 convolution that lands
/// exactly on the corresponding encoder resolution.
class Decoder {
public:
    Decoder() = default;
    Decoder(const EncoderConfig& config, Rng& rng);

    Tensor forward(const Tensor& z) const;
    ParamRefs parameters();
    Decoder snapshot() const;

private:
    EncoderConfig config_;
    std::vector<Linear> dense_;
    std::vector<Conv2d> convs_;
    std::vector<std::size_t> heights_;
    std::vector<std::size_t> widths_;
};

/// Task-specific classifier S_t: three fully connected layers, each
/// halving its input width, the last emitting one logit per class; dropout
/// between consecutive layers.
class Head {
public:
    Head() = default;
    Head(std::size_t embedding_dim, std::size_t num_classes, double dropout, Rng& rng);

    /// Dropout applies only when `dropout_rng` is non-null (training).
    Tensor forward(const Tensor& z, Rng* dropout_rng = nullptr) const;
    std::vector<int> predict(const Tensor& z) const;
    ParamRefs parameters();
    /// Widths of the layer chain, e.g. {50, 25, 12, 2}.
    std::vector<std::size_t> widths() const;
    std::size_t num_classes() const noexcept { return layers_.empty() ? 0 : layers_.back().out_features(); }
    Head snapshot() const;

private:
    std::vector<Linear> layers_;
    double dropout_ = 0.0;
};

enum class Distance { squared_euclidean, cosine };

Distance parse_distance(const std::string& name);
std::string to_string(Distance d);

/// Decoder that maps replayed embeddings back to images for the regularizer:
/// the snapshot taken at the end of the previous task, or the one in training.
enum class RegularizerDecoder { frozen, current };

RegularizerDecoder parse_regularizer_decoder(const std::string& name);
std::string to_string(RegularizerDecoder d);

struct LossConfig {
    /// L1 sparsity weight on embeddings.
    double beta = 1e-3;
    /// Weight of the replayed-embedding regularizer.
    double lambda = 1.0;
    Distance distance = Distance::squared_euclidean;
    RegularizerDecoder decoder = RegularizerDecoder::frozen;
    /// With the current decoder: when false the regularizer's gradient
    /// reaches the encoder only.
    bool regularize_decoder = true;

    void validate() const;
};

/// Mean over rows of the squared Euclidean distance between x and x_hat.
Tensor reconstruction_error(const Tensor& x, const Tensor& x_hat);

/// mean_i |x_i - D(E(x_i))|^2 + beta * mean |E(x)|.
Tensor autoencoder_loss(const Encoder& encoder, const Decoder& decoder, const Tensor& x, double beta);

/// Row-wise distance [batch x 1] between a constant target and z.
Tensor embedding_distance(const Tensor& target, const Tensor& z, Distance distance);

/// mean_i d(zhat_i, E(D(zhat_i))) with zhat held constant.
Tensor embedding_regularizer(const Encoder& encoder, const Decoder& decoder, const Tensor& zhat,
                             const LossConfig& config);
/// Same with x_hat = D(zhat) already decoded; only E receives gradients.
Tensor embedding_regularizer(const Encoder& encoder, const Tensor& x_hat, const Tensor& zhat, Distance distance);

/// Mean cross-entropy of S_t(E(x)) against within-task labels. The encoder
/// output is detached unless `train_encoder` is set.
Tensor classification_loss(const Head& head, const Encoder& encoder, const Tensor& x, std::span<const int> labels,
                           bool train_encoder, Rng* dropout_rng);

}  // namespace prer::models
