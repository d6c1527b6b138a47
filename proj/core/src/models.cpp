#include "prer/models.hpp"

#include <algorithm>
#include <cmath>

#include "prer/error.hpp"
#include "prer/ops.hpp"
#include "prer/rng.hpp"

namespace prer::models {

EncoderKind parse_encoder_kind(const std::string& name) {
    if (name == "mlp") return EncoderKind::mlp;
    if (name == "conv3") return EncoderKind::conv3;
    throw ContractError("unknown encoder kind '" + name + "'");
}

std::string to_string(EncoderKind kind) { return kind == EncoderKind::mlp ? "mlp" : "conv3"; }

Distance parse_distance(const std::string& name) {
    if (name == "squared_euclidean") return Distance::squared_euclidean;
    if (name == "cosine") return Distance::cosine;
    throw ContractError("unknown distance '" + name + "'");
}

std::string to_string(Distance d) { return d == Distance::squared_euclidean ? "squared_euclidean" : "cosine"; }

RegularizerDecoder parse_regularizer_decoder(const std::string& name) {
    if (name == "frozen") return RegularizerDecoder::frozen;
    if (name == "current") return RegularizerDecoder::current;
    throw ContractError("unknown regularizer decoder '" + name + "'");
}

std::string to_string(RegularizerDecoder d) { return d == RegularizerDecoder::frozen ? "frozen" : "current"; }

std::vector<std::size_t> EncoderConfig::conv_filters() const {
    std::vector<std::size_t> f;
    for (double base : {12.0, 24.0, 48.0})
        f.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(base * width_factor))));
    return f;
}

namespace {

constexpr ConvGeometry kDownsample{4, 2, 1};
constexpr ConvGeometry kRefine{4, 1, 1};

void require_features(const Tensor& x, std::size_t n, const char* who) {
    if (x.rank() != 2 || x.cols() != n)
        throw DimensionError(std::string(who) + ": expected [batch x " + std::to_string(n) + "], got " +
                             prer::to_string(x.shape()));
}

template <typename Layers>
void collect_all(Layers& layers, const std::string& prefix, ParamRefs& out) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + std::to_string(i), out);
}

}  // namespace

// ---------------------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& config, Rng& rng) : config_(config) {
    if (config_.embedding_dim == 0) throw ContractError("embedding dimension must be positive");
    if (config_.input.numel() == 0) throw ContractError("encoder input shape is empty");
    if (config_.kind == EncoderKind::mlp) {
        std::size_t in = config_.input.numel();
        for (std::size_t h : config_.hidden) {
            dense_.emplace_back(in, h, rng);
            in = h;
        }
        dense_.emplace_back(in, config_.embedding_dim, rng);
        return;
    }
    std::size_t c = config_.input.channels, h = config_.input.height, w = config_.input.width;
    for (std::size_t f : config_.conv_filters()) {
        convs_.emplace_back(c, f, kDownsample, rng);
        h = kDownsample.output_size(h);
        w = kDownsample.output_size(w);
        heights_.push_back(h);
        widths_.push_back(w);
        c = f;
    }
    dense_.emplace_back(c * h * w, config_.embedding_dim, rng);
}

Tensor Encoder::forward(const Tensor& x) const {
    require_features(x, config_.input.numel(), "Encoder");
    if (config_.kind == EncoderKind::mlp) {
        Tensor h = x;
        for (std::size_t i = 0; i + 1 < dense_.size(); ++i) h = relu(dense_[i].forward(h));
        return dense_.back().forward(h);
    }
    const std::size_t n = x.rows();
    Tensor h = reshape(x, {n, config_.input.channels, config_.input.height, config_.input.width});
    for (const auto& conv : convs_) h = relu(conv.forward(h));
    return dense_.back().forward(reshape(h, {n, h.numel() / n}));
}

ParamRefs Encoder::parameters() {
    ParamRefs out;
    collect_all(convs_, "encoder.conv", out);
    collect_all(dense_, "encoder.dense", out);
    return out;
}

Encoder Encoder::snapshot() const {
    Encoder copy = *this;
    detach_storage(copy.parameters());
    return copy;
}

// ---------------------------------------------------------------------------

Decoder::Decoder(const EncoderConfig& config, Rng& rng) : config_(config) {
    if (config_.kind == EncoderKind::mlp) {
        std::size_t in = config_.embedding_dim;
        for (auto it = config_.hidden.rbegin(); it != config_.hidden.rend(); ++it) {
            dense_.emplace_back(in, *it, rng);
            in = *it;
        }
        dense_.emplace_back(in, config_.input.numel(), rng);
        return;
    }
    const auto filters = config_.conv_filters();
    std::size_t h = config_.input.height, w = config_.input.width;
    heights_.push_back(h);
    widths_.push_back(w);
    for (int i = 0; i < 3; ++i) {
        h = kDownsample.output_size(h);
        w = kDownsample.output_size(w);
        heights_.push_back(h);
        widths_.push_back(w);
    }
    // heights_ = {H, h1, h2, h3}
    dense_.emplace_back(config_.embedding_dim, filters[2] * heights_[3] * widths_[3], rng);
    convs_.emplace_back(filters[2], filters[1], kRefine, rng);
    convs_.emplace_back(filters[1], filters[0], kRefine, rng);
    convs_.emplace_back(filters[0], config_.input.channels, kRefine, rng);
}

Tensor Decoder::forward(const Tensor& z) const {
    require_features(z, config_.embedding_dim, "Decoder");
    if (config_.kind == EncoderKind::mlp) {
        Tensor h = z;
        for (std::size_t i = 0; i + 1 < dense_.size(); ++i) h = relu(dense_[i].forward(h));
        return sigmoid(dense_.back().forward(h));
    }
    const std::size_t n = z.rows();
    const auto filters = config_.conv_filters();
    Tensor h = relu(dense_.front().forward(z));
    h = reshape(h, {n, filters[2], heights_[3], widths_[3]});
    for (std::size_t s = 0; s < 3; ++s) {
        // A 4x4 kernel with stride 1 and padding 1 shrinks by one pixel.
        const std::size_t th = heights_[2 - s], tw = widths_[2 - s];
        h = convs_[s].forward(upsample_nearest(h, th + 1, tw + 1));
        h = s + 1 < 3 ? relu(h) : sigmoid(h);
    }
    return reshape(h, {n, config_.input.numel()});
}

ParamRefs Decoder::parameters() {
    ParamRefs out;
    collect_all(dense_, "decoder.dense", out);
    collect_all(convs_, "decoder.conv", out);
    return out;
}

Decoder Decoder::snapshot() const {
    Decoder copy = *this;
    detach_storage(copy.parameters());
    return copy;
}

// ---------------------------------------------------------------------------

Head::Head(std::size_t embedding_dim, std::size_t num_classes, double dropout, Rng& rng) : dropout_(dropout) {
    if (num_classes == 0) throw ContractError("a head needs at least one class");
    if (dropout < 0.0 || dropout >= 1.0) throw ContractError("dropout must lie in [0, 1)");
    const std::size_t w1 = std::max<std::size_t>(1, embedding_dim / 2);
    const std::size_t w2 = std::max<std::size_t>(1, w1 / 2);
    layers_.emplace_back(embedding_dim, w1, rng);
    layers_.emplace_back(w1, w2, rng);
    layers_.emplace_back(w2, num_classes, rng);
}

Tensor Head::forward(const Tensor& z, Rng* dropout_rng) const {
    Tensor h = z;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i].forward(h);
        if (i + 1 < layers_.size()) {
            h = relu(h);
            if (dropout_rng != nullptr) h = dropout(h, dropout_, *dropout_rng);
        }
    }
    return h;
}

std::vector<int> Head::predict(const Tensor& z) const {
    autograd::NoGradGuard guard;
    Tensor logits = forward(z);
    std::vector<int> out(logits.rows());
    const std::size_t k = logits.cols();
    const auto v = logits.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto row = v.subspan(i * k, k);
        out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

ParamRefs Head::parameters() {
    ParamRefs out;
    collect_all(layers_, "head.dense", out);
    return out;
}

std::vector<std::size_t> Head::widths() const {
    std::vector<std::size_t> w;
    if (layers_.empty()) return w;
    w.push_back(layers_.front().in_features());
    for (const auto& l : layers_) w.push_back(l.out_features());
    return w;
}

Head Head::snapshot() const {
    Head copy = *this;
    detach_storage(copy.parameters());
    return copy;
}

// ---------------------------------------------------------------------------

void LossConfig::validate() const {
    if (!(std::isfinite(beta) && beta >= 0.0)) throw ConfigError("beta", "must be finite and non-negative");
    if (!(std::isfinite(lambda) && lambda >= 0.0)) throw ConfigError("lambda", "must be finite and non-negative");
}

Tensor reconstruction_error(const Tensor& x, const Tensor& x_hat) {
    if (x.shape() != x_hat.shape()) throw DimensionError("reconstruction_error: shape mismatch");
    return mean(sum_cols(square(sub(x, x_hat))));
}

Tensor autoencoder_loss(const Encoder& encoder, const Decoder& decoder, const Tensor& x, double beta) {
    Tensor z = encoder.forward(x);
    Tensor loss = reconstruction_error(x, decoder.forward(z));
    if (beta > 0.0) loss = add(loss, scale(mean(abs(z)), beta));
    return loss;
}

Tensor embedding_distance(const Tensor& target, const Tensor& z, Distance distance) {
    if (target.shape() != z.shape()) throw DimensionError("embedding_distance: shape mismatch");
    if (distance == Distance::squared_euclidean) return sum_cols(square(sub(z, target)));
    // 1 - cos(target, z); the small floor keeps zero vectors finite.
    Tensor dot = sum_cols(mul(z, target));
    Tensor nz = sqrt(add(sum_cols(square(z)), 1e-12));
    Tensor nt = sqrt(add(sum_cols(square(target)), 1e-12));
    return add(neg(div(dot, mul(nz, nt))), 1.0);
}

Tensor embedding_regularizer(const Encoder& encoder, const Decoder& decoder, const Tensor& zhat,
                             const LossConfig& config) {
    const Tensor target = zhat.detach();
    Tensor x_hat;
    if (config.regularize_decoder) {
        x_hat = decoder.forward(target);
    } else {
        autograd::NoGradGuard guard;
        x_hat = decoder.forward(target);
    }
    return mean(embedding_distance(target, encoder.forward(x_hat), config.distance));
}

Tensor embedding_regularizer(const Encoder& encoder, const Tensor& x_hat, const Tensor& zhat, Distance distance) {
    return mean(embedding_distance(zhat.detach(), encoder.forward(x_hat.detach()), distance));
}

Tensor classification_loss(const Head& head, const Encoder& encoder, const Tensor& x, std::span<const int> labels,
                           bool train_encoder, Rng* dropout_rng) {
    Tensor z;
    if (train_encoder) {
        z = encoder.forward(x);
    } else {
        autograd::NoGradGuard guard;
        z = encoder.forward(x);
    }
    return cross_entropy(head.forward(z, dropout_rng), labels);
}

}  // namespace prer::models
