#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prer/checkpoint.hpp"
#include "prer/nn.hpp"
#include "prer/tensor.hpp"

namespace prer {
class Rng;
}

namespace prer::flow {

/// `inverse` maps data to latent (normalizing direction, used for density
/// evaluation and training); `forward` maps latent to data (sampling).
enum class Direction { forward, inverse };

/// `train` normalizes with batch statistics and updates running estimates;
/// `eval` uses running estimates only.
enum class Mode { train, eval };

/// How a coupling layer turns the conditioner's raw output r into a scale:
/// raw_exp gives exp(r), sigmoid_shift gives sigmoid(r + 2).
enum class ScaleMode { raw_exp, sigmoid_shift };

/// Which coupling layers receive the one-hot class condition.
enum class ConditionPlacement { first_per_level, first_only, all };

ScaleMode parse_scale_mode(const std::string& name);
std::string to_string(ScaleMode mode);
ConditionPlacement parse_condition_placement(const std::string& name);
std::string to_string(ConditionPlacement placement);

/// Output of an invertible layer: transformed batch plus per-row log|det J|
/// as a [batch x 1] column.
struct FlowResult {
    Tensor value;
    Tensor log_det;
};

/// Isotropic standard normal base density.
class GaussianPrior {
public:
    explicit GaussianPrior(std::size_t dim = 0) : dim_(dim) {}

    std::size_t dim() const noexcept { return dim_; }
    /// -0.5 * (|u|^2 + d log 2pi) per row, as [batch x 1].
    Tensor log_prob(const Tensor& u) const;
    Tensor sample(std::size_t n, Rng& rng) const;

private:
    std::size_t dim_;
};

/// Affine coupling layer.
///
/// The input is split into a pass-through part `a` (ceil(d/2) columns) and a
/// transformed part `b` (floor(d/2) columns). A conditioner network
/// a (+ one-hot condition) -> d hidden units -> (raw scale, shift) of width |b|
/// produces the affine map. In the inverse direction
///     c_b = s(raw) * b + shift,   log_det = sum log s(raw);
/// the forward direction undoes it. With `swap_roles` the transformed part
/// is the leading floor(d/2) columns instead of the trailing ones. Column
/// positions are preserved either way.
class AffineCoupling {
public:
    AffineCoupling() = default;
    AffineCoupling(std::size_t dim, std::size_t condition_width, ScaleMode scale_mode, bool swap_roles, Rng& rng);

    FlowResult apply(const Tensor& u, const Tensor* condition, Direction direction) const;

    std::size_t dim() const noexcept { return dim_; }
    std::size_t pass_width() const noexcept { return dim_ - transform_width(); }
    std::size_t transform_width() const noexcept { return dim_ / 2; }
    std::size_t condition_width() const noexcept { return condition_width_; }
    ScaleMode scale_mode() const noexcept { return scale_mode_; }
    bool swap_roles() const noexcept { return swap_; }

    void collect(const std::string& prefix, ParamRefs& out);

    Linear hidden;
    Linear log_scale;
    Linear shift;

private:
    std::size_t dim_ = 0;
    std::size_t condition_width_ = 0;
    ScaleMode scale_mode_ = ScaleMode::sigmoid_shift;
    bool swap_ = false;
};

/// Batch normalization used as an invertible layer.
///
/// Normalizing direction: (u - mean) / sqrt(std^2 + eps), log_det =
/// -0.5 * sum log(std^2 + eps). In train mode the batch mean and (biased)
/// batch standard deviation are used and the running estimates updated as
/// r <- m r + (1 - m) batch; the first batch initializes them directly.
class InvertibleBatchNorm {
public:
    InvertibleBatchNorm() = default;
    InvertibleBatchNorm(std::size_t dim, double momentum, double epsilon);

    /// Train mode is only meaningful in the inverse direction and requires
    /// at least two rows.
    FlowResult apply(const Tensor& u, Direction direction, Mode mode);
    /// Running-statistics transform; throws if never initialized.
    FlowResult apply_eval(const Tensor& u, Direction direction) const;

    bool initialized() const noexcept { return initialized_; }
    void set_running(std::vector<double> mean, std::vector<double> std);
    std::span<const double> running_mean() const { return running_mean_.values(); }
    std::span<const double> running_std() const { return running_std_.values(); }
    double momentum() const noexcept { return momentum_; }
    double epsilon() const noexcept { return epsilon_; }
    std::size_t dim() const noexcept { return dim_; }

    void collect_buffers(const std::string& prefix, ParamRefs& out);

private:
    std::size_t dim_ = 0;
    double momentum_ = 0.9;
    double epsilon_ = 1e-5;
    bool initialized_ = false;
    Tensor running_mean_;
    Tensor running_std_;
};

/// Fixed column permutation. Inverse direction: out[:, i] = u[:, perm[i]].
class Permutation {
public:
    Permutation() = default;
    explicit Permutation(std::vector<std::size_t> perm);
    static Permutation random(std::size_t dim, Rng& rng);
    static Permutation identity(std::size_t dim);

    FlowResult apply(const Tensor& u, Direction direction) const;

    const std::vector<std::size_t>& indices() const noexcept { return perm_; }
    const std::vector<std::size_t>& inverse_indices() const noexcept { return inverse_; }
    std::size_t dim() const noexcept { return perm_.size(); }

private:
    std::vector<std::size_t> perm_;
    std::vector<std::size_t> inverse_;
};

/// Batch norm -> coupling -> permutation, in the inverse direction.
struct FlowBlock {
    InvertibleBatchNorm norm;
    AffineCoupling coupling;
    Permutation permutation;
};

struct FlowConfig {
    std::size_t dim = 2;
    std::size_t levels = 2;
    std::size_t blocks_per_level = 10;
    /// Width of the one-hot condition; 0 builds an unconditional flow.
    std::size_t num_classes = 0;
    ScaleMode scale_mode = ScaleMode::sigmoid_shift;
    ConditionPlacement condition_placement = ConditionPlacement::first_per_level;
    double bn_momentum = 0.9;
    double bn_epsilon = 1e-5;

    /// Dimension processed by each level; throws ConfigError when a level
    /// would have fewer than two dimensions.
    std::vector<std::size_t> level_dims() const;
};

/// Multi-scale conditional flow.
///
/// In the inverse direction each non-final level factors its first
/// ceil(d_level / 2) columns out to the latent; the final level emits the
/// rest. The latent is laid out as concat(factored_0, ..., final).
class FlowModel {
public:
    FlowModel() = default;
    FlowModel(const FlowConfig& config, Rng& rng);

    const FlowConfig& config() const noexcept { return config_; }
    std::size_t dim() const noexcept { return config_.dim; }
    const GaussianPrior& prior() const noexcept { return prior_; }

    /// Data -> latent with accumulated log|det J| per row. `classes` holds one
    /// global class id per row (empty for an unconditional flow).
    FlowResult to_latent(const Tensor& z, std::span<const int> classes, Mode mode);
    FlowResult to_latent_eval(const Tensor& z, std::span<const int> classes) const;
    /// Latent -> data using running batch-norm statistics.
    Tensor from_latent(const Tensor& u, std::span<const int> classes) const;

    /// log p(z | class) per row, shape [batch].
    Tensor log_prob(const Tensor& z, std::span<const int> classes, Mode mode);
    Tensor log_prob_eval(const Tensor& z, std::span<const int> classes) const;
    /// Mean negative log-likelihood in train mode.
    Tensor nll_loss(const Tensor& z, std::span<const int> classes);

    Tensor sample(std::span<const int> classes, Rng& rng) const;
    Tensor sample(int cls, std::size_t n, Rng& rng) const;

    bool initialized() const;

    /// Trainable conditioner weights.
    ParamRefs parameters();
    /// Trainable weights plus batch-norm running statistics.
    ParamRefs state();

    std::vector<std::vector<FlowBlock>>& levels() noexcept { return levels_; }
    const std::vector<std::vector<FlowBlock>>& levels() const noexcept { return levels_; }

    /// Deep copy with independent storage.
    FlowModel snapshot() const;

    void save_to(Checkpoint& ckpt, const std::string& prefix = "flow");
    static FlowModel load_from(const Checkpoint& ckpt, const std::string& prefix = "flow");

private:
    Tensor one_hot(std::span<const int> classes, std::size_t rows) const;
    bool conditioned(std::size_t level, std::size_t block) const;
    template <typename Self>
    static FlowResult inverse_pass(Self& self, const Tensor& z, std::span<const int> classes, Mode mode);

    FlowConfig config_;
    GaussianPrior prior_;
    std::vector<std::size_t> level_dims_;
    std::vector<std::vector<FlowBlock>> levels_;
};

}  // namespace prer::flow
