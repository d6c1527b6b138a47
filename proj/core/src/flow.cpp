#include "prer/flow.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <type_traits>

#include "prer/error.hpp"
#include "prer/ops.hpp"
#include "prer/rng.hpp"

namespace prer::flow {

ScaleMode parse_scale_mode(const std::string& name) {
    if (name == "raw_exp") return ScaleMode::raw_exp;
    if (name == "sigmoid_shift") return ScaleMode::sigmoid_shift;
    throw ContractError("unknown scale mode '" + name + "'");
}

std::string to_string(ScaleMode mode) { return mode == ScaleMode::raw_exp ? "raw_exp" : "sigmoid_shift"; }

ConditionPlacement parse_condition_placement(const std::string& name) {
    if (name == "first_per_level") return ConditionPlacement::first_per_level;
    if (name == "first_only") return ConditionPlacement::first_only;
    if (name == "all") return ConditionPlacement::all;
    throw ContractError("unknown condition placement '" + name + "'");
}

std::string to_string(ConditionPlacement placement) {
    switch (placement) {
        case ConditionPlacement::first_per_level: return "first_per_level";
        case ConditionPlacement::first_only: return "first_only";
        case ConditionPlacement::all: return "all";
    }
    return "first_per_level";
}

namespace {

void require_width(const Tensor& u, std::size_t dim, const char* who) {
    if (u.rank() != 2 || u.cols() != dim)
        throw DimensionError(std::string(who) + ": expected [batch x " + std::to_string(dim) + "], got " +
                             prer::to_string(u.shape()));
}

Tensor broadcast_rows(const Tensor& scalar, std::size_t rows) {
    return add(Tensor::zeros({rows, 1}), scalar);
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor GaussianPrior::log_prob(const Tensor& u) const {
    require_width(u, dim_, "GaussianPrior::log_prob");
    const double norm = static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi);
    return scale(add(sum_cols(square(u)), norm), -0.5);
}

Tensor GaussianPrior::sample(std::size_t n, Rng& rng) const { return Tensor::normal({n, dim_}, rng); }

// ---------------------------------------------------------------------------

AffineCoupling::AffineCoupling(std::size_t dim, std::size_t condition_width, ScaleMode scale_mode, bool swap_roles,
                               Rng& rng)
    : dim_(dim), condition_width_(condition_width), scale_mode_(scale_mode), swap_(swap_roles) {
    if (dim < 2) throw DimensionError("AffineCoupling needs at least two dimensions");
    hidden = Linear(pass_width() + condition_width_, dim_, rng);
    log_scale = Linear(dim_, transform_width(), rng);
    shift = Linear(dim_, transform_width(), rng);
}

FlowResult AffineCoupling::apply(const Tensor& u, const Tensor* condition, Direction direction) const {
    require_width(u, dim_, "AffineCoupling");
    const std::size_t tw = transform_width();
    const std::size_t pw = pass_width();
    Tensor a = swap_ ? slice_cols(u, tw, dim_) : slice_cols(u, 0, pw);
    Tensor b = swap_ ? slice_cols(u, 0, tw) : slice_cols(u, pw, dim_);

    Tensor input = a;
    if (condition_width_ > 0) {
        if (condition == nullptr) throw ContractError("conditioned coupling layer called without a condition");
        if (condition->rank() != 2 || condition->cols() != condition_width_ || condition->rows() != u.rows())
            throw DimensionError("coupling condition has shape " + prer::to_string(condition->shape()));
        input = concat_cols({a, *condition});
    } else if (condition != nullptr) {
        throw ContractError("condition passed to an unconditioned coupling layer");
    }

    Tensor h = relu(hidden.forward(input));
    Tensor raw = log_scale.forward(h);
    Tensor t = shift.forward(h);
    Tensor s, log_s;
    if (scale_mode_ == ScaleMode::raw_exp) {
        s = exp(raw);
        log_s = raw;
    } else {
        Tensor shifted = add(raw, 2.0);
        s = sigmoid(shifted);
        log_s = log_sigmoid(shifted);
    }

    Tensor c, log_det;
    if (direction == Direction::inverse) {
        c = add(mul(s, b), t);
        log_det = sum_cols(log_s);
    } else {
        c = div(sub(b, t), s);
        log_det = neg(sum_cols(log_s));
    }
    Tensor out = swap_ ? concat_cols({c, a}) : concat_cols({a, c});
    return {out, log_det};
}

void AffineCoupling::collect(const std::string& prefix, ParamRefs& out) {
    hidden.collect(prefix + ".hidden", out);
    log_scale.collect(prefix + ".log_scale", out);
    shift.collect(prefix + ".shift", out);
}

// ---------------------------------------------------------------------------

InvertibleBatchNorm::InvertibleBatchNorm(std::size_t dim, double momentum, double epsilon)
    : dim_(dim), momentum_(momentum), epsilon_(epsilon) {
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw ContractError("batch-norm momentum must lie in [0, 1]");
    if (!(epsilon >= 0.0)) throw ContractError("batch-norm epsilon must be non-negative");
    running_mean_ = Tensor::zeros({1, dim});
    running_std_ = Tensor::full({1, dim}, 1.0);
}

void InvertibleBatchNorm::set_running(std::vector<double> mean, std::vector<double> std) {
    if (mean.size() != dim_ || std.size() != dim_) throw DimensionError("set_running: wrong statistic length");
    for (double s : std)
        if (!(s > 0.0)) throw ContractError("running standard deviation must be positive");
    running_mean_ = Tensor({1, dim_}, std::move(mean));
    running_std_ = Tensor({1, dim_}, std::move(std));
    initialized_ = true;
}

FlowResult InvertibleBatchNorm::apply(const Tensor& u, Direction direction, Mode mode) {
    if (mode == Mode::eval || direction == Direction::forward) return apply_eval(u, direction);
    require_width(u, dim_, "InvertibleBatchNorm");
    const std::size_t n = u.rows();
    if (n < 2) throw ContractError("batch norm in train mode needs at least two rows");

    Tensor mu = mean_rows(u);
    Tensor centered = sub(u, mu);
    Tensor var = mean_rows(square(centered));
    Tensor var_eps = add(var, epsilon_);
    Tensor out = div(centered, sqrt(var_eps));
    Tensor log_det = broadcast_rows(scale(sum(log(var_eps)), -0.5), n);

    auto rm = running_mean_.data();
    auto rs = running_std_.data();
    const auto bm = mu.values();
    const auto bv = var.values();
    for (std::size_t j = 0; j < dim_; ++j) {
        const double bstd = std::sqrt(bv[j]);
        if (!initialized_) {
            rm[j] = bm[j];
            rs[j] = bstd;
        } else {
            rm[j] = momentum_ * rm[j] + (1.0 - momentum_) * bm[j];
            rs[j] = momentum_ * rs[j] + (1.0 - momentum_) * bstd;
        }
    }
    initialized_ = true;
    return {out, log_det};
}

FlowResult InvertibleBatchNorm::apply_eval(const Tensor& u, Direction direction) const {
    if (!initialized_) throw ContractError("batch norm used in eval mode before any training batch");
    require_width(u, dim_, "InvertibleBatchNorm");
    const std::size_t n = u.rows();
    std::vector<double> denom(dim_);
    double log_det = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
        const double s = running_std_.values()[j];
        const double v = s * s + epsilon_;
        denom[j] = std::sqrt(v);
        log_det += std::log(v);
    }
    log_det *= -0.5;
    Tensor mean = running_mean_.detach();
    Tensor den({1, dim_}, std::move(denom));
    if (direction == Direction::inverse) return {div(sub(u, mean), den), Tensor::full({n, 1}, log_det)};
    return {add(mul(u, den), mean), Tensor::full({n, 1}, -log_det)};
}

void InvertibleBatchNorm::collect_buffers(const std::string& prefix, ParamRefs& out) {
    out.push_back({prefix + ".running_mean", &running_mean_});
    out.push_back({prefix + ".running_std", &running_std_});
}

// ---------------------------------------------------------------------------

Permutation::Permutation(std::vector<std::size_t> perm) : perm_(std::move(perm)), inverse_(perm_.size()) {
    std::vector<bool> seen(perm_.size(), false);
    for (std::size_t i = 0; i < perm_.size(); ++i) {
        const std::size_t p = perm_[i];
        if (p >= perm_.size() || seen[p]) throw ContractError("permutation is not a bijection");
        seen[p] = true;
        inverse_[p] = i;
    }
}

Permutation Permutation::random(std::size_t dim, Rng& rng) {
    std::vector<std::size_t> p(dim);
    std::iota(p.begin(), p.end(), std::size_t{0});
    rng.shuffle(p);
    return Permutation(std::move(p));
}

Permutation Permutation::identity(std::size_t dim) {
    std::vector<std::size_t> p(dim);
    std::iota(p.begin(), p.end(), std::size_t{0});
    return Permutation(std::move(p));
}

FlowResult Permutation::apply(const Tensor& u, Direction direction) const {
    require_width(u, perm_.size(), "Permutation");
    const auto& idx = direction == Direction::inverse ? perm_ : inverse_;
    return {gather_cols(u, idx), Tensor::zeros({u.rows(), 1})};
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> FlowConfig::level_dims() const {
    if (levels == 0) throw ConfigError("flow.levels", "at least one level is required");
    if (blocks_per_level == 0) throw ConfigError("flow.blocks_per_level", "at least one block is required");
    std::vector<std::size_t> dims;
    std::size_t d = dim;
    for (std::size_t l = 0; l < levels; ++l) {
        if (d < 2)
            throw ConfigError("flow.levels", "level " + std::to_string(l) + " would have " + std::to_string(d) +
                                                 " dimension(s); every level needs at least two");
        dims.push_back(d);
        d -= (d + 1) / 2;
    }
    return dims;
}

FlowModel::FlowModel(const FlowConfig& config, Rng& rng)
    : config_(config), prior_(config.dim), level_dims_(config.level_dims()) {
    std::size_t coupling_index = 0;
    for (std::size_t l = 0; l < level_dims_.size(); ++l) {
        std::vector<FlowBlock> blocks;
        const std::size_t d = level_dims_[l];
        for (std::size_t b = 0; b < config_.blocks_per_level; ++b) {
            FlowBlock block;
            block.norm = InvertibleBatchNorm(d, config_.bn_momentum, config_.bn_epsilon);
            const std::size_t cw = conditioned(l, b) ? config_.num_classes : 0;
            block.coupling = AffineCoupling(d, cw, config_.scale_mode, coupling_index % 2 == 1, rng);
            block.permutation = Permutation::random(d, rng);
            blocks.push_back(std::move(block));
            ++coupling_index;
        }
        levels_.push_back(std::move(blocks));
    }
}

bool FlowModel::conditioned(std::size_t level, std::size_t block) const {
    if (config_.num_classes == 0) return false;
    switch (config_.condition_placement) {
        case ConditionPlacement::first_per_level: return block == 0;
        case ConditionPlacement::first_only: return level == 0 && block == 0;
        case ConditionPlacement::all: return true;
    }
    return false;
}

Tensor FlowModel::one_hot(std::span<const int> classes, std::size_t rows) const {
    if (config_.num_classes == 0) {
        if (!classes.empty()) throw ContractError("class condition given to an unconditional flow");
        return {};
    }
    if (classes.size() != rows)
        throw DimensionError("flow needs one class id per row (" + std::to_string(rows) + "), got " +
                             std::to_string(classes.size()));
    std::vector<double> v(rows * config_.num_classes, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        const int c = classes[i];
        if (c < 0 || static_cast<std::size_t>(c) >= config_.num_classes)
            throw ContractError("class id " + std::to_string(c) + " outside [0, " +
                                std::to_string(config_.num_classes) + ")");
        v[i * config_.num_classes + static_cast<std::size_t>(c)] = 1.0;
    }
    return Tensor({rows, config_.num_classes}, std::move(v));
}

template <typename Self>
FlowResult FlowModel::inverse_pass(Self& self, const Tensor& z, std::span<const int> classes, Mode mode) {
    require_width(z, self.config_.dim, "FlowModel");
    const std::size_t n = z.rows();
    const Tensor cond = self.one_hot(classes, n);
    Tensor x = z;
    Tensor log_det = Tensor::zeros({n, 1});
    std::vector<Tensor> factored;
    for (std::size_t l = 0; l < self.levels_.size(); ++l) {
        auto& blocks = self.levels_[l];
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            auto& block = blocks[b];
            FlowResult r;
            if constexpr (std::is_const_v<Self>) {
                r = block.norm.apply_eval(x, Direction::inverse);
            } else {
                r = block.norm.apply(x, Direction::inverse, mode);
            }
            log_det = add(log_det, r.log_det);
            const Tensor* c = block.coupling.condition_width() > 0 ? &cond : nullptr;
            r = block.coupling.apply(r.value, c, Direction::inverse);
            log_det = add(log_det, r.log_det);
            x = block.permutation.apply(r.value, Direction::inverse).value;
        }
        if (l + 1 < self.levels_.size()) {
            const std::size_t k = (self.level_dims_[l] + 1) / 2;
            factored.push_back(slice_cols(x, 0, k));
            x = slice_cols(x, k, self.level_dims_[l]);
        }
    }
    factored.push_back(x);
    Tensor u = factored.size() == 1 ? factored.front() : concat_cols(factored);
    return {u, log_det};
}

FlowResult FlowModel::to_latent(const Tensor& z, std::span<const int> classes, Mode mode) {
    if (mode == Mode::eval) return inverse_pass(std::as_const(*this), z, classes, mode);
    return inverse_pass(*this, z, classes, mode);
}

FlowResult FlowModel::to_latent_eval(const Tensor& z, std::span<const int> classes) const {
    return inverse_pass(*this, z, classes, Mode::eval);
}

Tensor FlowModel::from_latent(const Tensor& u, std::span<const int> classes) const {
    require_width(u, config_.dim, "FlowModel::from_latent");
    const std::size_t n = u.rows();
    const Tensor cond = one_hot(classes, n);

    // Split the latent back into the pieces factored out by each level.
    std::vector<Tensor> pieces;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < levels_.size(); ++l) {
        const std::size_t k = (level_dims_[l] + 1) / 2;
        pieces.push_back(slice_cols(u, offset, offset + k));
        offset += k;
    }
    Tensor x = slice_cols(u, offset, config_.dim);

    for (std::size_t l = levels_.size(); l-- > 0;) {
        if (l + 1 < levels_.size()) x = concat_cols({pieces[l], x});
        const auto& blocks = levels_[l];
        for (std::size_t b = blocks.size(); b-- > 0;) {
            const auto& block = blocks[b];
            x = block.permutation.apply(x, Direction::forward).value;
            const Tensor* c = block.coupling.condition_width() > 0 ? &cond : nullptr;
            x = block.coupling.apply(x, c, Direction::forward).value;
            x = block.norm.apply_eval(x, Direction::forward).value;
        }
    }
    return x;
}

Tensor FlowModel::log_prob(const Tensor& z, std::span<const int> classes, Mode mode) {
    FlowResult r = to_latent(z, classes, mode);
    return reshape(add(prior_.log_prob(r.value), r.log_det), {z.rows()});
}

Tensor FlowModel::log_prob_eval(const Tensor& z, std::span<const int> classes) const {
    FlowResult r = to_latent_eval(z, classes);
    return reshape(add(prior_.log_prob(r.value), r.log_det), {z.rows()});
}

Tensor FlowModel::nll_loss(const Tensor& z, std::span<const int> classes) {
    return neg(mean(log_prob(z, classes, Mode::train)));
}

Tensor FlowModel::sample(std::span<const int> classes, Rng& rng) const {
    const std::size_t n = classes.empty() ? 0 : classes.size();
    if (n == 0) throw ContractError("sample: no rows requested");
    if (!initialized()) throw ContractError("sampling from a flow whose batch norms are uninitialized");
    autograd::NoGradGuard guard;
    return from_latent(prior_.sample(n, rng), classes);
}

Tensor FlowModel::sample(int cls, std::size_t n, Rng& rng) const {
    if (n == 0) throw ContractError("sample: no rows requested");
    if (config_.num_classes == 0) {
        if (!initialized()) throw ContractError("sampling from a flow whose batch norms are uninitialized");
        autograd::NoGradGuard guard;
        return from_latent(prior_.sample(n, rng), {});
    }
    std::vector<int> classes(n, cls);
    return sample(classes, rng);
}

bool FlowModel::initialized() const {
    for (const auto& blocks : levels_)
        for (const auto& b : blocks)
            if (!b.norm.initialized()) return false;
    return true;
}

ParamRefs FlowModel::parameters() {
    ParamRefs out;
    for (std::size_t l = 0; l < levels_.size(); ++l)
        for (std::size_t b = 0; b < levels_[l].size(); ++b)
            levels_[l][b].coupling.collect(
                "level" + std::to_string(l) + ".block" + std::to_string(b) + ".coupling", out);
    return out;
}

ParamRefs FlowModel::state() {
    ParamRefs out = parameters();
    for (std::size_t l = 0; l < levels_.size(); ++l)
        for (std::size_t b = 0; b < levels_[l].size(); ++b)
            levels_[l][b].norm.collect_buffers("level" + std::to_string(l) + ".block" + std::to_string(b) + ".norm",
                                               out);
    return out;
}

FlowModel FlowModel::snapshot() const {
    FlowModel copy = *this;
    detach_storage(copy.state());
    return copy;
}

void FlowModel::save_to(Checkpoint& ckpt, const std::string& prefix) {
    ParamRefs refs = state();
    for (auto& r : refs) r.name = prefix + "." + r.name;
    ckpt.add(refs);
    nlohmann::json initialized = nlohmann::json::array();
    for (std::size_t l = 0; l < levels_.size(); ++l) {
        for (std::size_t b = 0; b < levels_[l].size(); ++b) {
            const auto& p = levels_[l][b].permutation.indices();
            ckpt.int_arrays[prefix + ".level" + std::to_string(l) + ".block" + std::to_string(b) + ".permutation"] =
                std::vector<std::int64_t>(p.begin(), p.end());
            initialized.push_back(levels_[l][b].norm.initialized());
        }
    }
    ckpt.meta[prefix] = {{"dim", config_.dim},
                         {"levels", config_.levels},
                         {"blocks_per_level", config_.blocks_per_level},
                         {"num_classes", config_.num_classes},
                         {"scale_mode", to_string(config_.scale_mode)},
                         {"condition_placement", to_string(config_.condition_placement)},
                         {"bn_momentum", config_.bn_momentum},
                         {"bn_epsilon", config_.bn_epsilon},
                         {"bn_initialized", initialized}};
}

FlowModel FlowModel::load_from(const Checkpoint& ckpt, const std::string& prefix) {
    if (!ckpt.meta.contains(prefix)) throw DataError("checkpoint has no '" + prefix + "' metadata");
    const auto& m = ckpt.meta.at(prefix);
    FlowConfig cfg;
    cfg.dim = m.at("dim").get<std::size_t>();
    cfg.levels = m.at("levels").get<std::size_t>();
    cfg.blocks_per_level = m.at("blocks_per_level").get<std::size_t>();
    cfg.num_classes = m.at("num_classes").get<std::size_t>();
    cfg.scale_mode = parse_scale_mode(m.at("scale_mode").get<std::string>());
    cfg.condition_placement = parse_condition_placement(m.at("condition_placement").get<std::string>());
    cfg.bn_momentum = m.at("bn_momentum").get<double>();
    cfg.bn_epsilon = m.at("bn_epsilon").get<double>();
    Rng rng(0);
    FlowModel model(cfg, rng);

    ParamRefs refs = model.state();
    for (auto& r : refs) r.name = prefix + "." + r.name;
    ckpt.restore(refs);
    const auto& init = m.at("bn_initialized");
    std::size_t k = 0;
    for (std::size_t l = 0; l < model.levels_.size(); ++l) {
        for (std::size_t b = 0; b < model.levels_[l].size(); ++b, ++k) {
            const std::string key =
                prefix + ".level" + std::to_string(l) + ".block" + std::to_string(b) + ".permutation";
            auto it = ckpt.int_arrays.find(key);
            if (it == ckpt.int_arrays.end()) throw DataError("checkpoint is missing " + key);
            model.levels_[l][b].permutation =
                Permutation(std::vector<std::size_t>(it->second.begin(), it->second.end()));
            auto& norm = model.levels_[l][b].norm;
            if (init.at(k).get<bool>()) {
                const auto mean = norm.running_mean();
                const auto std = norm.running_std();
                norm.set_running({mean.begin(), mean.end()}, {std.begin(), std.end()});
            }
        }
    }
    return model;
}

}  // namespace prer::flow
