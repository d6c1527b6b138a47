#include "prer/continual.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "prer/checkpoint.hpp"
#include "prer/error.hpp"
#include "prer/ops.hpp"
#include "prer/optim.hpp"

namespace prer::continual {

std::vector<int> Task::global_labels(const data::Dataset& d) const {
    std::vector<int> out;
    out.reserve(d.size());
    for (int y : d.labels) out.push_back(global_of(y));
    return out;
}

std::pair<std::size_t, int> TaskStream::locate(int global) const {
    for (const auto& t : tasks)
        for (std::size_t k = 0; k < t.classes.size(); ++k)
            if (t.classes[k] == global) return {t.index, static_cast<int>(k)};
    throw ContractError("class " + std::to_string(global) + " belongs to no task");
}

TaskStream split_tasks(const data::Dataset& dataset, int classes_per_task, std::uint64_t seed, double train_ratio) {
    if (classes_per_task < 2) throw ContractError("classes per task must be at least 2");
    const int c = dataset.num_classes;
    if (classes_per_task >= c)
        throw ContractError("classes per task (" + std::to_string(classes_per_task) + ") >= class count (" +
                            std::to_string(c) + "): a single task is not a continual problem");
    const auto split = data::stratified_split(dataset, train_ratio, seed);

    TaskStream stream;
    stream.num_classes = c;
    stream.classes_per_task = classes_per_task;
    const int m = (c + classes_per_task - 1) / classes_per_task;
    for (int t = 0; t < m; ++t) {
        Task task;
        task.index = static_cast<std::size_t>(t);
        for (int g = t * classes_per_task; g < std::min(c, (t + 1) * classes_per_task); ++g) task.classes.push_back(g);
        auto take = [&](const data::Dataset& src) {
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < src.size(); ++i)
                if (src.labels[i] >= task.classes.front() && src.labels[i] <= task.classes.back()) idx.push_back(i);
            data::Dataset d = src.subset(idx);
            for (int& y : d.labels) y -= task.classes.front();
            d.num_classes = static_cast<int>(task.classes.size());
            return d;
        };
        task.train = take(split.train);
        task.test = take(split.test);
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

// --- replay ------------------------------------------------------------------

void ReplayPolicy::record(const Task& task) {
    std::vector<double> counts(task.classes.size(), 0.0);
    for (int y : task.train.labels) counts.at(static_cast<std::size_t>(y)) += 1.0;
    for (std::size_t k = 0; k < task.classes.size(); ++k) {
        if (contains(task.classes[k])) throw ContractError("task recorded twice in the replay policy");
        classes_.push_back(task.classes[k]);
        counts_.push_back(counts[k]);
    }
}

std::vector<double> ReplayPolicy::proportions() const {
    const double total = std::accumulate(counts_.begin(), counts_.end(), 0.0);
    std::vector<double> p(counts_.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = counts_[i] / total;
    return p;
}

std::vector<int> ReplayPolicy::draw(std::size_t count, Rng& rng) const {
    if (empty()) throw ContractError("replay policy has no recorded tasks");
    std::vector<int> out(count);
    for (auto& y : out) y = classes_[rng.categorical(counts_)];
    return out;
}

bool ReplayPolicy::contains(int global) const {
    return std::find(classes_.begin(), classes_.end(), global) != classes_.end();
}

// Sampling divides by the coupling scales, so a rare tail latent can be
// amplified without bound. Such rows are redrawn; the result is the flow's
// distribution restricted to the accepted region.
Tensor sample_embeddings(const flow::FlowModel& flow, std::span<const int> classes, Rng& rng, double max_deviation) {
    constexpr int kMaxRounds = 100;
    if (!(max_deviation >= 0.0)) throw ContractError("max_deviation must be non-negative");
    autograd::NoGradGuard guard;
    const std::size_t d = flow.dim();
    std::span<const double> mu, sd;
    if (max_deviation > 0.0) {
        const auto& first = flow.levels().front().front().norm;
        mu = first.running_mean();
        sd = first.running_std();
    }
    auto accept = [&](std::span<const double> row) {
        for (std::size_t k = 0; k < d; ++k) {
            if (!std::isfinite(row[k])) return false;
            if (max_deviation > 0.0 && std::abs(row[k] - mu[k]) > max_deviation * (sd[k] + 1e-12)) return false;
        }
        return true;
    };
    Tensor z = flow.sample(classes, rng);
    for (int round = 0; round < kMaxRounds; ++round) {
        std::vector<std::size_t> bad;
        const auto v = z.values();
        for (std::size_t i = 0; i < classes.size(); ++i)
            if (!accept(v.subspan(i * d, d))) bad.push_back(i);
        if (bad.empty()) return z;
        std::vector<int> redo;
        for (std::size_t i : bad) redo.push_back(classes[i]);
        const Tensor fresh = flow.sample(redo, rng);
        auto out = z.data();
        for (std::size_t r = 0; r < bad.size(); ++r)
            std::copy_n(fresh.values().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                        out.begin() + static_cast<std::ptrdiff_t>(bad[r] * d));
    }
    throw NumericError("flow keeps producing implausible samples");
}

Replay sample_replay(std::size_t current_task, std::size_t count, const flow::FlowModel& flow,
                     const models::Decoder& decoder, const ReplayPolicy& policy, Rng& rng, double max_deviation) {
    if (current_task < 2) throw ContractError("replay needs at least one finished task (task index >= 2)");
    if (count == 0) throw ContractError("replay count must be positive");
    if (!flow.initialized()) throw ContractError("replay flow is not initialised");
    Replay r;
    r.classes = policy.draw(count, rng);
    autograd::NoGradGuard guard;
    r.embeddings = sample_embeddings(flow, r.classes, rng, max_deviation);
    r.images = decoder.forward(r.embeddings);
    return r;
}

std::string to_string(Phase phase) {
    switch (phase) {
        case Phase::autoencoder: return "autoencoder";
        case Phase::flow: return "flow";
        case Phase::head: return "head";
    }
    return "?";
}

// --- learner -----------------------------------------------------------------

Learner::Learner(const ExperimentConfig& config, const models::ImageShape& input, int num_classes)
    : config_(config), input_(input), num_classes_(num_classes), root_(config.seed) {
    config_.validate();
    models::EncoderConfig ec = config_.encoder;
    ec.input = input_;
    config_.encoder = ec;
    {
        Rng r = root_.derive("encoder-init");
        encoder_ = models::Encoder(ec, r);
    }
    {
        Rng r = root_.derive("decoder-init");
        decoder_ = models::Decoder(ec, r);
    }
    if (config_.flow_enabled) {
        flow::FlowConfig fc;
        fc.dim = ec.embedding_dim;
        fc.levels = config_.flow_levels;
        fc.blocks_per_level = config_.flow_blocks;
        fc.num_classes = static_cast<std::size_t>(num_classes_);
        fc.scale_mode = config_.scale_mode;
        fc.condition_placement = config_.condition_placement;
        fc.bn_momentum = config_.bn_momentum;
        Rng r = root_.derive("flow-init");
        flow_.emplace(fc, r);
    }
}

std::vector<std::vector<std::size_t>> Learner::batches(std::size_t n, std::size_t size, Rng& rng) const {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n; s += size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + size)));
    return out;
}

namespace {

void step(const Tensor& loss, Optimizer& opt, const char* phase, std::size_t t, std::size_t epoch) {
    if (!std::isfinite(loss.item()))
        throw NumericError(std::string("non-finite ") + phase + " loss (task " + std::to_string(t) + ", epoch " +
                           std::to_string(epoch + 1) + ")");
    autograd::backward(loss);
    opt.step();
}

}  // namespace

Tensor Learner::embed(const data::Dataset& d) const {
    autograd::NoGradGuard guard;
    return encoder_.forward(d.all());
}

void Learner::train_phase_autoencoder(const Task& task) {
    const std::size_t t = task.index + 1;
    const std::size_t b = config_.batch_size;
    const double p = config_.replay_fraction_at(t);
    const std::size_t k = static_cast<std::size_t>(std::floor(p * static_cast<double>(b)));
    const bool replay = k > 0;
    const bool regularize = replay && config_.loss.lambda > 0.0;

    auto params = encoder_.parameters();
    auto dec = decoder_.parameters();
    params.insert(params.end(), dec.begin(), dec.end());
    Optimizer opt(tensors_of(params), config_.autoencoder_optimizer);
    Rng order = root_.derive("autoencoder-batches", t);
    Rng replay_rng = root_.derive("autoencoder-replay", t);

    for (std::size_t e = 0; e < config_.epochs.autoencoder; ++e) {
        for (const auto& idx : batches(task.train.size(), b - k, order)) {
            Tensor x = task.train.batch(idx);
            Tensor loss;
            if (replay) {
                Replay r = sample_replay(t, k, *flow_, *replay_decoder_, policy_, replay_rng,
                                         config_.replay_max_deviation);
                x = concat_rows({x, r.images});
                loss = models::autoencoder_loss(encoder_, decoder_, x, config_.loss.beta);
                if (regularize) {
                    Tensor reg = config_.loss.decoder == models::RegularizerDecoder::frozen
                                     ? models::embedding_regularizer(encoder_, r.images, r.embeddings, config_.loss.distance)
                                     : models::embedding_regularizer(encoder_, decoder_, r.embeddings, config_.loss);
                    loss = add(loss, scale(reg, config_.loss.lambda));
                }
            } else {
                loss = models::autoencoder_loss(encoder_, decoder_, x, config_.loss.beta);
            }
            step(loss, opt, "autoencoder", t, e);
        }
    }
}

void Learner::train_phase_flow(const Task& task) {
    if (!flow_) return;
    const std::size_t t = task.index + 1;
    const std::size_t b = config_.batch_size;
    const double p = config_.replay_fraction_at(t);
    const std::size_t k = static_cast<std::size_t>(std::floor(p * static_cast<double>(b)));
    const bool replay = k > 0;

    // Replay comes from the flow as it was when this phase started.
    std::optional<flow::FlowModel> frozen;
    if (replay) frozen.emplace(flow_->snapshot());

    const Tensor z = embed(task.train);
    const std::vector<int> global = task.global_labels(task.train);
    Optimizer opt(tensors_of(flow_->parameters()), config_.flow_optimizer);
    Rng order = root_.derive("flow-batches", t);
    Rng replay_rng = root_.derive("flow-replay", t);

    std::vector<std::size_t> cols(z.cols());
    std::iota(cols.begin(), cols.end(), 0);
    for (std::size_t e = 0; e < config_.epochs.flow; ++e) {
        for (const auto& idx : batches(task.train.size(), b - k, order)) {
            std::vector<double> rows;
            rows.reserve(idx.size() * z.cols());
            std::vector<int> cls;
            for (std::size_t i : idx) {
                const auto v = z.values().subspan(i * z.cols(), z.cols());
                rows.insert(rows.end(), v.begin(), v.end());
                cls.push_back(global[i]);
            }
            Tensor batch({idx.size(), z.cols()}, std::move(rows));
            if (replay) {
                std::vector<int> rc = policy_.draw(k, replay_rng);
                batch = concat_rows({batch, sample_embeddings(*frozen, rc, replay_rng, config_.replay_max_deviation)});
                cls.insert(cls.end(), rc.begin(), rc.end());
            }
            if (batch.rows() < 2) continue;
            step(flow_->nll_loss(batch, cls), opt, "flow", t, e);
        }
    }
}

void Learner::train_phase_head(const Task& task) {
    const std::size_t t = task.index + 1;
    Rng init = root_.derive("head-init", t);
    models::Head head(config_.encoder.embedding_dim, task.classes.size(), config_.head_dropout, init);
    const Tensor z = embed(task.train);
    Optimizer opt(tensors_of(head.parameters()), config_.head_optimizer);
    Rng order = root_.derive("head-batches", t);
    Rng drop = root_.derive("head-dropout", t);
    for (std::size_t e = 0; e < config_.epochs.head; ++e) {
        for (const auto& idx : batches(task.train.size(), config_.batch_size, order)) {
            std::vector<double> rows;
            rows.reserve(idx.size() * z.cols());
            for (std::size_t i : idx) {
                const auto v = z.values().subspan(i * z.cols(), z.cols());
                rows.insert(rows.end(), v.begin(), v.end());
            }
            const auto labels = task.train.labels_of(idx);
            Tensor loss = cross_entropy(head.forward(Tensor({idx.size(), z.cols()}, std::move(rows)), &drop), labels);
            step(loss, opt, "head", t, e);
        }
    }
    if (heads_.size() != task.index) throw ContractError("tasks must be trained in order");
    heads_.push_back(std::move(head));
}

void Learner::finish_task(const Task& task) {
    replay_decoder_.emplace(decoder_.snapshot());
    policy_.record(task);
    ++finished_;
}

void Learner::train_task(const Task& task, const PhaseObserver& observer) {
    auto run = [&](Phase ph, auto&& fn) {
        if (observer) observer(ph, task.index, false, *this);
        fn();
        if (observer) observer(ph, task.index, true, *this);
    };
    run(Phase::autoencoder, [&] { train_phase_autoencoder(task); });
    if (flow_) run(Phase::flow, [&] { train_phase_flow(task); });
    run(Phase::head, [&] { train_phase_head(task); });
    finish_task(task);
}

double Learner::evaluate(const Task& task) const {
    if (task.index >= heads_.size()) throw ContractError("task " + std::to_string(task.index) + " has no head yet");
    const auto pred = heads_[task.index].predict(embed(task.test));
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == task.test.labels[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

metrics::MemorySizes Learner::memory_sizes() {
    metrics::MemorySizes s;
    s.encoder = static_cast<double>(count_values(encoder_.parameters()));
    double nf = static_cast<double>(count_values(decoder_.parameters()));
    if (flow_) nf += static_cast<double>(count_values(flow_->state()));
    s.flow_decoder = nf;
    s.embedding_size = static_cast<double>(config_.encoder.embedding_dim);
    s.image_size = static_cast<double>(input_.numel());
    s.classes_per_task = static_cast<double>(config_.classes_per_task);
    return s;
}

Checkpoint Learner::checkpoint(const TaskStream& stream) {
    Checkpoint ckpt;
    ckpt.add(encoder_.parameters());
    ckpt.add(decoder_.parameters());
    for (std::size_t j = 0; j < heads_.size(); ++j) {
        ParamRefs refs;
        for (auto& nt : heads_[j].parameters()) refs.push_back({"task" + std::to_string(j) + "." + nt.name, nt.tensor});
        ckpt.add(refs);
    }
    if (flow_) flow_->save_to(ckpt, "flow");
    nlohmann::json task_classes = nlohmann::json::array();
    for (const auto& t : stream.tasks) task_classes.push_back(t.classes);
    ckpt.meta["config"] = to_json(config_);
    ckpt.meta["input"] = {input_.channels, input_.height, input_.width};
    ckpt.meta["num_classes"] = num_classes_;
    ckpt.meta["task_classes"] = task_classes;
    ckpt.meta["tasks_finished"] = finished_;
    return ckpt;
}

RestoredModel restore_checkpoint(const std::filesystem::path& manifest) {
    const Checkpoint ckpt = load_checkpoint(manifest);
    RestoredModel m;
    ExperimentConfig cfg;
    try {
        cfg = parse_config(ckpt.meta.at("config"));
        const auto& in = ckpt.meta.at("input");
        cfg.encoder.input = {in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
        m.num_classes = ckpt.meta.at("num_classes").get<int>();
        m.task_classes = ckpt.meta.at("task_classes").get<std::vector<std::vector<int>>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(0, manifest.string() + ": bad checkpoint metadata: " + e.what());
    }
    Rng dummy(0);
    m.encoder = models::Encoder(cfg.encoder, dummy);
    m.decoder = models::Decoder(cfg.encoder, dummy);
    ckpt.restore(m.encoder.parameters());
    ckpt.restore(m.decoder.parameters());
    const std::size_t finished = ckpt.meta.value("tasks_finished", std::size_t{0});
    for (std::size_t j = 0; j < finished; ++j) {
        models::Head h(cfg.encoder.embedding_dim, m.task_classes.at(j).size(), cfg.head_dropout, dummy);
        ParamRefs refs;
        for (auto& nt : h.parameters()) refs.push_back({"task" + std::to_string(j) + "." + nt.name, nt.tensor});
        ckpt.restore(refs);
        m.heads.push_back(std::move(h));
    }
    if (cfg.flow_enabled) m.flow.emplace(flow::FlowModel::load_from(ckpt, "flow"));
    m.config = std::move(cfg);
    return m;
}

// --- experiment --------------------------------------------------------------

data::Dataset load_dataset(const DatasetConfig& config) {
    if (config.kind == DatasetConfig::Kind::blobs) {
        data::BlobSpec spec;
        spec.classes = config.classes;
        spec.samples_per_class = config.samples_per_class;
        spec.dim = config.dim;
        spec.std = config.std;
        spec.seed = config.blob_seed;
        spec.means = data::spread_means(config.classes, config.dim, config.blob_seed ^ 0x5eedULL);
        return data::make_blobs(spec);
    }
    data::Dataset ds = data::load_idx(config.images, config.labels);
    if (config.max_per_class == 0) return ds;
    std::vector<std::size_t> kept(static_cast<std::size_t>(ds.num_classes), 0), idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (kept[static_cast<std::size_t>(ds.labels[i])]++ < config.max_per_class) idx.push_back(i);
    return ds.subset(idx);
}

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << text;
    if (!out) throw DataError("write failed for " + p.string());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const PhaseObserver& observer) {
    config.validate();
    return run_experiment(config, load_dataset(config.dataset), observer);
}

ExperimentResult run_experiment(const ExperimentConfig& config, const data::Dataset& dataset,
                                const PhaseObserver& observer) {
    config.validate();
    dataset.validate();
    if (config.encoder.kind == models::EncoderKind::conv3 && (dataset.height < 8 || dataset.width < 8))
        throw ConfigError("model.encoder", "conv3 needs images of at least 8x8");
    const Rng root(config.seed);
    const TaskStream stream =
        split_tasks(dataset, config.classes_per_task, root.derive("split").next_u64(), config.train_ratio);

    Learner learner(config, {1, dataset.height, dataset.width}, dataset.num_classes);
    ExperimentResult res;
    res.scores = metrics::ScoreMatrix(stream.size());
    res.config_hash = config_hash(config);
    const bool write = !config.output_dir.empty();
    if (write) {
        std::filesystem::create_directories(config.output_dir);
        write_text(config.output_dir / "resolved_config.json", to_json(config).dump(2) + "\n");
    }

    for (const auto& task : stream.tasks) {
        learner.train_task(task, observer);
        for (std::size_t j = 0; j <= task.index; ++j) res.scores.set(task.index, j, learner.evaluate(stream.tasks[j]));
        if (write && config.checkpoints) {
            const auto path = config.output_dir / ("task_" + std::to_string(task.index + 1) + ".json");
            save_checkpoint(learner.checkpoint(stream), path);
            res.checkpoints.push_back(path);
        }
    }

    auto sizes = learner.memory_sizes();
    sizes.tasks = static_cast<double>(stream.size());
    const auto method = config.flow_enabled ? metrics::Method::prer : metrics::Method::naive;
    res.report = metrics::make_report(res.scores, static_cast<std::size_t>(metrics::memory_footprint(method, sizes)));

    if (write) {
        write_text(config.output_dir / "scores.csv", res.scores.to_csv());
        nlohmann::json m = {{"accuracy", res.report.accuracy},
                            {"bwt", res.report.bwt},
                            {"bwt_defined", res.report.bwt_defined},
                            {"memory_floats", res.report.memory_floats},
                            {"method", metrics::to_string(method)},
                            {"seed", config.seed},
                            {"config_hash", res.config_hash},
                            {"per_task_final", res.report.per_task_final}};
        write_text(config.output_dir / "metrics.json", m.dump(2) + "\n");
    }
    return res;
}

}  // namespace prer::continual
