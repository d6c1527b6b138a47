#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prer/config.hpp"
#include "prer/data.hpp"
#include "prer/flow.hpp"
#include "prer/metrics.hpp"
#include "prer/models.hpp"
#include "prer/rng.hpp"

namespace prer::continual {

/// One task: a contiguous group of global classes. Dataset labels are
/// within-task indices; `classes[local]` recovers the global id.
struct Task {
    std::size_t index = 0;  // 0-based
    std::vector<int> classes;
    data::Dataset train;
    data::Dataset test;

    int global_of(int local) const { return classes.at(static_cast<std::size_t>(local)); }
    std::vector<int> global_labels(const data::Dataset& d) const;
};

struct TaskStream {
    std::vector<Task> tasks;
    int num_classes = 0;
    int classes_per_task = 0;

    std::size_t size() const noexcept { return tasks.size(); }
    /// (task index, local label) of a global class.
    std::pair<std::size_t, int> locate(int global) const;
};

/// Groups classes 0..C-1 into ceil(C / c_m) tasks in increasing order after a
/// per-class stratified train/test split.
TaskStream split_tasks(const data::Dataset& dataset, int classes_per_task, std::uint64_t seed,
                       double train_ratio = 0.8);

/// Label proportions of every finished task's training set.
class ReplayPolicy {
public:
    void record(const Task& task);
    bool empty() const noexcept { return classes_.empty(); }
    const std::vector<int>& classes() const noexcept { return classes_; }
    /// Normalised weights aligned with classes().
    std::vector<double> proportions() const;
    std::vector<int> draw(std::size_t count, Rng& rng) const;
    bool contains(int global) const;

private:
    std::vector<int> classes_;
    std::vector<double> counts_;
};

struct Replay {
    Tensor images;
    Tensor embeddings;
    std::vector<int> classes;
};

/// Embeddings for `classes` drawn from `flow`. Rows that are non-finite or,
/// with max_deviation > 0, lie further than max_deviation running standard
/// deviations from the flow's input mean are redrawn.
Tensor sample_embeddings(const flow::FlowModel& flow, std::span<const int> classes, Rng& rng,
                         double max_deviation = 0.0);

/// Draws `count` labels from the policy, samples embeddings from `flow`
/// conditioned on them and decodes them with `decoder`.
Replay sample_replay(std::size_t current_task, std::size_t count, const flow::FlowModel& flow,
                     const models::Decoder& decoder, const ReplayPolicy& policy, Rng& rng,
                     double max_deviation = 0.0);

enum class Phase { autoencoder, flow, head };
std::string to_string(Phase phase);

class Learner;
/// Called with after = false right before a phase and after = true once it ends.
using PhaseObserver = std::function<void(Phase, std::size_t task, bool after, Learner&)>;

/// Holds E, D, the flow and the heads, and runs the three training phases.
class Learner {
public:
    Learner(const ExperimentConfig& config, const models::ImageShape& input, int num_classes);

    void train_task(const Task& task, const PhaseObserver& observer = {});
    void train_phase_autoencoder(const Task& task);
    void train_phase_flow(const Task& task);
    void train_phase_head(const Task& task);
    /// Bookkeeping once all phases of a task ran: freezes the decoder used
    /// for replay and records the task's label proportions.
    void finish_task(const Task& task);

    /// Test accuracy of head `task.index` on `task.test`.
    double evaluate(const Task& task) const;

    const ExperimentConfig& config() const noexcept { return config_; }
    models::Encoder& encoder() noexcept { return encoder_; }
    models::Decoder& decoder() noexcept { return decoder_; }
    /// Absent when the flow is disabled.
    flow::FlowModel* flow() noexcept { return flow_ ? &*flow_ : nullptr; }
    std::vector<models::Head>& heads() noexcept { return heads_; }
    const ReplayPolicy& policy() const noexcept { return policy_; }
    std::size_t tasks_finished() const noexcept { return finished_; }

    /// Floats persisted across tasks: NF (flow + decoder) and N (encoder).
    metrics::MemorySizes memory_sizes();
    /// Encoder, decoder, heads and flow with enough metadata to rebuild them.
    Checkpoint checkpoint(const TaskStream& stream);

private:
    std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t size, Rng& rng) const;
    Tensor embed(const data::Dataset& d) const;

    ExperimentConfig config_;
    models::ImageShape input_;
    int num_classes_ = 0;
    Rng root_;
    models::Encoder encoder_;
    models::Decoder decoder_;
    std::optional<flow::FlowModel> flow_;
    std::vector<models::Head> heads_;
    std::optional<models::Decoder> replay_decoder_;
    ReplayPolicy policy_;
    std::size_t finished_ = 0;
};

data::Dataset load_dataset(const DatasetConfig& config);

struct ExperimentResult {
    metrics::ScoreMatrix scores;
    metrics::MetricsReport report;
    std::string config_hash;
    std::vector<std::filesystem::path> checkpoints;
};

/// Full pipeline. With a non-empty config.output_dir writes scores.csv,
/// metrics.json, resolved_config.json and per-task checkpoints there.
ExperimentResult run_experiment(const ExperimentConfig& config, const PhaseObserver& observer = {});
ExperimentResult run_experiment(const ExperimentConfig& config, const data::Dataset& dataset,
                                const PhaseObserver& observer = {});

/// Learner and task stream restored from a per-task checkpoint.
struct RestoredModel {
    ExperimentConfig config;
    models::Encoder encoder;
    models::Decoder decoder;
    std::optional<flow::FlowModel> flow;
    std::vector<models::Head> heads;
    int num_classes = 0;
    std::vector<std::vector<int>> task_classes;
};

RestoredModel restore_checkpoint(const std::filesystem::path& manifest);

}  // namespace prer::continual
