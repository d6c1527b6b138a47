#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prer/flow.hpp"
#include "prer/models.hpp"
#include "prer/optim.hpp"

namespace prer {

inline constexpr const char* kConfigSchema = "prer-config-v1";

struct DatasetConfig {
    enum class Kind { idx, blobs };
    Kind kind = Kind::blobs;
    // idx
    std::filesystem::path images;
    std::filesystem::path labels;
    /// Keep at most this many samples per class (0 keeps all).
    std::size_t max_per_class = 0;
    // blobs
    int classes = 6;
    std::size_t samples_per_class = 200;
    std::size_t dim = 8;
    double std = 0.08;
    std::uint64_t blob_seed = 1;
};

struct EpochConfig {
    std::size_t autoencoder = 5;
    std::size_t flow = 10;
    std::size_t head = 5;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    int classes_per_task = 2;
    double train_ratio = 0.8;

    models::EncoderConfig encoder;
    std::size_t flow_levels = 2;
    std::size_t flow_blocks = 10;
    flow::ScaleMode scale_mode = flow::ScaleMode::sigmoid_shift;
    flow::ConditionPlacement condition_placement = flow::ConditionPlacement::first_per_level;
    double bn_momentum = 0.9;

    OptimizerSettings autoencoder_optimizer{OptimizerKind::adam, 1e-3};
    OptimizerSettings flow_optimizer{OptimizerKind::adam, 1e-4};
    OptimizerSettings head_optimizer{OptimizerKind::sgd, 0.1};

    EpochConfig epochs;
    std::size_t batch_size = 64;
    double head_dropout = 0.2;

    /// Replay fraction; unset means min(0.5, (t - 1) / t).
    std::optional<double> replay_fraction;
    /// Replayed embeddings further than this many running standard deviations
    /// from the flow's input mean are redrawn; 0 only redraws non-finite rows.
    double replay_max_deviation = 10.0;
    bool flow_enabled = true;
    models::LossConfig loss;

    std::uint64_t seed = 0;
    std::filesystem::path output_dir;
    /// Write per-task checkpoints.
    bool checkpoints = true;

    void validate() const;
    /// Replay fraction at 1-based task index t.
    double replay_fraction_at(std::size_t t) const;
    /// The same configuration with replay, regularizer, and flow disabled.
    ExperimentConfig as_naive() const;
};

/// Parses a prer-config-v1 document. Relative paths resolve against
/// `base_dir`, falling back to $PRER_DATA_DIR when the file is absent there.
/// Unknown keys and bad values raise ConfigError carrying the JSON key path.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Complete document with every field written out; parse_config(to_json(c))
/// reproduces `c`.
nlohmann::json to_json(const ExperimentConfig& config);

/// Identifies the experiment independent of seed and output location.
std::string config_hash(const ExperimentConfig& config);

}  // namespace prer
