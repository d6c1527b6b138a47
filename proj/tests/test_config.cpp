#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "prer/config.hpp"
#include "prer/error.hpp"

using namespace prer;
using nlohmann::json;

namespace {

json minimal() { return {{"schema", "prer-config-v1"}}; }

std::string key_of(const json& doc) {
    try {
        parse_config(doc);
    } catch (const ConfigError& e) {
        return e.key_path();
    }
    return "<none>";
}

}  // namespace

TEST(Config, DefaultsFollowPublishedHyperparameters) {
    ExperimentConfig c = parse_config(minimal());
    EXPECT_EQ(c.batch_size, 64u);
    EXPECT_EQ(c.classes_per_task, 2);
    EXPECT_DOUBLE_EQ(c.train_ratio, 0.8);
    EXPECT_EQ(c.autoencoder_optimizer.kind, OptimizerKind::adam);
    EXPECT_DOUBLE_EQ(c.autoencoder_optimizer.learning_rate, 1e-3);
    EXPECT_EQ(c.flow_optimizer.kind, OptimizerKind::adam);
    EXPECT_DOUBLE_EQ(c.flow_optimizer.learning_rate, 1e-4);
    EXPECT_EQ(c.head_optimizer.kind, OptimizerKind::sgd);
    EXPECT_DOUBLE_EQ(c.head_optimizer.learning_rate, 0.1);
    EXPECT_EQ(c.flow_levels, 2u);
    EXPECT_EQ(c.flow_blocks, 10u);
    EXPECT_EQ(c.encoder.embedding_dim, 50u);
    EXPECT_DOUBLE_EQ(c.head_dropout, 0.2);
    EXPECT_EQ(c.scale_mode, flow::ScaleMode::sigmoid_shift);
    EXPECT_EQ(c.epochs.autoencoder, 5u);
    EXPECT_EQ(c.epochs.flow, 10u);
    EXPECT_EQ(c.epochs.head, 5u);
    EXPECT_DOUBLE_EQ(c.loss.lambda, 1.0);
    EXPECT_DOUBLE_EQ(c.loss.beta, 1e-3);
}

TEST(Config, ReplayFractionSchedule) {
    ExperimentConfig c = parse_config(minimal());
    EXPECT_EQ(c.replay_fraction_at(1), 0.0);
    EXPECT_DOUBLE_EQ(c.replay_fraction_at(2), 0.5);
    EXPECT_DOUBLE_EQ(c.replay_fraction_at(5), 0.5);
    c.replay_fraction = 0.25;
    EXPECT_DOUBLE_EQ(c.replay_fraction_at(3), 0.25);
    ExperimentConfig naive = c.as_naive();
    EXPECT_EQ(naive.replay_fraction_at(4), 0.0);
    EXPECT_EQ(naive.loss.lambda, 0.0);
    EXPECT_FALSE(naive.flow_enabled);
    EXPECT_NO_THROW(naive.validate());
}

TEST(Config, UnknownKeysCarryTheirPath) {
    json d = minimal();
    d["bogus"] = 1;
    EXPECT_EQ(key_of(d), "bogus");
    d = minimal();
    d["flow"] = {{"levels", 2}, {"blockz", 3}};
    EXPECT_EQ(key_of(d), "flow.blockz");
    d = minimal();
    d["optim"] = {{"head", {{"kind", "sgd"}, {"learning_rate", 0.1}}}};
    EXPECT_EQ(key_of(d), "optim.head.learning_rate");
}

TEST(Config, BadValuesCarryTheirPath) {
    json d = minimal();
    d["batch_size"] = "big";
    EXPECT_EQ(key_of(d), "batch_size");
    d = minimal();
    d["loss"] = {{"lambda", -1.0}};
    EXPECT_EQ(key_of(d), "lambda");
    d = minimal();
    d["model"] = {{"encoder", "resnet"}};
    EXPECT_EQ(key_of(d), "model.encoder");
    d = minimal();
    d["schema"] = "prer-config-v0";
    EXPECT_EQ(key_of(d), "schema");
    EXPECT_EQ(key_of(json::object()), "schema");
    d = minimal();
    d["model"] = {{"embedding_dim", 2}};
    EXPECT_EQ(key_of(d), "flow.levels");
    d = minimal();
    d["flow"] = {{"enabled", false}};
    EXPECT_EQ(key_of(d), "flow.enabled");
}

TEST(Config, RegularizerAndEnvelopeKeys) {
    ExperimentConfig c = parse_config(minimal());
    EXPECT_EQ(c.loss.decoder, models::RegularizerDecoder::frozen);
    EXPECT_DOUBLE_EQ(c.replay_max_deviation, 10.0);
    json d = minimal();
    d["loss"] = {{"decoder", "current"}};
    d["replay"] = {{"max_deviation", 0.0}};
    c = parse_config(d);
    EXPECT_EQ(c.loss.decoder, models::RegularizerDecoder::current);
    EXPECT_EQ(c.replay_max_deviation, 0.0);
    EXPECT_EQ(to_json(c)["loss"]["decoder"], "current");
    d["loss"] = {{"decoder", "stale"}};
    EXPECT_EQ(key_of(d), "loss.decoder");
    d = minimal();
    d["replay"] = {{"max_deviation", -2.0}};
    EXPECT_NE(key_of(d), "<none>");
}

TEST(Config, ResolvedDocumentReproducesConfig) {
    json d = minimal();
    d["dataset"] = {{"kind", "blobs"}, {"classes", 6}, {"dim", 5}, {"std", 0.1}};
    d["replay"] = {{"fraction", 0.3}};
    d["epochs"] = {{"autoencoder", 2}, {"flow", 3}, {"head", 4}};
    d["seed"] = 7;
    ExperimentConfig c = parse_config(d);
    const json echoed = to_json(c);
    ExperimentConfig again = parse_config(echoed);
    EXPECT_EQ(to_json(again), echoed);
    EXPECT_EQ(config_hash(again), config_hash(c));
}

TEST(Config, HashIgnoresSeedAndOutput) {
    ExperimentConfig a = parse_config(minimal());
    ExperimentConfig b = a;
    b.seed = 99;
    b.output_dir = "/tmp/elsewhere";
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.loss.lambda = 0.5;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, PathsResolveAgainstConfigDirectoryThenDataRoot) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "prer_cfg_paths";
    const fs::path data = fs::temp_directory_path() / "prer_cfg_data";
    fs::create_directories(dir);
    fs::create_directories(data / "mnist");
    std::ofstream(dir / "local.idx") << "x";
    std::ofstream(data / "mnist" / "remote.idx") << "x";
    json d = minimal();
    d["dataset"] = {{"kind", "idx"}, {"images", "local.idx"}, {"labels", "mnist/remote.idx"}};
    setenv("PRER_DATA_DIR", data.c_str(), 1);
    ExperimentConfig c = parse_config(d, dir);
    unsetenv("PRER_DATA_DIR");
    EXPECT_EQ(c.dataset.images, (dir / "local.idx").lexically_normal());
    EXPECT_EQ(c.dataset.labels, (data / "mnist" / "remote.idx").lexically_normal());
    fs::remove_all(dir);
    fs::remove_all(data);
}

TEST(Config, MalformedFile) {
    namespace fs = std::filesystem;
    const fs::path p = fs::temp_directory_path() / "prer_bad_config.json";
    std::ofstream(p) << "{ \"schema\": ";
    EXPECT_THROW(load_config(p), ConfigError);
    fs::remove(p);
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}
