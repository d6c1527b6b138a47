#include "prer/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

#include "prer/error.hpp"

namespace prer {

using nlohmann::json;

void ExperimentConfig::validate() const {
    if (classes_per_task < 2) throw ConfigError("classes_per_task", "must be at least 2");
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("train_ratio", "must lie in (0, 1)");
    if (encoder.embedding_dim < 2) throw ConfigError("model.embedding_dim", "must be at least 2");
    if (batch_size < 2) throw ConfigError("batch_size", "must be at least 2");
    if (!(head_dropout >= 0.0 && head_dropout < 1.0)) throw ConfigError("model.head_dropout", "must lie in [0, 1)");
    if (replay_fraction && !(*replay_fraction >= 0.0 && *replay_fraction < 1.0))
        throw ConfigError("replay.fraction", "must lie in [0, 1)");
    if (!(std::isfinite(replay_max_deviation) && replay_max_deviation >= 0.0))
        throw ConfigError("replay.max_deviation", "must be finite and non-negative");
    if (flow_levels == 0 || flow_blocks == 0) throw ConfigError("flow", "levels and blocks must be positive");
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw ConfigError("flow.bn_momentum", "must lie in [0, 1)");
    loss.validate();
    if (!flow_enabled && (!replay_fraction || *replay_fraction > 0.0 || loss.lambda > 0.0))
        throw ConfigError("flow.enabled", "replay and the embedding regularizer need the flow; set replay.fraction and loss.lambda to 0");
    for (auto [key, o] : {std::pair{"optim.autoencoder", &autoencoder_optimizer},
                          std::pair{"optim.flow", &flow_optimizer}, std::pair{"optim.head", &head_optimizer}})
        if (!(std::isfinite(o->learning_rate) && o->learning_rate > 0.0))
            throw ConfigError(std::string(key) + ".lr", "must be positive");
    try {
        flow::FlowConfig fc;
        fc.dim = encoder.embedding_dim;
        fc.levels = flow_levels;
        (void)fc.level_dims();
    } catch (const ConfigError& e) {
        throw ConfigError("flow.levels", e.what());
    }
}

double ExperimentConfig::replay_fraction_at(std::size_t t) const {
    if (t <= 1) return 0.0;
    if (replay_fraction) return *replay_fraction;
    return std::min(0.5, static_cast<double>(t - 1) / static_cast<double>(t));
}

ExperimentConfig ExperimentConfig::as_naive() const {
    ExperimentConfig c = *this;
    c.replay_fraction = 0.0;
    c.loss.lambda = 0.0;
    c.flow_enabled = false;
    return c;
}

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Reader over one JSON object that remembers which keys were consumed.
class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }
    ~Obj() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError(join(path_, k), "unknown key");
    }
    Obj(const Obj&) = delete;
    Obj& operator=(const Obj&) = delete;

    bool has(const std::string& k) const { return j_.contains(k); }
    const json* get(const std::string& k) {
        seen_.insert(k);
        auto it = j_.find(k);
        return it == j_.end() || it->is_null() ? nullptr : &*it;
    }
    std::string path(const std::string& k) const { return join(path_, k); }

    template <typename T>
    void read(const std::string& k, T& out) {
        const json* v = get(k);
        if (!v) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v->is_boolean()) throw ConfigError(path(k), "expected a boolean");
                out = v->get<bool>();
            } else if constexpr (std::is_integral_v<T>) {
                if (!v->is_number_integer()) throw ConfigError(path(k), "expected an integer");
                if (std::is_unsigned_v<T> && v->get<long long>() < 0) throw ConfigError(path(k), "must be non-negative");
                out = v->get<T>();
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v->is_number()) throw ConfigError(path(k), "expected a number");
                out = v->get<T>();
            } else {
                if (!v->is_string()) throw ConfigError(path(k), "expected a string");
                out = v->get<std::string>();
            }
        } catch (const json::exception& e) {
            throw ConfigError(path(k), e.what());
        }
    }

    template <typename Enum, typename Parse>
    void read_enum(const std::string& k, Enum& out, Parse parse) {
        std::string s;
        if (!get(k)) return;
        read(k, s);
        try {
            out = parse(s);
        } catch (const Error& e) {
            throw ConfigError(path(k), e.what());
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::filesystem::path resolve_path(const std::string& raw, const std::filesystem::path& base) {
    std::filesystem::path p(raw);
    if (p.is_absolute()) return p;
    const auto local = base / p;
    if (std::filesystem::exists(local)) return local.lexically_normal();
    if (const char* root = std::getenv("PRER_DATA_DIR")) {
        const auto fallback = std::filesystem::path(root) / p;
        if (std::filesystem::exists(fallback)) return fallback.lexically_normal();
    }
    return local.lexically_normal();
}

void read_optimizer(Obj& parent, const std::string& key, OptimizerSettings& o) {
    const json* v = parent.get(key);
    if (!v) return;
    Obj obj(*v, parent.path(key));
    obj.read_enum("kind", o.kind, parse_optimizer_kind);
    obj.read("lr", o.learning_rate);
    obj.read("beta1", o.beta1);
    obj.read("beta2", o.beta2);
    obj.read("epsilon", o.epsilon);
}

json optimizer_json(const OptimizerSettings& o) {
    return {{"kind", to_string(o.kind)}, {"lr", o.learning_rate}, {"beta1", o.beta1}, {"beta2", o.beta2},
            {"epsilon", o.epsilon}};
}

}  // namespace

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    {
        Obj root(doc, "");
        const json* schema = root.get("schema");
        if (!schema) throw ConfigError("schema", std::string("missing; expected \"") + kConfigSchema + "\"");
        if (!schema->is_string() || schema->get<std::string>() != kConfigSchema)
            throw ConfigError("schema", std::string("unsupported; expected \"") + kConfigSchema + "\"");

        if (const json* d = root.get("dataset")) {
            Obj ds(*d, "dataset");
            std::string kind = "blobs";
            ds.read("kind", kind);
            if (kind == "idx") {
                c.dataset.kind = DatasetConfig::Kind::idx;
                std::string images, labels;
                ds.read("images", images);
                ds.read("labels", labels);
                if (images.empty()) throw ConfigError("dataset.images", "required for idx datasets");
                if (labels.empty()) throw ConfigError("dataset.labels", "required for idx datasets");
                c.dataset.images = resolve_path(images, base_dir);
                c.dataset.labels = resolve_path(labels, base_dir);
                ds.read("max_per_class", c.dataset.max_per_class);
            } else if (kind == "blobs") {
                c.dataset.kind = DatasetConfig::Kind::blobs;
                ds.read("classes", c.dataset.classes);
                ds.read("samples_per_class", c.dataset.samples_per_class);
                ds.read("dim", c.dataset.dim);
                ds.read("std", c.dataset.std);
                ds.read("seed", c.dataset.blob_seed);
                if (c.dataset.classes < 2) throw ConfigError("dataset.classes", "must be at least 2");
                if (c.dataset.dim == 0) throw ConfigError("dataset.dim", "must be positive");
                if (c.dataset.samples_per_class < 2) throw ConfigError("dataset.samples_per_class", "must be at least 2");
                if (!(c.dataset.std >= 0.0)) throw ConfigError("dataset.std", "must be non-negative");
            } else {
                throw ConfigError("dataset.kind", "expected \"idx\" or \"blobs\", got \"" + kind + "\"");
            }
        }
        root.read("classes_per_task", c.classes_per_task);
        root.read("train_ratio", c.train_ratio);

        if (const json* m = root.get("model")) {
            Obj mo(*m, "model");
            mo.read_enum("encoder", c.encoder.kind, models::parse_encoder_kind);
            mo.read("embedding_dim", c.encoder.embedding_dim);
            if (const json* h = mo.get("hidden")) {
                if (!h->is_array()) throw ConfigError("model.hidden", "expected an array of widths");
                c.encoder.hidden.clear();
                for (const auto& w : *h) {
                    if (!w.is_number_integer() || w.get<long long>() <= 0)
                        throw ConfigError("model.hidden", "widths must be positive integers");
                    c.encoder.hidden.push_back(w.get<std::size_t>());
                }
            }
            mo.read("width_factor", c.encoder.width_factor);
            mo.read("head_dropout", c.head_dropout);
        }
        if (const json* f = root.get("flow")) {
            Obj fo(*f, "flow");
            fo.read("enabled", c.flow_enabled);
            fo.read("levels", c.flow_levels);
            fo.read("blocks_per_level", c.flow_blocks);
            fo.read_enum("scale", c.scale_mode, flow::parse_scale_mode);
            fo.read_enum("condition", c.condition_placement, flow::parse_condition_placement);
            fo.read("bn_momentum", c.bn_momentum);
        }
        if (const json* o = root.get("optim")) {
            Obj oo(*o, "optim");
            read_optimizer(oo, "autoencoder", c.autoencoder_optimizer);
            read_optimizer(oo, "flow", c.flow_optimizer);
            read_optimizer(oo, "head", c.head_optimizer);
        }
        if (const json* e = root.get("epochs")) {
            Obj eo(*e, "epochs");
            eo.read("autoencoder", c.epochs.autoencoder);
            eo.read("flow", c.epochs.flow);
            eo.read("head", c.epochs.head);
        }
        root.read("batch_size", c.batch_size);
        if (const json* r = root.get("replay")) {
            Obj ro(*r, "replay");
            if (const json* p = ro.get("fraction")) {
                if (p->is_string()) {
                    if (p->get<std::string>() != "auto")
                        throw ConfigError("replay.fraction", "expected a number or \"auto\"");
                } else {
                    double v = 0.0;
                    ro.read("fraction", v);
                    c.replay_fraction = v;
                }
            }
            ro.read("max_deviation", c.replay_max_deviation);
        }
        if (const json* l = root.get("loss")) {
            Obj lo(*l, "loss");
            lo.read("beta", c.loss.beta);
            lo.read("lambda", c.loss.lambda);
            lo.read_enum("distance", c.loss.distance, models::parse_distance);
            lo.read_enum("decoder", c.loss.decoder, models::parse_regularizer_decoder);
            lo.read("regularize_decoder", c.loss.regularize_decoder);
        }
        root.read("seed", c.seed);
        root.read("checkpoints", c.checkpoints);
        std::string out;
        root.read("output_dir", out);
        if (!out.empty()) c.output_dir = std::filesystem::path(out).is_absolute() ? std::filesystem::path(out) : base_dir / out;
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("<file>", path.string() + ": " + e.what());
    }
    return parse_config(doc, path.parent_path());
}

json to_json(const ExperimentConfig& c) {
    json ds;
    if (c.dataset.kind == DatasetConfig::Kind::idx) {
        ds = {{"kind", "idx"},
              {"images", c.dataset.images.string()},
              {"labels", c.dataset.labels.string()},
              {"max_per_class", c.dataset.max_per_class}};
    } else {
        ds = {{"kind", "blobs"},          {"classes", c.dataset.classes}, {"samples_per_class", c.dataset.samples_per_class},
              {"dim", c.dataset.dim},      {"std", c.dataset.std},         {"seed", c.dataset.blob_seed}};
    }
    json doc = {
        {"schema", kConfigSchema},
        {"dataset", ds},
        {"classes_per_task", c.classes_per_task},
        {"train_ratio", c.train_ratio},
        {"model",
         {{"encoder", models::to_string(c.encoder.kind)},
          {"embedding_dim", c.encoder.embedding_dim},
          {"hidden", c.encoder.hidden},
          {"width_factor", c.encoder.width_factor},
          {"head_dropout", c.head_dropout}}},
        {"flow",
         {{"enabled", c.flow_enabled},
          {"levels", c.flow_levels},
          {"blocks_per_level", c.flow_blocks},
          {"scale", flow::to_string(c.scale_mode)},
          {"condition", flow::to_string(c.condition_placement)},
          {"bn_momentum", c.bn_momentum}}},
        {"optim",
         {{"autoencoder", optimizer_json(c.autoencoder_optimizer)},
          {"flow", optimizer_json(c.flow_optimizer)},
          {"head", optimizer_json(c.head_optimizer)}}},
        {"epochs", {{"autoencoder", c.epochs.autoencoder}, {"flow", c.epochs.flow}, {"head", c.epochs.head}}},
        {"batch_size", c.batch_size},
        {"replay",
         {{"fraction", c.replay_fraction ? json(*c.replay_fraction) : json("auto")},
          {"max_deviation", c.replay_max_deviation}}},
        {"loss",
         {{"beta", c.loss.beta},
          {"lambda", c.loss.lambda},
          {"distance", models::to_string(c.loss.distance)},
          {"decoder", models::to_string(c.loss.decoder)},
          {"regularize_decoder", c.loss.regularize_decoder}}},
        {"seed", c.seed},
        {"checkpoints", c.checkpoints},
    };
    if (!c.output_dir.empty()) doc["output_dir"] = c.output_dir.string();
    return doc;
}

std::string config_hash(const ExperimentConfig& c) {
    json doc = to_json(c);
    doc.erase("seed");
    doc.erase("output_dir");
    doc.erase("checkpoints");
    const std::string text = doc.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace prer
