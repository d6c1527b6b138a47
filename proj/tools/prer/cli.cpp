#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "prer/config.hpp"
#include "prer/continual.hpp"
#include "prer/error.hpp"
#include "prer/metrics.hpp"

namespace prer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

Summary summarize(const std::vector<double>& values) {
    Summary s;
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() < 2) return s;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    return s;
}

namespace {

struct RunOptions {
    fs::path config;
    std::uint64_t seed = 0;
    fs::path out;
    std::string method = "prer";
};

struct ReportOptions {
    std::vector<fs::path> runs;
    fs::path out;
};

struct SampleOptions {
    fs::path checkpoint;
    std::vector<int> classes;
    std::size_t count = 100;
    bool pca = false;
    fs::path out;
    std::uint64_t seed = 0;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

int run(const RunOptions& o, std::ostream& out, std::string& progress) {
    ExperimentConfig cfg = load_config(o.config);
    cfg.seed = o.seed;
    cfg.output_dir = o.out;
    if (o.method == "naive") cfg = cfg.as_naive();
    cfg.validate();
    const auto res = continual::run_experiment(
        cfg, [&](continual::Phase phase, std::size_t task, bool after, continual::Learner&) {
            progress = "task " + std::to_string(task + 1) + ", " + continual::to_string(phase) + " phase" +
                       (after ? " (finished)" : "");
        });
    out << "method    " << o.method << "\n"
        << "seed      " << o.seed << "\n"
        << "accuracy  " << fmt(res.report.accuracy) << "\n"
        << "bwt       " << (res.report.bwt_defined ? fmt(res.report.bwt) : std::string("undefined")) << "\n"
        << "memory    " << res.report.memory_floats << " floats\n"
        << "output    " << o.out.string() << "\n";
    return ok;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(p.string() + ": " + e.what());
    }
}

int report(const ReportOptions& o, std::ostream& out, std::ostream& err) {
    std::vector<double> acc, bwt;
    std::string hash, method;
    for (const auto& dir : o.runs) {
        const json m = read_json(dir / "metrics.json");
        std::string h;
        try {
            h = m.at("config_hash").get<std::string>();
            if (method.empty()) method = m.value("method", "");
            acc.push_back(m.at("accuracy").get<double>());
            bwt.push_back(m.at("bwt").get<double>());
        } catch (const json::exception& e) {
            throw DataError((dir / "metrics.json").string() + ": " + e.what());
        }
        if (hash.empty()) hash = h;
        if (h != hash) {
            err << "error: " << dir.string() << " was produced by a different configuration (" << h << " vs " << hash
                << "); refusing to aggregate\n";
            return config_error;
        }
    }
    const Summary a = summarize(acc), b = summarize(bwt);
    out << "runs      " << o.runs.size() << "\n"
        << "method    " << method << "\n"
        << "config    " << hash << "\n"
        << "accuracy  " << fmt(a.mean) << " +/- " << fmt(a.std) << "\n"
        << "bwt       " << fmt(b.mean) << " +/- " << fmt(b.std) << "\n";
    if (!o.out.empty()) {
        const json doc = {{"runs", o.runs.size()},
                          {"method", method},
                          {"config_hash", hash},
                          {"accuracy", {{"mean", a.mean}, {"std", a.std}, {"values", acc}}},
                          {"bwt", {{"mean", b.mean}, {"std", b.std}, {"values", bwt}}}};
        std::ofstream f(o.out);
        if (!(f << doc.dump(2) << "\n")) throw DataError("cannot write " + o.out.string());
    }
    return ok;
}

int task_of(const continual::RestoredModel& m, int cls) {
    for (std::size_t t = 0; t < m.task_classes.size(); ++t)
        if (std::find(m.task_classes[t].begin(), m.task_classes[t].end(), cls) != m.task_classes[t].end())
            return static_cast<int>(t);
    return -1;
}

int sample(const SampleOptions& o, std::ostream& out, std::ostream& err) {
    const auto model = continual::restore_checkpoint(o.checkpoint);
    if (!model.flow) {
        err << "error: " << o.checkpoint.string() << " holds no flow (naive run)\n";
        return config_error;
    }
    for (int c : o.classes) {
        if (c < 0 || c >= model.num_classes) {
            err << "error: class " << c << " outside [0, " << model.num_classes << ")\n";
            return config_error;
        }
    }
    const fs::path dir = o.out.empty() ? o.checkpoint.parent_path() : o.out;
    if (!dir.empty()) fs::create_directories(dir);

    std::vector<int> labels;
    for (int c : o.classes) labels.insert(labels.end(), o.count, c);
    const std::size_t d = model.flow->dim();
    Tensor z;
    if (!labels.empty()) {
        Rng rng(o.seed);
        z = continual::sample_embeddings(*model.flow, labels, rng, model.config.replay_max_deviation);
    }

    auto open = [&](const fs::path& p) {
        std::ofstream f(p);
        if (!f) throw DataError("cannot write " + p.string());
        return f;
    };
    {
        auto f = open(dir / "samples.csv");
        f << "global_class,task";
        for (std::size_t k = 0; k < d; ++k) f << ",z" << k;
        f << "\n";
        for (std::size_t i = 0; i < labels.size(); ++i) {
            f << labels[i] << "," << task_of(model, labels[i]);
            for (std::size_t k = 0; k < d; ++k) f << "," << fmt(z.at(i, k));
            f << "\n";
        }
    }
    out << "wrote " << labels.size() << " samples to " << (dir / "samples.csv").string() << "\n";
    if (o.pca) {
        auto f = open(dir / "embeddings_pca.csv");
        f << "pc1,pc2,global_class,task\n";
        if (!labels.empty()) {
            const auto p = metrics::pca_project(z, 2);
            if (p.degenerate) err << "warning: samples span fewer than two directions\n";
            for (std::size_t i = 0; i < labels.size(); ++i)
                f << fmt(p.projection.at(i, 0)) << "," << fmt(p.projection.at(i, 1)) << "," << labels[i] << ","
                  << task_of(model, labels[i]) << "\n";
        }
        out << "wrote projection to " << (dir / "embeddings_pca.csv").string() << "\n";
    }
    return ok;
}

}  // namespace

int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Continual learning with flow-based pseudo-rehearsal", "prer"};
    app.require_subcommand(1);

    RunOptions ro;
    auto* run_cmd = app.add_subcommand("run", "Train one seeded experiment");
    run_cmd->add_option("--config", ro.config, "Experiment config (JSON)")->required();
    run_cmd->add_option("--seed", ro.seed, "Seed")->required();
    run_cmd->add_option("--out", ro.out, "Output directory")->required();
    run_cmd->add_option("--method", ro.method, "prer or naive")->check(CLI::IsMember({"prer", "naive"}));

    ReportOptions po;
    auto* report_cmd = app.add_subcommand("report", "Aggregate metrics over runs");
    report_cmd->add_option("--runs", po.runs, "Run directories")->required()->expected(1, -1);
    report_cmd->add_option("--out", po.out, "Also write the summary as JSON");

    SampleOptions so;
    auto* sample_cmd = app.add_subcommand("sample", "Draw class-conditional embeddings from a checkpoint");
    sample_cmd->add_option("--checkpoint", so.checkpoint, "Checkpoint manifest")->required();
    sample_cmd->add_option("--class", so.classes, "Global class ids")->required()->delimiter(',')->expected(1, -1);
    sample_cmd->add_option("--count", so.count, "Samples per class");
    sample_cmd->add_flag("--pca", so.pca, "Also write a 2-D PCA projection");
    sample_cmd->add_option("--out", so.out, "Output directory (default: next to the checkpoint)");
    sample_cmd->add_option("--seed", so.seed, "Sampling seed");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ok : config_error;
    }

    std::string progress = "before training";
    try {
        if (*run_cmd) return run(ro, out, progress);
        if (*report_cmd) return report(po, out, err);
        return sample(so, out, err);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << "\n";
        return config_error;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return data_error;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        if (*run_cmd)
            err << "  config " << ro.config.string() << ", seed " << ro.seed << ", method " << ro.method << ", at "
                << progress << "\n";
        return numeric_error;
    } catch (const DomainError& e) {
        err << "numeric error: " << e.what() << "\n";
        return numeric_error;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return data_error;
    }
}

}  // namespace prer::cli
