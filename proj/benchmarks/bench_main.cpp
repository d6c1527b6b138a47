#include <benchmark/benchmark.h>

#include <vector>

#include "prer/flow.hpp"
#include "prer/models.hpp"
#include "prer/nn.hpp"
#include "prer/ops.hpp"
#include "prer/optim.hpp"
#include "prer/rng.hpp"

using namespace prer;

namespace {

flow::FlowModel desk_flow(Rng& rng) {
    flow::FlowConfig cfg;
    cfg.dim = 50;
    cfg.levels = 2;
    cfg.blocks_per_level = 10;
    cfg.num_classes = 10;
    cfg.condition_placement = flow::ConditionPlacement::all;
    return flow::FlowModel(cfg, rng);
}

std::vector<int> labels(std::size_t n) {
    std::vector<int> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = static_cast<int>(i % 10);
    return c;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    Tensor a = Tensor::uniform({n, n}, -1, 1, rng), b = Tensor::uniform({n, n}, -1, 1, rng);
    autograd::NoGradGuard guard;
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

static void BM_FlowNllStep(benchmark::State& state) {
    Rng rng(2);
    auto model = desk_flow(rng);
    Optimizer opt(tensors_of(model.parameters()), {OptimizerKind::adam, 1e-3});
    Tensor z = Tensor::normal({64, 50}, rng);
    const auto cls = labels(64);
    for (auto _ : state) {
        autograd::backward(model.nll_loss(z, cls));
        opt.step();
    }
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_FlowNllStep);

static void BM_FlowSample(benchmark::State& state) {
    Rng rng(3);
    auto model = desk_flow(rng);
    const auto cls = labels(static_cast<std::size_t>(state.range(0)));
    {
        autograd::NoGradGuard guard;
        model.log_prob(Tensor::normal({cls.size(), 50}, rng), cls, flow::Mode::train);
    }
    for (auto _ : state) benchmark::DoNotOptimize(model.sample(cls, rng));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FlowSample)->Arg(32)->Arg(1000);

static void BM_AutoencoderStep(benchmark::State& state) {
    Rng rng(4);
    models::EncoderConfig cfg;
    cfg.kind = state.range(0) == 0 ? models::EncoderKind::mlp : models::EncoderKind::conv3;
    cfg.input = {1, 28, 28};
    cfg.hidden = {256};
    models::Encoder enc(cfg, rng);
    models::Decoder dec(cfg, rng);
    auto params = enc.parameters();
    for (auto& p : dec.parameters()) params.push_back(p);
    Optimizer opt(tensors_of(params), {OptimizerKind::adam, 1e-3});
    Tensor x = Tensor::uniform({64, 784}, 0, 1, rng);
    for (auto _ : state) {
        autograd::backward(models::autoencoder_loss(enc, dec, x, 1e-3));
        opt.step();
    }
    state.SetLabel(state.range(0) == 0 ? "mlp" : "conv3");
    state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_AutoencoderStep)->Arg(0)->Arg(1);
BENCHMARK_MAIN();
