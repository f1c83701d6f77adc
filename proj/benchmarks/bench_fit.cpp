#include <benchmark/benchmark.h>

#include "seqcon/fit.hpp"
#include "seqcon/rng.hpp"
#include "seqcon/sequential.hpp"

using namespace seqcon;

namespace {

struct Fixture {
    ModelSpec spec;
    DataTable data{{"y", "st_index", "time"}, 0};
};

// Gaussian observations of an AR1 x lattice field, scaled by slice count.
Fixture st_fixture(int nt) {
    Fixture fx;
    std::string cfg = R"({
      "effects": {"ust": {"kind": "kronecker", "children": [
          {"kind": "ar1", "size": )" + std::to_string(nt) + R"(,
           "hyper": {"tau": 1.0, "rho": "theta_rho"}},
          {"kind": "lattice_matern", "nx": 6, "ny": 6,
           "hyper": {"log_range": "theta_range", "log_sd": "theta_sd"}}]}},
      "fixed": [{"name": "b", "mean": 0, "precision": 0.001}],
      "hyper_priors": {
        "tau_obs": {"type": "loggamma", "shape": 1.0, "rate": 0.05},
        "theta_rho": {"type": "gaussian", "mean": 1.0, "precision": 0.3},
        "theta_range": {"type": "gaussian", "mean": 1.2, "precision": 0.5},
        "theta_sd": {"type": "gaussian", "mean": 0.0, "precision": 0.5}},
      "blocks": [{"family": "gaussian", "link": "identity", "response": "y",
                  "hyper": {"tau": "tau_obs"},
                  "predictor": [{"intercept": "b"}, {"effect": "ust", "index": "st_index"}]}]
    })";
    fx.spec = parse_model_config(cfg);
    Rng rng(99);
    for (int t = 0; t < nt; ++t)
        for (int k = 0; k < 12; ++k) {
            const int cell = static_cast<int>(rng.uniform() * 36);
            fx.data.append_row({{"y", rng.normal()},
                                {"st_index", double(t * 36 + cell)},
                                {"time", double(t)}});
        }
    return fx;
}

}  // namespace

static void LatentGaussianApprox(benchmark::State& state) {
    const Fixture fx = st_fixture(static_cast<int>(state.range(0)));
    LatentModel model(fx.spec, {fx.data});
    const std::vector<double> theta = {1.4, 1.2, 1.0, 0.0};
    const GaussianDensity prior = model.build_prior(theta, {});
    for (auto _ : state) {
        auto approx = gaussian_approx_latent(model, theta, prior);
        benchmark::DoNotOptimize(approx.mean.data());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(LatentGaussianApprox)->RangeMultiplier(2)->Range(8, 64)->Complexity();

static void FullFitVsSequential(benchmark::State& state) {
    const bool sequential = state.range(1) != 0;
    const Fixture fx = st_fixture(static_cast<int>(state.range(0)));
    PartitionPlan plan;
    plan.mode = PartitionPlan::Mode::by_time_blocks;
    plan.time_column = "time";
    const int nt = static_cast<int>(state.range(0));
    plan.groups.assign(4, {});
    for (int t = 0; t < nt; ++t) plan.groups[t / (nt / 4)].push_back(t);
    RunOptions opts;
    opts.fit.points_per_dim_small = 5;
    for (auto _ : state) {
        const auto rep = sequential ? run_sc(fx.spec, {fx.data}, plan, opts)
                                    : run_full(fx.spec, {fx.data}, opts);
        benchmark::DoNotOptimize(rep.fit_wall_time);
    }
}
BENCHMARK(FullFitVsSequential)
    ->Args({16, 0})
    ->Args({16, 1})
    ->Unit(benchmark::kMillisecond)
    ->Iterations(1);

BENCHMARK_MAIN();
