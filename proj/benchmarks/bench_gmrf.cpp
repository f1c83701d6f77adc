#include <benchmark/benchmark.h>

#include "seqcon/effects.hpp"
#include "seqcon/factor.hpp"
#include "seqcon/gaussian.hpp"

using namespace seqcon;

namespace {

EffectSpec kron_field(int nt, int grid) {
    EffectSpec kron;
    kron.kind = EffectKind::kronecker;
    EffectSpec time;
    time.kind = EffectKind::ar1;
    time.size = nt;
    time.hyper["tau"] = HyperBinding{"", 1.0};
    time.hyper["rho"] = HyperBinding{"", 0.7};
    EffectSpec space;
    space.kind = EffectKind::lattice_matern;
    space.nx = grid;
    space.ny = grid;
    space.hyper["log_range"] = HyperBinding{"", 1.2};
    space.hyper["log_sd"] = HyperBinding{"", 0.0};
    kron.children = {time, space};
    return kron;
}

}  // namespace

static void BuildKroneckerPrecision(benchmark::State& state) {
    const EffectSpec spec = kron_field(static_cast<int>(state.range(0)), 8);
    for (auto _ : state) {
        auto q = build_effect_precision(spec, {});
        benchmark::DoNotOptimize(q.matrix.valuePtr());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BuildKroneckerPrecision)->RangeMultiplier(2)->Range(8, 64)->Complexity();

static void FactorizeKronecker(benchmark::State& state) {
    const auto q = build_effect_precision(kron_field(static_cast<int>(state.range(0)), 8), {});
    for (auto _ : state) {
        CholeskyFactor f(q.matrix);
        benchmark::DoNotOptimize(f.log_det());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(FactorizeKronecker)->RangeMultiplier(2)->Range(8, 64)->Complexity();

static void SelectedInversion(benchmark::State& state) {
    const auto q = build_effect_precision(kron_field(static_cast<int>(state.range(0)), 8), {});
    CholeskyFactor f(q.matrix);
    for (auto _ : state) {
        Vector d = f.inverse_diagonal();
        benchmark::DoNotOptimize(d.data());
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(SelectedInversion)->RangeMultiplier(2)->Range(8, 32)->Complexity();

static void SampleField(benchmark::State& state) {
    const auto q = build_effect_precision(kron_field(static_cast<int>(state.range(0)), 8), {});
    const GaussianDensity d = make_density(Vector::Zero(q.dim()), q);
    std::uint64_t seed = 0;
    for (auto _ : state) {
        Vector x = sample_gmrf(d, ++seed);
        benchmark::DoNotOptimize(x.data());
    }
}
BENCHMARK(SampleField)->Arg(16)->Arg(64);
