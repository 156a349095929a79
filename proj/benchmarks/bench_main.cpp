#include "entryfx/dgp.hpp"
#include "entryfx/did_direct.hpp"
#include "entryfx/drdid.hpp"
#include "entryfx/inference.hpp"
#include "entryfx/random.hpp"
#include "entryfx/spatial.hpp"

#include <benchmark/benchmark.h>

using namespace entryfx;

namespace {

/// Full-size synthetic design: 78 municipalities, 12 industries, 45 quarters.
const dgp::Simulation& world() {
    static const dgp::Simulation sim = [] {
        dgp::DgpConfig c;
        c.treated_share = 0.3;
        c.g_min = 10;
        c.g_max = 28;
        c.direct = 0.2;
        c.satt = {-0.1, 0.0, 0.0};
        c.seed = 3;
        return dgp::simulate(c);
    }();
    return sim;
}

void BM_Exposure(benchmark::State& state) {
    const auto& sim = world();
    const exposure::Layout layout(sim.panel, sim.weights);
    for (auto _ : state) benchmark::DoNotOptimize(exposure::compute_exposure(layout, sim.cohorts));
}
BENCHMARK(BM_Exposure)->Unit(benchmark::kMillisecond);

void BM_GroupTime(benchmark::State& state) {
    const auto& sim = world();
    for (auto _ : state) {
        auto grid = direct::cs_group_time(sim.panel, sim.cohorts, panel::Outcome::log_covered_emp, 2,
                                          direct::Mode::balanced);
        benchmark::DoNotOptimize(direct::aggregate_event_time(grid));
    }
}
BENCHMARK(BM_GroupTime)->Unit(benchmark::kMillisecond);

void BM_MultiplierBand(benchmark::State& state) {
    const auto& sim = world();
    const auto grid =
        direct::cs_group_time(sim.panel, sim.cohorts, panel::Outcome::log_covered_emp, 2, direct::Mode::balanced);
    const auto base = direct::aggregate_event_time(grid);
    for (auto _ : state) {
        auto path = base;
        direct::multiplier_band(path, static_cast<int>(state.range(0)), 0.05, 1);
        benchmark::DoNotOptimize(path.crit);
    }
}
BENCHMARK(BM_MultiplierBand)->Arg(199)->Arg(999)->Unit(benchmark::kMillisecond);

void BM_Imputation(benchmark::State& state) {
    const auto& sim = world();
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            direct::bjs_impute(sim.panel, sim.cohorts, panel::Outcome::log_covered_emp, 2, direct::Mode::balanced));
    }
}
BENCHMARK(BM_Imputation)->Unit(benchmark::kMillisecond);

void BM_DrDidSlice(benchmark::State& state) {
    const auto& sim = world();
    const auto reg = drdid::build_slice_regressors(sim.panel, sim.cohorts, sim.exposure, {},
                                                   panel::Outcome::log_covered_emp, {0, 4}, drdid::SampleOptions{});
    const auto folds = drdid::make_folds(sim.panel.geoids(), 5, 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(drdid::estimate_slice(reg, folds, sim.panel, drdid::EstimateOptions{}));
    }
}
BENCHMARK(BM_DrDidSlice)->Unit(benchmark::kMillisecond);

void BM_MoranPermutation(benchmark::State& state) {
    const auto& sim = world();
    Rng rng(7);
    Eigen::VectorXd v(static_cast<Eigen::Index>(sim.weights.weights.size()));
    for (auto& x : v) x = standard_normal(rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(spatial::morans_perm_test(v, sim.weights.weights, static_cast<int>(state.range(0)), 1));
    }
}
BENCHMARK(BM_MoranPermutation)->Arg(999)->Unit(benchmark::kMillisecond);

void BM_ShacVariance(benchmark::State& state) {
    const auto& sim = world();
    const auto reg = drdid::build_slice_regressors(sim.panel, sim.cohorts, sim.exposure, {},
                                                   panel::Outcome::log_covered_emp, {0, 4}, drdid::SampleOptions{});
    const auto est = drdid::estimate_slice(reg, drdid::make_folds(sim.panel.geoids(), 5, 1), sim.panel,
                                           drdid::EstimateOptions{});
    const auto dist = spatial::pairwise_distances_km(sim.graph);
    for (auto _ : state) {
        benchmark::DoNotOptimize(inference::shac_se(est.X, est.u, est.muni, est.time, dist, 75.0));
    }
}
BENCHMARK(BM_ShacVariance)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
