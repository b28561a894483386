// Hot-path microbenchmarks: windowing, boosting, the recurrent cascade in
// both directions, and the dense corrector. Fixtures are built once and
// reused across iterations; sizes match a realistic single-station cell.

#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include "aircorrect/boosting.hpp"
#include "aircorrect/corrector.hpp"
#include "aircorrect/recurrent.hpp"
#include "aircorrect/rng.hpp"
#include "aircorrect/synthetic.hpp"
#include "aircorrect/windows.hpp"

namespace {

using namespace aircorrect;

const StationTable& station_4000h() {
    static const StationTable table = generate_synthetic(7, 4000, BiasSpec{15.0, 1.1, 3.0});
    return table;
}

const WindowedDataset& windows_h24() {
    static const WindowedDataset ds = build_temporal_windows(station_4000h(), "pm25", 24);
    return ds;
}

void bench_build_windows(benchmark::State& state) {
    const StationTable& table = station_4000h();
    for (auto _ : state) {
        WindowedDataset ds = build_temporal_windows(table, "pm25", 24);
        benchmark::DoNotOptimize(ds.inputs.data());
    }
}
BENCHMARK(bench_build_windows)->Unit(benchmark::kMillisecond);

void bench_gbt_fit(benchmark::State& state) {
    const WindowedDataset& ds = windows_h24();
    GBTConfig cfg;
    cfg.n_estimators = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        GBTModel model = fit_gbt(ds.inputs, ds.targets, cfg, ds.feature_names);
        benchmark::DoNotOptimize(model.trees.data());
    }
}
BENCHMARK(bench_gbt_fit)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

CascadeNet paper_cascade(CellKind cell) {
    CascadeConfig cfg;
    cfg.cell = cell;
    CascadeNet net = make_cascade(cfg, kTemporalFeatureCount, 11);
    return net;
}

void bench_cascade_forward(benchmark::State& state) {
    const CascadeNet net =
        paper_cascade(state.range(0) == 0 ? CellKind::lstm : CellKind::gru);
    Rng rng(3);
    Eigen::MatrixXd X(128, kTemporalFeatureCount);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.uniform(0.0, 1.0);
    for (auto _ : state) {
        Eigen::VectorXd out = cascade_forward_batch(net, X);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(bench_cascade_forward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void bench_cascade_bptt(benchmark::State& state) {
    CascadeNet net = paper_cascade(state.range(0) == 0 ? CellKind::lstm : CellKind::gru);
    Rng rng(5);
    Eigen::MatrixXd X(128, kTemporalFeatureCount);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.uniform(0.0, 1.0);
    Eigen::VectorXd y(128);
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = rng.uniform(0.0, 1.0);
    for (auto _ : state) {
        GradientResult res = bptt_gradients(net, X, y);
        benchmark::DoNotOptimize(res.grads.data());
    }
}
BENCHMARK(bench_cascade_bptt)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void bench_dense_forward(benchmark::State& state) {
    DenseNet net = make_dense_net(DenseNetConfig{}, 8, 17);
    Rng rng(9);
    Eigen::MatrixXd X(512, 8);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.uniform(0.0, 1.0);
    for (auto _ : state) {
        Eigen::VectorXd out = dense_forward_batch(net, X);
        benchmark::DoNotOptimize(out.data());
    }
}
BENCHMARK(bench_dense_forward)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
