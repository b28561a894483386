#pragma once

// Experiment orchestration: JSON config parsing with whitelisted keys, the
// per-cell training pipeline (windows -> importance -> prune -> cascade ->
// corrector), the model-comparison and horizon-sweep drivers, and report
// emission. Cells run in parallel; file output happens in a fixed order so
// repeated runs with one seed produce byte-identical artifacts.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aircorrect/baselines.hpp"
#include "aircorrect/boosting.hpp"
#include "aircorrect/bundle.hpp"
#include "aircorrect/corrector.hpp"
#include "aircorrect/recurrent.hpp"
#include "aircorrect/report.hpp"
#include "aircorrect/station.hpp"
#include "aircorrect/synthetic.hpp"

namespace aircorrect {

struct SyntheticSpec {
    std::uint64_t seed = 7;
    std::size_t n_hours = 4000;
    BiasSpec bias;
    SyntheticOptions options;
};

struct ExperimentConfig {
    bool use_synthetic = false;
    std::filesystem::path csv_path;  // when not synthetic
    SyntheticSpec synthetic;

    std::vector<std::string> stations;    // empty selects every station
    std::vector<std::string> pollutants;  // at least one, validated names
    std::vector<int> horizons{24};
    std::string preset = "ptc";
    double prune_threshold = -1.0;  // negative: default 0.5 / feature count
    double train_fraction = 0.8;
    bool calendar_features = false;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "aircorrect-out";

    TrainingConfig training;  // .seed is ignored; per-cell seeds are derived
    GBTConfig gbt;
    CascadeConfig cascade;  // cell kind comes from the preset wiring
    DenseNetConfig dense;
    ImputeOptions impute;
    double analog_d1_weight = 1.0;
    double analog_d2_weight = 1.0;
    bool analog_multiplicative = false;

    std::vector<std::string> warnings;  // normalization notes from parsing
};

ExperimentConfig parse_config(const std::filesystem::path& path);

/// `origin` names the source in error messages.
ExperimentConfig parse_config_json(const std::string& text, const std::string& origin);

/// Normalized JSON echo of every effective value; written to the output
/// directory so a run can be reproduced from its artifacts alone.
std::string config_echo(const ExperimentConfig& config);

struct RunArtifacts {
    std::filesystem::path output_dir;
    std::filesystem::path metrics_csv;  // empty when no cell produced rows
    std::filesystem::path manifest;
    std::vector<std::filesystem::path> bundles;
    std::vector<MetricsRow> rows;  // test-split rows in emission order
    std::size_t total_cells = 0;
    std::size_t failed_cells = 0;
};

/// Trains config.preset independently on every (station, pollutant, horizon)
/// cell. Failing cells are recorded in the manifest; the rest proceed.
RunArtifacts run_experiment(const ExperimentConfig& config);

/// All seven comparison models per cell on identical splits and seeds:
/// ptc, gru_xgb, lstm_dnn, dnn_xgb, cmaq24_raw, persistence, analog_ensemble.
RunArtifacts run_comparison(const ExperimentConfig& config);

/// config.preset plus the raw-forecast and persistence baselines across the
/// configured horizons, all evaluated on a shared test period so the metric
/// trend over horizons is comparable.
RunArtifacts horizon_sweep(const ExperimentConfig& config);

/// First target row of the shared sweep test period: the latest first-test-row
/// over the given horizons.
std::size_t shared_min_target_row(std::size_t n_rows, const std::vector<int>& horizons,
                                  double train_fraction);

/// Cell parallelism cap: AIRCORRECT_THREADS when set (floor 1), otherwise the
/// hardware thread count.
std::size_t max_cell_threads();

}  // namespace aircorrect
