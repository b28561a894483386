#pragma once

// Temporal-pattern windowing and weather-pattern assembly. A sample at target
// row t holds the 24 hourly pollutant lags ending just before issue time
// (rows t-h-24 .. t-h-1 at horizon h) plus the three raw-model forecasts valid
// at t. Weather rows are taken 24 h before target time. Every feature is
// observable strictly before the target.

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "aircorrect/scaler.hpp"
#include "aircorrect/station.hpp"

namespace aircorrect {

inline constexpr int kLagCount = 24;
inline constexpr int kValidHorizons[] = {6, 12, 24, 48, 72};
inline constexpr int kTemporalFeatureCount = kLagCount + 3;

bool is_valid_horizon(int horizon_hours);

struct WindowScalers {
    ScalerParams pollutant;              // shared by the lag columns and the target
    std::array<ScalerParams, 3> cmaq;    // 24/48/72 h forecast columns
    std::size_t train_count = 0;         // leading samples whose rows fit the params
};

struct WindowedDataset {
    Eigen::MatrixXd inputs;    // n x 27, scaled
    Eigen::VectorXd targets;   // n, scaled
    std::vector<std::string> feature_names;
    std::string pollutant;
    int horizon_hours = 0;
    std::vector<std::size_t> target_rows;  // source-table row per sample
    std::vector<std::int64_t> target_timestamps;
    WindowScalers scalers;

    std::size_t n_samples() const { return static_cast<std::size_t>(inputs.rows()); }
};

struct SplitSpec {
    double train_fraction = 0.8;  // chronological; first floor(f*n) samples train
};

/// Builds the scaled 27-feature dataset. Scalers are fit on the training
/// portion only (per split). Throws EmptyDatasetError when the table is too
/// short, ConfigError on an invalid horizon, DegenerateFeatureError when a
/// column is constant over the training span.
WindowedDataset build_temporal_windows(const StationTable& table, const std::string& pollutant,
                                       int horizon_hours, const SplitSpec& split = {});

/// First floor(f*n) samples and the remainder, sharing names and scalers.
std::pair<WindowedDataset, WindowedDataset> chronological_split(const WindowedDataset& dataset,
                                                                const SplitSpec& split = {});

struct WeatherMatrix {
    Eigen::MatrixXd values;  // n x k, met columns scaled, indicators in {0,1}
    std::vector<std::string> feature_names;
    std::vector<ScalerParams> met_scalers;       // aligned with leading met columns
    std::vector<std::string> dropped_constant;   // met columns constant over train span
    std::vector<std::size_t> target_rows;        // mirrors the dataset

    std::size_t n_rows() const { return static_cast<std::size_t>(values.rows()); }
};

/// One meteorology row per dataset sample, values observed 24 h before target
/// time, scaled on the training span. include_calendar appends a day-of-week
/// one-hot (Monday first) and an is_weekend indicator derived from the target
/// timestamp. Throws InternalConsistencyError on table/dataset misalignment.
WeatherMatrix build_weather_matrix(const StationTable& table, const WindowedDataset& dataset,
                                   bool include_calendar = false);

/// Row-slices a weather matrix with the same boundary as chronological_split.
std::pair<WeatherMatrix, WeatherMatrix> split_weather(const WeatherMatrix& weather,
                                                      const SplitSpec& split = {});

/// 0 = Monday .. 6 = Sunday, UTC.
int day_of_week(std::int64_t epoch_seconds);

}  // namespace aircorrect
