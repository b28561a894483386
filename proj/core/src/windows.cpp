#include "aircorrect/windows.hpp"

#include <algorithm>
#include <cmath>

#include "aircorrect/errors.hpp"

namespace aircorrect {

bool is_valid_horizon(int horizon_hours) {
    for (int h : kValidHorizons)
        if (h == horizon_hours) return true;
    return false;
}

namespace {

void check_fraction(double f) {
    if (!(f > 0.0 && f < 1.0))
        throw ConfigError("train_fraction must lie in (0,1), got " + std::to_string(f));
}

std::size_t train_rows(std::size_t n, double fraction) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
}

}  // namespace

WindowedDataset build_temporal_windows(const StationTable& table, const std::string& pollutant,
                                       int horizon_hours, const SplitSpec& split) {
    if (!is_valid_horizon(horizon_hours)) {
        throw ConfigError("horizon " + std::to_string(horizon_hours) +
                          " h not supported; valid horizons: 6, 12, 24, 48, 72");
    }
    check_fraction(split.train_fraction);
    if (!table.has_column(pollutant)) throw SchemaError("no such pollutant column: " + pollutant);

    const std::size_t n = table.n_rows();
    const std::size_t need = static_cast<std::size_t>(kLagCount + horizon_hours) + 1;
    if (n < need) {
        throw EmptyDatasetError("table has " + std::to_string(n) + " rows; horizon " +
                                std::to_string(horizon_hours) + " h needs at least " +
                                std::to_string(need));
    }
    const std::size_t count = n - static_cast<std::size_t>(kLagCount + horizon_hours);
    const std::size_t first_target = static_cast<std::size_t>(kLagCount + horizon_hours);
    const std::size_t tc = train_rows(count, split.train_fraction);
    if (tc == 0) throw EmptyDatasetError("training portion is empty after the split");

    const auto& obs = table.column(pollutant);

    WindowedDataset ds;
    ds.pollutant = pollutant;
    ds.horizon_hours = horizon_hours;
    ds.feature_names.reserve(kTemporalFeatureCount);
    for (int k = 1; k <= kLagCount; ++k) ds.feature_names.push_back("D" + std::to_string(k));
    for (int h : kForecastHorizons)
        ds.feature_names.push_back("cmaq_" + std::to_string(h) + "h");

    // Scalers see training rows only: the pollutant span runs from the first
    // lag up to the last training target; each forecast column over exactly
    // the rows training samples read it at.
    const std::size_t last_train_target = first_target + tc - 1;
    ds.scalers.train_count = tc;
    ds.scalers.pollutant =
        fit_minmax(std::span<const double>(obs.data(), last_train_target + 1));
    for (std::size_t j = 0; j < 3; ++j) {
        const auto& col = table.column(forecast_column_name(kForecastHorizons[j], pollutant));
        ds.scalers.cmaq[j] = fit_minmax(std::span<const double>(col.data() + first_target, tc));
    }

    ds.inputs.resize(static_cast<Eigen::Index>(count), kTemporalFeatureCount);
    ds.targets.resize(static_cast<Eigen::Index>(count));
    ds.target_rows.reserve(count);
    ds.target_timestamps.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t t = first_target + i;
        ds.target_rows.push_back(t);
        ds.target_timestamps.push_back(table.timestamps[t]);
        const std::size_t lag_base = t - static_cast<std::size_t>(horizon_hours + kLagCount);
        for (int k = 0; k < kLagCount; ++k) {
            ds.inputs(static_cast<Eigen::Index>(i), k) =
                transform(obs[lag_base + static_cast<std::size_t>(k)], ds.scalers.pollutant);
        }
        for (std::size_t j = 0; j < 3; ++j) {
            const auto& col = table.column(forecast_column_name(kForecastHorizons[j], pollutant));
            ds.inputs(static_cast<Eigen::Index>(i), kLagCount + static_cast<int>(j)) =
                transform(col[t], ds.scalers.cmaq[j]);
        }
        ds.targets(static_cast<Eigen::Index>(i)) = transform(obs[t], ds.scalers.pollutant);
    }
    return ds;
}

std::pair<WindowedDataset, WindowedDataset> chronological_split(const WindowedDataset& dataset,
                                                                const SplitSpec& split) {
    check_fraction(split.train_fraction);
    const std::size_t n = dataset.n_samples();
    if (n == 0) throw EmptyDatasetError("chronological_split: empty dataset");
    const std::size_t tn = train_rows(n, split.train_fraction);

    auto slice = [&](std::size_t begin, std::size_t len) {
        WindowedDataset out;
        out.feature_names = dataset.feature_names;
        out.pollutant = dataset.pollutant;
        out.horizon_hours = dataset.horizon_hours;
        out.scalers = dataset.scalers;
        out.inputs = dataset.inputs.middleRows(static_cast<Eigen::Index>(begin),
                                               static_cast<Eigen::Index>(len));
        out.targets = dataset.targets.segment(static_cast<Eigen::Index>(begin),
                                              static_cast<Eigen::Index>(len));
        const auto b = static_cast<std::ptrdiff_t>(begin);
        const auto e = b + static_cast<std::ptrdiff_t>(len);
        out.target_rows.assign(dataset.target_rows.begin() + b, dataset.target_rows.begin() + e);
        out.target_timestamps.assign(dataset.target_timestamps.begin() + b,
                                     dataset.target_timestamps.begin() + e);
        return out;
    };
    return {slice(0, tn), slice(tn, n - tn)};
}

int day_of_week(std::int64_t epoch_seconds) {
    std::int64_t days = epoch_seconds / 86400;
    if (epoch_seconds % 86400 < 0) --days;
    return static_cast<int>(((days % 7) + 7 + 3) % 7);
}

WeatherMatrix build_weather_matrix(const StationTable& table, const WindowedDataset& dataset,
                                   bool include_calendar) {
    const std::size_t n = dataset.n_samples();
    if (n == 0 || dataset.target_rows.size() != n)
        throw InternalConsistencyError("weather matrix: dataset empty or rows misaligned");
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t t = dataset.target_rows[i];
        if (t >= table.n_rows() || t < 24 ||
            table.timestamps[t] != dataset.target_timestamps[i]) {
            throw InternalConsistencyError(
                "weather matrix: dataset was not built from this table");
        }
    }
    const std::size_t tc = std::clamp<std::size_t>(dataset.scalers.train_count, 1, n);

    WeatherMatrix wm;
    wm.target_rows = dataset.target_rows;
    std::vector<std::vector<double>> scaled_cols;
    for (const char* name : kMeteorologyNames) {
        const auto& src = table.column(name);
        std::vector<double> lagged(n);
        for (std::size_t i = 0; i < n; ++i) lagged[i] = src[dataset.target_rows[i] - 24];
        ScalerParams p;
        try {
            p = fit_minmax(std::span<const double>(lagged.data(), tc));
        } catch (const DegenerateFeatureError&) {
            wm.dropped_constant.emplace_back(name);
            continue;
        }
        for (double& v : lagged) v = transform(v, p);
        wm.feature_names.emplace_back(name);
        wm.met_scalers.push_back(p);
        scaled_cols.push_back(std::move(lagged));
    }

    std::size_t k = scaled_cols.size();
    const std::size_t calendar_cols = include_calendar ? 8 : 0;
    wm.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k + calendar_cols));
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < n; ++i)
            wm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
                scaled_cols[c][i];

    if (include_calendar) {
        static const char* kDowNames[7] = {"dow_mon", "dow_tue", "dow_wed", "dow_thu",
                                           "dow_fri", "dow_sat", "dow_sun"};
        for (const char* d : kDowNames) wm.feature_names.emplace_back(d);
        wm.feature_names.emplace_back("is_weekend");
        for (std::size_t i = 0; i < n; ++i) {
            const int dow = day_of_week(dataset.target_timestamps[i]);
            for (int d = 0; d < 7; ++d)
                wm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k + d)) =
                    (d == dow) ? 1.0 : 0.0;
            wm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k + 7)) =
                (dow >= 5) ? 1.0 : 0.0;
        }
    }
    return wm;
}

std::pair<WeatherMatrix, WeatherMatrix> split_weather(const WeatherMatrix& weather,
                                                      const SplitSpec& split) {
    check_fraction(split.train_fraction);
    const std::size_t n = weather.n_rows();
    if (n == 0) throw EmptyDatasetError("split_weather: empty matrix");
    const std::size_t tn = train_rows(n, split.train_fraction);

    auto slice = [&](std::size_t begin, std::size_t len) {
        WeatherMatrix out;
        out.feature_names = weather.feature_names;
        out.met_scalers = weather.met_scalers;
        out.dropped_constant = weather.dropped_constant;
        out.values = weather.values.middleRows(static_cast<Eigen::Index>(begin),
                                               static_cast<Eigen::Index>(len));
        const auto b = static_cast<std::ptrdiff_t>(begin);
        out.target_rows.assign(weather.target_rows.begin() + b,
                               weather.target_rows.begin() + b + static_cast<std::ptrdiff_t>(len));
        return out;
    };
    return {slice(0, tn), slice(tn, n - tn)};
}

}  // namespace aircorrect
