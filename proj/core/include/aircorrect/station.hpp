#pragma once

// Station time series: hourly pollutant observations, meteorology, and the
// raw-model forecast columns. Absent cells are stored as NaN until imputation.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace aircorrect {

inline constexpr const char* kPollutantNames[] = {"co", "so2", "pm25", "no2", "o3_1h", "o3_8h"};
inline constexpr const char* kMeteorologyNames[] = {"max_t",  "min_t",  "max_h", "min_h",
                                                    "max_ws", "min_ws", "ap",    "rain"};
inline constexpr int kForecastHorizons[] = {24, 48, 72};

/// "cmaq24_pm25" etc.
std::string forecast_column_name(int lead_hours, const std::string& pollutant);

/// Full ordered value-column list (pollutants, meteorology, per-pollutant
/// forecast triples). Excludes timestamp and station_id.
const std::vector<std::string>& station_value_columns();

struct StationTable {
    std::string station_id;
    std::vector<std::int64_t> timestamps;        // epoch seconds, UTC, hourly
    std::vector<std::string> column_names;       // == station_value_columns()
    std::vector<std::vector<double>> columns;    // column-major; NaN = absent

    std::size_t n_rows() const { return timestamps.size(); }
    bool has_column(const std::string& name) const;
    const std::vector<double>& column(const std::string& name) const;
    std::vector<double>& column(const std::string& name);
};

/// Creates a table with all value columns present and sized to n rows of NaN.
StationTable make_empty_station_table(const std::string& station_id, std::size_t n_rows);

/// Parses one station's rows from a CSV in the documented schema. The file
/// must contain exactly one station_id. Throws SchemaError when header columns
/// are missing (message names them) and ParseError with 1-based line numbers
/// for bad cells.
StationTable load_station_csv(const std::filesystem::path& path);

/// Parses a CSV that may interleave several stations; returns one table per
/// station_id in first-appearance order.
std::vector<StationTable> load_stations_csv(const std::filesystem::path& path);

/// Writes the documented schema; NaN cells become empty fields.
void write_station_csv(const StationTable& table, const std::filesystem::path& path);

struct ImputeOptions {
    double max_absent_fraction = 0.25;  // per column, checked before filling
};

struct ImputeStats {
    std::size_t leading_rows_dropped = 0;
    std::size_t cells_filled = 0;
};

/// Forward-fills interior gaps, drops leading rows containing any absent
/// value, and re-verifies the hourly timestamp stride. Throws
/// DataQualityError when a column exceeds the absent-fraction threshold or
/// the stride is broken.
StationTable impute_missing(const StationTable& table, const ImputeOptions& options = {},
                            ImputeStats* stats = nullptr);

}  // namespace aircorrect
