#pragma once

// Report artifacts: metrics/importance/series CSVs, static SVG line plots,
// and a manifest recording the SHA-256 of every emitted file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aircorrect/boosting.hpp"
#include "aircorrect/evaluation.hpp"

namespace aircorrect {

struct MetricsRow {
    std::string station;
    std::string pollutant;
    int horizon_hours = 0;
    std::string model;
    MetricsReport metrics;
};

/// Header: station,pollutant,horizon_h,model,mae,rmse,r2,eps_base,eps_model,
/// acc_improve_pct,n. The r2 column carries a percentage (fraction * 100);
/// every double is written with exact round-trip formatting.
std::string metrics_csv(const std::vector<MetricsRow>& rows);

/// One `feature,count,fraction` line per feature, in column order.
std::string importance_csv(const ImportanceReport& report);

struct SeriesColumn {
    std::string name;
    std::vector<double> values;  // NaN marks a gap
};

/// `timestamp,<name>,...` rows with ISO-8601 timestamps; NaN becomes an
/// empty field.
std::string series_csv(const std::vector<std::int64_t>& timestamps,
                       const std::vector<SeriesColumn>& columns);

/// Time-series overlay: one polyline per column over a shared time axis.
/// Conventionally the first column is the observed truth.
std::string overlay_svg(const std::string& title, const std::vector<std::int64_t>& timestamps,
                        const std::vector<SeriesColumn>& columns);

struct HorizonSeries {
    std::string model;
    std::vector<int> horizons;
    std::vector<double> values;  // one metric value per horizon
};

/// Metric-vs-horizon line plot, one polyline per model.
std::string horizon_svg(const std::string& title, const std::string& y_label,
                        const std::vector<HorizonSeries>& series);

struct ManifestEntry {
    std::string path;  // relative to the report directory
    std::string sha256;
    std::uint64_t bytes = 0;
};

/// Accumulates files written into one output directory and finishes with a
/// manifest.json naming them all. Not thread-safe; callers serialize writes.
class ReportDir {
  public:
    explicit ReportDir(std::filesystem::path dir);

    const std::filesystem::path& dir() const { return dir_; }

    /// Writes `content` to dir/name (subdirectories allowed) and records its
    /// hash. Returns the absolute path.
    std::filesystem::path write_text(const std::string& name, const std::string& content);

    /// Records a file some other code already wrote under dir/name.
    void record(const std::string& name);

    void add_warning(std::string text);
    void add_failure(std::string cell, std::string what);

    bool has_failures() const { return !failures_.empty(); }
    const std::vector<ManifestEntry>& entries() const { return entries_; }

    /// Writes manifest.json (not itself an entry). Entries are sorted by path
    /// so repeated runs produce identical bytes.
    std::filesystem::path write_manifest();

  private:
    void upsert(const std::string& rel, const std::string& hash, std::uint64_t bytes);

    std::filesystem::path dir_;
    std::vector<ManifestEntry> entries_;
    std::vector<std::string> warnings_;
    std::vector<std::pair<std::string, std::string>> failures_;  // cell, error
};

/// Re-hashes every file named by a manifest; returns the relative paths that
/// are missing or no longer match.
std::vector<std::string> verify_manifest(const std::filesystem::path& manifest_path);

}  // namespace aircorrect
