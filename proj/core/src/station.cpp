#include "aircorrect/station.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "aircorrect/csv.hpp"
#include "aircorrect/errors.hpp"

namespace aircorrect {

namespace {
constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();
}

std::string forecast_column_name(int lead_hours, const std::string& pollutant) {
    return "cmaq" + std::to_string(lead_hours) + "_" + pollutant;
}

const std::vector<std::string>& station_value_columns() {
    static const std::vector<std::string> cols = [] {
        std::vector<std::string> c;
        for (const char* p : kPollutantNames) c.emplace_back(p);
        for (const char* m : kMeteorologyNames) c.emplace_back(m);
        for (const char* p : kPollutantNames)
            for (int h : kForecastHorizons) c.push_back(forecast_column_name(h, p));
        return c;
    }();
    return cols;
}

bool StationTable::has_column(const std::string& name) const {
    return std::find(column_names.begin(), column_names.end(), name) != column_names.end();
}

const std::vector<double>& StationTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < column_names.size(); ++i)
        if (column_names[i] == name) return columns[i];
    throw SchemaError("no such column: " + name);
}

std::vector<double>& StationTable::column(const std::string& name) {
    for (std::size_t i = 0; i < column_names.size(); ++i)
        if (column_names[i] == name) return columns[i];
    throw SchemaError("no such column: " + name);
}

StationTable make_empty_station_table(const std::string& station_id, std::size_t n_rows) {
    StationTable t;
    t.station_id = station_id;
    t.timestamps.resize(n_rows, 0);
    t.column_names = station_value_columns();
    t.columns.assign(t.column_names.size(), std::vector<double>(n_rows, kAbsent));
    return t;
}

namespace {

// Maps each schema value column to its field index in a parsed CSV header.
// Throws SchemaError naming every missing column at once.
struct HeaderIndex {
    std::size_t timestamp;
    std::size_t station_id;
    std::vector<std::size_t> value_fields;  // aligned with station_value_columns()
};

HeaderIndex index_header(const std::vector<std::string>& header) {
    auto find = [&](const std::string& name) -> std::ptrdiff_t {
        const auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : it - header.begin();
    };
    std::vector<std::string> missing;
    HeaderIndex idx;
    const auto ts = find("timestamp");
    const auto sid = find("station_id");
    if (ts < 0) missing.push_back("timestamp");
    if (sid < 0) missing.push_back("station_id");
    idx.timestamp = static_cast<std::size_t>(ts);
    idx.station_id = static_cast<std::size_t>(sid);
    for (const std::string& name : station_value_columns()) {
        const auto f = find(name);
        if (f < 0)
            missing.push_back(name);
        else
            idx.value_fields.push_back(static_cast<std::size_t>(f));
    }
    if (!missing.empty()) {
        std::string msg = "station CSV header missing column(s):";
        for (const auto& m : missing) msg += " " + m;
        throw SchemaError(msg);
    }
    return idx;
}

std::vector<StationTable> load_grouped(const std::filesystem::path& path) {
    const CsvTable csv = read_csv_file(path);
    const HeaderIndex idx = index_header(csv.header);
    const auto& value_names = station_value_columns();

    std::vector<StationTable> tables;
    std::map<std::string, std::size_t> by_id;
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        const auto& row = csv.rows[r];
        const std::size_t line = r + 2;  // 1-based, after the header line
        if (row.size() != csv.header.size()) {
            throw ParseError("line " + std::to_string(line) + ": expected " +
                             std::to_string(csv.header.size()) + " fields, got " +
                             std::to_string(row.size()));
        }
        const std::string& sid = row[idx.station_id];
        auto [it, inserted] = by_id.try_emplace(sid, tables.size());
        if (inserted) tables.push_back(make_empty_station_table(sid, 0));
        StationTable& t = tables[it->second];

        t.timestamps.push_back(iso8601_to_epoch(row[idx.timestamp]));
        for (std::size_t c = 0; c < value_names.size(); ++c) {
            const std::string& field = row[idx.value_fields[c]];
            double v = kAbsent;
            if (!field.empty())
                v = parse_double_strict(field, "in column " + value_names[c] + " at line " +
                                                   std::to_string(line));
            t.columns[c].push_back(v);
        }
    }
    return tables;
}

}  // namespace

StationTable load_station_csv(const std::filesystem::path& path) {
    auto tables = load_grouped(path);
    if (tables.empty()) throw EmptyDatasetError("station CSV has no data rows: " + path.string());
    if (tables.size() > 1)
        throw SchemaError("expected a single station in " + path.string() + ", found " +
                          std::to_string(tables.size()));
    return std::move(tables.front());
}

std::vector<StationTable> load_stations_csv(const std::filesystem::path& path) {
    return load_grouped(path);
}

void write_station_csv(const StationTable& table, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "timestamp,station_id";
    for (const auto& name : table.column_names) out << ',' << name;
    out << '\n';
    for (std::size_t r = 0; r < table.n_rows(); ++r) {
        out << epoch_to_iso8601(table.timestamps[r]) << ',' << table.station_id;
        for (const auto& col : table.columns) {
            out << ',';
            if (!std::isnan(col[r])) out << format_double(col[r]);
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

StationTable impute_missing(const StationTable& table, const ImputeOptions& options,
                            ImputeStats* stats) {
    const std::size_t n = table.n_rows();
    if (stats) *stats = {};
    if (n == 0) return table;

    // Threshold check precedes filling so heavily gapped columns fail loudly
    // even when a forward fill would formally succeed.
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        std::size_t absent = 0;
        for (double v : table.columns[c]) absent += std::isnan(v) ? 1 : 0;
        const double frac = static_cast<double>(absent) / static_cast<double>(n);
        if (frac > options.max_absent_fraction) {
            std::ostringstream msg;
            msg << "column " << table.column_names[c] << " is " << frac * 100
                << "% absent (threshold " << options.max_absent_fraction * 100 << "%)";
            throw DataQualityError(msg.str());
        }
    }

    std::size_t first = 0;
    auto row_complete = [&](std::size_t r) {
        for (const auto& col : table.columns)
            if (std::isnan(col[r])) return false;
        return true;
    };
    while (first < n && !row_complete(first)) ++first;
    if (first == n) throw DataQualityError("every row has at least one absent value");
    if (stats) stats->leading_rows_dropped = first;

    StationTable out;
    out.station_id = table.station_id;
    out.column_names = table.column_names;
    out.timestamps.assign(table.timestamps.begin() + static_cast<std::ptrdiff_t>(first),
                          table.timestamps.end());
    out.columns.reserve(table.columns.size());
    for (const auto& col : table.columns) {
        std::vector<double> filled(col.begin() + static_cast<std::ptrdiff_t>(first), col.end());
        for (std::size_t r = 1; r < filled.size(); ++r) {
            if (std::isnan(filled[r])) {
                filled[r] = filled[r - 1];
                if (stats) ++stats->cells_filled;
            }
        }
        out.columns.push_back(std::move(filled));
    }

    for (std::size_t r = 1; r < out.timestamps.size(); ++r) {
        if (out.timestamps[r] - out.timestamps[r - 1] != 3600) {
            throw DataQualityError("timestamp stride broken at " +
                                   epoch_to_iso8601(out.timestamps[r]) + " (expected 1h)");
        }
    }
    return out;
}

}  // namespace aircorrect
