#include "aircorrect/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "aircorrect/csv.hpp"
#include "aircorrect/errors.hpp"
#include "aircorrect/sha256.hpp"

namespace aircorrect {

namespace {

using nlohmann::json;

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string compact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.5g", v);
    return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
constexpr int kPaletteSize = 8;

struct PlotFrame {
    double width = 960.0;
    double height = 440.0;
    double left = 72.0;
    double right = 200.0;  // room for the legend
    double top = 44.0;
    double bottom = 52.0;

    double plot_w() const { return width - left - right; }
    double plot_h() const { return height - top - bottom; }
};

struct Range {
    double lo = 0.0;
    double hi = 1.0;
};

Range value_range(const std::vector<const std::vector<double>*>& columns) {
    Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto* col : columns)
        for (double v : *col)
            if (std::isfinite(v)) {
                r.lo = std::min(r.lo, v);
                r.hi = std::max(r.hi, v);
            }
    if (!(r.lo <= r.hi)) return {0.0, 1.0};  // nothing finite
    if (r.lo == r.hi) {
        const double pad = std::abs(r.lo) * 0.05 + 0.5;
        return {r.lo - pad, r.hi + pad};
    }
    const double pad = (r.hi - r.lo) * 0.04;
    return {r.lo - pad, r.hi + pad};
}

void svg_header(std::ostringstream& out, const PlotFrame& f, const std::string& title) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\""
        << f.height << "\" viewBox=\"0 0 " << f.width << " " << f.height << "\">\n";
    out << "<rect width=\"" << f.width << "\" height=\"" << f.height
        << "\" fill=\"#ffffff\"/>\n";
    out << "<text x=\"" << fixed2(f.left + f.plot_w() / 2) << "\" y=\"26\" font-family=\"sans-serif\""
        << " font-size=\"16\" text-anchor=\"middle\">" << title << "</text>\n";
}

void svg_axes(std::ostringstream& out, const PlotFrame& f) {
    out << "<rect x=\"" << fixed2(f.left) << "\" y=\"" << fixed2(f.top) << "\" width=\""
        << fixed2(f.plot_w()) << "\" height=\"" << fixed2(f.plot_h())
        << "\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
}

void svg_y_ticks(std::ostringstream& out, const PlotFrame& f, const Range& r,
                 const std::string& label) {
    constexpr int kTicks = 5;
    for (int i = 0; i <= kTicks; ++i) {
        const double t = static_cast<double>(i) / kTicks;
        const double v = r.lo + t * (r.hi - r.lo);
        const double y = f.top + f.plot_h() * (1.0 - t);
        out << "<line x1=\"" << fixed2(f.left) << "\" y1=\"" << fixed2(y) << "\" x2=\""
            << fixed2(f.left + f.plot_w()) << "\" y2=\"" << fixed2(y)
            << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        out << "<text x=\"" << fixed2(f.left - 8) << "\" y=\"" << fixed2(y + 4)
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << compact(v)
            << "</text>\n";
    }
    if (!label.empty())
        out << "<text x=\"18\" y=\"" << fixed2(f.top + f.plot_h() / 2)
            << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\""
            << " transform=\"rotate(-90 18 " << fixed2(f.top + f.plot_h() / 2) << ")\">" << label
            << "</text>\n";
}

/// Emits one series as polyline segments, split wherever a value is missing.
void svg_series(std::ostringstream& out, const std::vector<double>& xs,
                const std::vector<double>& ys, const char* color) {
    std::vector<std::pair<double, double>> segment;
    auto flush = [&]() {
        if (segment.size() >= 2) {
            out << "<polyline fill=\"none\" stroke=\"" << color
                << "\" stroke-width=\"1.4\" points=\"";
            for (std::size_t i = 0; i < segment.size(); ++i) {
                if (i) out << ' ';
                out << fixed2(segment[i].first) << ',' << fixed2(segment[i].second);
            }
            out << "\"/>\n";
        } else if (segment.size() == 1) {
            out << "<circle cx=\"" << fixed2(segment[0].first) << "\" cy=\""
                << fixed2(segment[0].second) << "\" r=\"2\" fill=\"" << color << "\"/>\n";
        }
        segment.clear();
    };
    for (std::size_t i = 0; i < ys.size(); ++i) {
        if (std::isfinite(ys[i]))
            segment.emplace_back(xs[i], ys[i]);
        else
            flush();
    }
    flush();
}

void svg_legend(std::ostringstream& out, const PlotFrame& f,
                const std::vector<std::string>& names) {
    const double x = f.left + f.plot_w() + 16;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const double y = f.top + 10 + 18.0 * static_cast<double>(i);
        const char* color = kPalette[i % kPaletteSize];
        out << "<line x1=\"" << fixed2(x) << "\" y1=\"" << fixed2(y) << "\" x2=\""
            << fixed2(x + 22) << "\" y2=\"" << fixed2(y) << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << fixed2(x + 28) << "\" y=\"" << fixed2(y + 4)
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << names[i] << "</text>\n";
    }
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream out;
    out << "station,pollutant,horizon_h,model,mae,rmse,r2,eps_base,eps_model,"
           "acc_improve_pct,n\n";
    for (const auto& row : rows) {
        const MetricsReport& m = row.metrics;
        out << csv_field(row.station) << ',' << csv_field(row.pollutant) << ','
            << row.horizon_hours << ',' << csv_field(row.model) << ',' << format_double(m.mae)
            << ',' << format_double(m.rmse) << ',' << format_double(m.r2 * 100.0) << ','
            << format_double(m.eps_base) << ',' << format_double(m.eps_model) << ','
            << format_double(m.acc_improve_pct) << ',' << m.n << '\n';
    }
    return out.str();
}

std::string importance_csv(const ImportanceReport& report) {
    std::ostringstream out;
    out << "feature,count,fraction\n";
    for (std::size_t i = 0; i < report.feature_names.size(); ++i)
        out << csv_field(report.feature_names[i]) << ',' << format_double(report.score[i]) << ','
            << format_double(report.fraction[i]) << '\n';
    return out.str();
}

std::string series_csv(const std::vector<std::int64_t>& timestamps,
                       const std::vector<SeriesColumn>& columns) {
    for (const auto& col : columns)
        if (col.values.size() != timestamps.size())
            throw DimensionError("series column \"" + col.name + "\" has " +
                                 std::to_string(col.values.size()) + " values for " +
                                 std::to_string(timestamps.size()) + " timestamps");
    std::ostringstream out;
    out << "timestamp";
    for (const auto& col : columns) out << ',' << csv_field(col.name);
    out << '\n';
    for (std::size_t r = 0; r < timestamps.size(); ++r) {
        out << epoch_to_iso8601(timestamps[r]);
        for (const auto& col : columns) {
            out << ',';
            if (std::isfinite(col.values[r])) out << format_double(col.values[r]);
        }
        out << '\n';
    }
    return out.str();
}

std::string overlay_svg(const std::string& title, const std::vector<std::int64_t>& timestamps,
                        const std::vector<SeriesColumn>& columns) {
    PlotFrame f;
    std::vector<const std::vector<double>*> cols;
    for (const auto& c : columns) {
        if (c.values.size() != timestamps.size())
            throw DimensionError("overlay column \"" + c.name + "\" length mismatch");
        cols.push_back(&c.values);
    }
    const Range r = value_range(cols);
    const std::size_t n = timestamps.size();

    std::ostringstream out;
    svg_header(out, f, title);
    svg_axes(out, f);
    svg_y_ticks(out, f, r, "");

    // Time ticks: up to six, labeled with the date-and-hour prefix.
    if (n > 0) {
        const int ticks = static_cast<int>(std::min<std::size_t>(6, n));
        for (int i = 0; i < ticks; ++i) {
            const std::size_t idx =
                ticks == 1 ? 0 : static_cast<std::size_t>(i) * (n - 1) / (ticks - 1);
            const double x =
                f.left + (n == 1 ? 0.0 : f.plot_w() * static_cast<double>(idx) / (n - 1));
            out << "<line x1=\"" << fixed2(x) << "\" y1=\"" << fixed2(f.top + f.plot_h())
                << "\" x2=\"" << fixed2(x) << "\" y2=\"" << fixed2(f.top + f.plot_h() + 5)
                << "\" stroke=\"#333333\"/>\n";
            out << "<text x=\"" << fixed2(x) << "\" y=\"" << fixed2(f.top + f.plot_h() + 20)
                << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">"
                << epoch_to_iso8601(timestamps[idx]).substr(0, 13) << "</text>\n";
        }
    }

    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i)
        xs[i] = f.left + (n <= 1 ? 0.0 : f.plot_w() * static_cast<double>(i) / (n - 1));
    std::vector<std::string> names;
    for (std::size_t s = 0; s < columns.size(); ++s) {
        std::vector<double> ys(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double v = columns[s].values[i];
            ys[i] = std::isfinite(v)
                        ? f.top + f.plot_h() * (1.0 - (v - r.lo) / (r.hi - r.lo))
                        : std::numeric_limits<double>::quiet_NaN();
        }
        svg_series(out, xs, ys, kPalette[s % kPaletteSize]);
        names.push_back(columns[s].name);
    }
    svg_legend(out, f, names);
    out << "</svg>\n";
    return out.str();
}

std::string horizon_svg(const std::string& title, const std::string& y_label,
                        const std::vector<HorizonSeries>& series) {
    PlotFrame f;
    int h_lo = 0, h_hi = 1;
    bool any = false;
    std::vector<const std::vector<double>*> cols;
    for (const auto& s : series) {
        if (s.values.size() != s.horizons.size())
            throw DimensionError("horizon series \"" + s.model + "\" length mismatch");
        cols.push_back(&s.values);
        for (int h : s.horizons) {
            if (!any) {
                h_lo = h_hi = h;
                any = true;
            } else {
                h_lo = std::min(h_lo, h);
                h_hi = std::max(h_hi, h);
            }
        }
    }
    if (h_lo == h_hi) {
        h_lo -= 1;
        h_hi += 1;
    }
    const Range r = value_range(cols);

    std::ostringstream out;
    svg_header(out, f, title);
    svg_axes(out, f);
    svg_y_ticks(out, f, r, y_label);

    auto x_of = [&](int h) {
        return f.left + f.plot_w() * (static_cast<double>(h - h_lo) / (h_hi - h_lo));
    };

    // Ticks at every distinct horizon present in any series.
    std::vector<int> ticks;
    for (const auto& s : series)
        for (int h : s.horizons)
            if (std::find(ticks.begin(), ticks.end(), h) == ticks.end()) ticks.push_back(h);
    std::sort(ticks.begin(), ticks.end());
    for (int h : ticks) {
        const double x = x_of(h);
        out << "<line x1=\"" << fixed2(x) << "\" y1=\"" << fixed2(f.top + f.plot_h())
            << "\" x2=\"" << fixed2(x) << "\" y2=\"" << fixed2(f.top + f.plot_h() + 5)
            << "\" stroke=\"#333333\"/>\n";
        out << "<text x=\"" << fixed2(x) << "\" y=\"" << fixed2(f.top + f.plot_h() + 20)
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << h
            << "</text>\n";
    }
    out << "<text x=\"" << fixed2(f.left + f.plot_w() / 2) << "\" y=\""
        << fixed2(f.height - 14)
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">forecast "
           "horizon (h)</text>\n";

    std::vector<std::string> names;
    for (std::size_t s = 0; s < series.size(); ++s) {
        std::vector<double> xs, ys;
        for (std::size_t i = 0; i < series[s].horizons.size(); ++i) {
            xs.push_back(x_of(series[s].horizons[i]));
            const double v = series[s].values[i];
            ys.push_back(std::isfinite(v)
                             ? f.top + f.plot_h() * (1.0 - (v - r.lo) / (r.hi - r.lo))
                             : std::numeric_limits<double>::quiet_NaN());
        }
        svg_series(out, xs, ys, kPalette[s % kPaletteSize]);
        for (std::size_t i = 0; i < xs.size(); ++i)
            if (std::isfinite(ys[i]))
                out << "<circle cx=\"" << fixed2(xs[i]) << "\" cy=\"" << fixed2(ys[i])
                    << "\" r=\"2.5\" fill=\"" << kPalette[s % kPaletteSize] << "\"/>\n";
        names.push_back(series[s].model);
    }
    svg_legend(out, f, names);
    out << "</svg>\n";
    return out.str();
}

ReportDir::ReportDir(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create report directory " + dir_.string() + ": " + ec.message());
}

void ReportDir::upsert(const std::string& rel, const std::string& hash, std::uint64_t bytes) {
    for (auto& e : entries_)
        if (e.path == rel) {
            e.sha256 = hash;
            e.bytes = bytes;
            return;
        }
    entries_.push_back({rel, hash, bytes});
}

std::filesystem::path ReportDir::write_text(const std::string& name, const std::string& content) {
    const std::filesystem::path path = dir_ / name;
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.close();
    if (!f) throw IoError("write failed: " + path.string());
    upsert(name, Sha256::of_string(content), content.size());
    return path;
}

void ReportDir::record(const std::string& name) {
    const std::filesystem::path path = dir_ / name;
    std::error_code ec;
    const auto bytes = std::filesystem::file_size(path, ec);
    if (ec) throw IoError("cannot stat " + path.string() + ": " + ec.message());
    upsert(name, Sha256::of_file(path), bytes);
}

void ReportDir::add_warning(std::string text) { warnings_.push_back(std::move(text)); }

void ReportDir::add_failure(std::string cell, std::string what) {
    failures_.emplace_back(std::move(cell), std::move(what));
}

std::filesystem::path ReportDir::write_manifest() {
    std::vector<ManifestEntry> sorted = entries_;
    std::sort(sorted.begin(), sorted.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.path < b.path; });
    json j;
    j["format"] = "aircorrect-manifest-v1";
    j["files"] = json::array();
    for (const auto& e : sorted)
        j["files"].push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
    j["warnings"] = warnings_;
    j["failures"] = json::array();
    for (const auto& [cell, what] : failures_)
        j["failures"].push_back({{"cell", cell}, {"error", what}});
    const std::filesystem::path path = dir_ / "manifest.json";
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << j.dump(2) << '\n';
    f.close();
    if (!f) throw IoError("write failed: " + path.string());
    return path;
}

std::vector<std::string> verify_manifest(const std::filesystem::path& manifest_path) {
    std::ifstream f(manifest_path, std::ios::binary);
    if (!f) throw IoError("cannot open " + manifest_path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw FormatError("manifest is not valid JSON: " + std::string(e.what()));
    }
    const std::filesystem::path base = manifest_path.parent_path();
    std::vector<std::string> bad;
    for (const auto& entry : j.at("files")) {
        const std::string rel = entry.at("path").get<std::string>();
        const std::string want = entry.at("sha256").get<std::string>();
        const std::filesystem::path p = base / rel;
        std::error_code ec;
        if (!std::filesystem::exists(p, ec) || ec) {
            bad.push_back(rel);
            continue;
        }
        if (Sha256::of_file(p) != want) bad.push_back(rel);
    }
    return bad;
}

}  // namespace aircorrect
