// aircorrect command line: train, compare, sweep, synth, report,
// inspect-bundle. Exit codes: 0 full success, 2 partial cell failure,
// 1 config or I/O error.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "aircorrect/bundle.hpp"
#include "aircorrect/csv.hpp"
#include "aircorrect/errors.hpp"
#include "aircorrect/pipeline.hpp"
#include "aircorrect/report.hpp"
#include "aircorrect/station.hpp"
#include "aircorrect/synthetic.hpp"

namespace {

using aircorrect::ExperimentConfig;
using aircorrect::RunArtifacts;

struct CommonFlags {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
};

void add_common(CLI::App* sub, CommonFlags& flags) {
    sub->add_option("--config", flags.config_path, "JSON experiment config")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "override the config seed")
        ->each([&flags](const std::string&) { flags.seed_set = true; });
    sub->add_option("--out", flags.out_dir, "override the output directory");
}

ExperimentConfig load_with_overrides(const CommonFlags& flags) {
    ExperimentConfig cfg = aircorrect::parse_config(flags.config_path);
    if (flags.seed_set) cfg.seed = flags.seed;
    if (!flags.out_dir.empty()) cfg.output_dir = flags.out_dir;
    return cfg;
}

void print_rows(const RunArtifacts& artifacts) {
    if (artifacts.rows.empty()) return;
    std::printf("%-12s %-8s %4s  %-16s %10s %10s %9s\n", "station", "pollutant", "h", "model",
                "mae", "rmse", "improve%");
    for (const auto& row : artifacts.rows) {
        std::printf("%-12s %-8s %4d  %-16s %10.4f %10.4f %8.2f%%\n", row.station.c_str(),
                    row.pollutant.c_str(), row.horizon_hours, row.model.c_str(), row.metrics.mae,
                    row.metrics.rmse, row.metrics.acc_improve_pct);
    }
}

int finish(const RunArtifacts& artifacts) {
    print_rows(artifacts);
    std::printf("cells: %zu total, %zu failed\n", artifacts.total_cells, artifacts.failed_cells);
    if (!artifacts.metrics_csv.empty())
        std::printf("metrics: %s\n", artifacts.metrics_csv.string().c_str());
    std::printf("manifest: %s\n", artifacts.manifest.string().c_str());
    return artifacts.failed_cells > 0 ? 2 : 0;
}

int run_synth(const CommonFlags& flags) {
    ExperimentConfig cfg = load_with_overrides(flags);
    if (!cfg.use_synthetic)
        throw aircorrect::ConfigError("synth requires a config whose data block is synthetic");
    if (flags.seed_set) cfg.synthetic.seed = flags.seed;
    const aircorrect::StationTable table =
        aircorrect::generate_synthetic(cfg.synthetic.seed, cfg.synthetic.n_hours,
                                       cfg.synthetic.bias, cfg.synthetic.options);
    std::filesystem::create_directories(cfg.output_dir);
    const std::filesystem::path path =
        cfg.output_dir / ("synthetic_" + table.station_id + ".csv");
    aircorrect::write_station_csv(table, path);
    std::printf("wrote %s (%zu rows)\n", path.string().c_str(), table.n_rows());
    return 0;
}

int run_report(const std::string& dir) {
    const std::filesystem::path manifest = std::filesystem::path(dir) / "manifest.json";
    const std::vector<std::string> bad = aircorrect::verify_manifest(manifest);
    if (!bad.empty()) {
        std::fprintf(stderr, "manifest verification FAILED; %zu stale or missing files:\n",
                     bad.size());
        for (const auto& p : bad) std::fprintf(stderr, "  %s\n", p.c_str());
        return 1;
    }
    std::printf("manifest verified: every file hash matches\n");
    const std::filesystem::path metrics = std::filesystem::path(dir) / "metrics.csv";
    if (std::filesystem::exists(metrics)) {
        const aircorrect::CsvTable t = aircorrect::read_csv_file(metrics);
        std::printf("metrics.csv: %zu rows\n", t.rows.size());
        for (const auto& row : t.rows) {
            if (row.size() < 11) continue;
            std::printf("  %-12s %-8s h=%-3s %-16s mae=%-10s improve=%s%%\n", row[0].c_str(),
                        row[1].c_str(), row[2].c_str(), row[3].c_str(), row[4].c_str(),
                        row[9].c_str());
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aircorrect: systematic-error correction for air quality model forecasts"};
    app.require_subcommand(1);

    CommonFlags train_flags, compare_flags, sweep_flags, synth_flags;
    std::string report_dir, bundle_path;

    CLI::App* train = app.add_subcommand("train", "train the configured preset per cell");
    add_common(train, train_flags);
    CLI::App* compare =
        app.add_subcommand("compare", "run all seven comparison models per cell");
    add_common(compare, compare_flags);
    CLI::App* sweep = app.add_subcommand("sweep", "train across horizons on a shared test period");
    add_common(sweep, sweep_flags);
    CLI::App* synth = app.add_subcommand("synth", "write the configured synthetic station CSV");
    add_common(synth, synth_flags);

    CLI::App* report = app.add_subcommand("report", "verify and summarize a run directory");
    report->add_option("--out", report_dir, "run directory holding manifest.json")->required();

    CLI::App* inspect = app.add_subcommand("inspect-bundle", "print a bundle's table of contents");
    inspect->add_option("bundle", bundle_path, "path to a .bundle file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Collapse CLI11's per-error exit codes onto the documented contract:
        // 0 for --help/--version, 1 for any argument error.
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (train->parsed())
            return finish(aircorrect::run_experiment(load_with_overrides(train_flags)));
        if (compare->parsed())
            return finish(aircorrect::run_comparison(load_with_overrides(compare_flags)));
        if (sweep->parsed())
            return finish(aircorrect::horizon_sweep(load_with_overrides(sweep_flags)));
        if (synth->parsed()) return run_synth(synth_flags);
        if (report->parsed()) return run_report(report_dir);
        if (inspect->parsed()) {
            std::printf("%s", aircorrect::describe_bundle(bundle_path).c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
