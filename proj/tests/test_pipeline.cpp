#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "aircorrect/bundle.hpp"
#include "aircorrect/errors.hpp"
#include "aircorrect/pipeline.hpp"
#include "aircorrect/report.hpp"
#include "aircorrect/rng.hpp"

using namespace aircorrect;
namespace fs = std::filesystem;

namespace {

fs::path test_root() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "aircorrect_pipeline_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string minimal_config_text() {
    return R"({"data":{"synthetic":{}},"pollutants":["pm25"]})";
}

// Small enough to train in well under a second per cell.
ExperimentConfig tiny_config(const fs::path& out, std::size_t n_hours) {
    ExperimentConfig cfg;
    cfg.use_synthetic = true;
    cfg.synthetic.seed = 11;
    cfg.synthetic.n_hours = n_hours;
    cfg.synthetic.bias = {8.0, 1.05, 2.0};
    cfg.pollutants = {"pm25"};
    cfg.horizons = {24};
    cfg.output_dir = out;
    cfg.training.epochs = 2;
    cfg.training.patience = 2;
    cfg.training.batch_size = 64;
    cfg.cascade.layer1_hidden = 4;
    cfg.cascade.layer2_hidden = 6;
    cfg.gbt.n_estimators = 25;
    cfg.gbt.max_depth = 3;
    cfg.dense.hidden = {6, 6};
    cfg.dense.dropout_layers = 2;
    return cfg;
}

struct ThreadEnvGuard {
    ~ThreadEnvGuard() { unsetenv("AIRCORRECT_THREADS"); }
};

}  // namespace

TEST_CASE("minimal config gets every documented default") {
    ExperimentConfig cfg = parse_config_json(minimal_config_text(), "test");
    CHECK(cfg.use_synthetic);
    CHECK(cfg.synthetic.seed == 7);
    CHECK(cfg.synthetic.n_hours == 4000);
    CHECK(cfg.pollutants == std::vector<std::string>{"pm25"});
    CHECK(cfg.horizons == std::vector<int>{24});
    CHECK(cfg.preset == "ptc");
    CHECK(cfg.prune_threshold == -1.0);
    CHECK(cfg.train_fraction == 0.8);
    CHECK_FALSE(cfg.calendar_features);
    CHECK(cfg.seed == 0);
    CHECK(cfg.output_dir == fs::path("aircorrect-out"));
    CHECK(cfg.training.epochs == 300);
    CHECK(cfg.training.batch_size == 128);
    CHECK(cfg.gbt.n_estimators == 500);
    CHECK(cfg.warnings.empty());
}

TEST_CASE("unknown keys are rejected with their full dotted path") {
    try {
        parse_config_json(R"({"data":{"synthetic":{}},"pollutants":["pm25"],
                              "training":{"epoch":5}})",
                          "test");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("training.epoch") != std::string::npos);
    }
    CHECK_THROWS_AS(
        parse_config_json(R"({"data":{"synthetic":{}},"pollutants":["pm25"],"bogus":1})", "test"),
        ConfigError);
}

TEST_CASE("horizons are validated against the supported set") {
    try {
        parse_config_json(R"({"data":{"synthetic":{}},"pollutants":["pm25"],"horizons":[36]})",
                          "test");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        CHECK(what.find("36") != std::string::npos);
        CHECK(what.find("6, 12, 24, 48, 72") != std::string::npos);
    }
    CHECK_THROWS_AS(
        parse_config_json(R"({"data":{"synthetic":{}},"pollutants":["pm25"],"horizons":[]})",
                          "test"),
        ConfigError);
}

TEST_CASE("duplicates are dropped with a warning, not an error") {
    ExperimentConfig cfg = parse_config_json(
        R"({"data":{"synthetic":{}},"pollutants":["pm25","pm25"],"horizons":[24,24,48]})",
        "test");
    CHECK(cfg.pollutants == std::vector<std::string>{"pm25"});
    CHECK(cfg.horizons == std::vector<int>{24, 48});
    REQUIRE(cfg.warnings.size() == 2);
    CHECK(cfg.warnings[0].find("duplicate pollutant") != std::string::npos);
    CHECK(cfg.warnings[1].find("duplicate horizon 24") != std::string::npos);
}

TEST_CASE("data source must be exactly one of csv or synthetic") {
    CHECK_THROWS_AS(
        parse_config_json(R"({"data":{"csv":"a.csv","synthetic":{}},"pollutants":["pm25"]})",
                          "test"),
        ConfigError);
    CHECK_THROWS_AS(parse_config_json(R"({"data":{},"pollutants":["pm25"]})", "test"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config_json(R"({"pollutants":["pm25"]})", "test"), ConfigError);
}

TEST_CASE("pollutant names and presets are validated at parse time") {
    try {
        parse_config_json(R"({"data":{"synthetic":{}},"pollutants":["ozone"]})", "test");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("ozone") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config_json(R"({"data":{"synthetic":{}},"pollutants":[]})", "test"),
                    ConfigError);
    CHECK_THROWS_AS(
        parse_config_json(R"({"data":{"synthetic":{}},"pollutants":["pm25"],"preset":"magic"})",
                          "test"),
        ConfigError);
}

TEST_CASE("numeric config values must stay inside their ranges") {
    CHECK_THROWS_AS(
        parse_config_json(
            R"({"data":{"synthetic":{}},"pollutants":["pm25"],"train_fraction":1.5})", "test"),
        ConfigError);
    CHECK_THROWS_AS(
        parse_config_json(
            R"({"data":{"synthetic":{}},"pollutants":["pm25"],"prune_threshold":1.0})", "test"),
        ConfigError);
    CHECK_THROWS_AS(
        parse_config_json(
            R"({"data":{"synthetic":{"n_hours":100}},"pollutants":["pm25"]})", "test"),
        ConfigError);
}

TEST_CASE("config echo is a fixed point of parsing") {
    ExperimentConfig cfg = parse_config_json(
        R"({"data":{"synthetic":{"seed":3,"n_hours":500,"offset":2.5}},
            "pollutants":["pm25","no2"],"horizons":[24,48],"preset":"gru_xgb",
            "train_fraction":0.75,"seed":42,
            "training":{"epochs":7,"batch_size":32},
            "gbt":{"n_estimators":50},
            "analog":{"d2_weight":0.5,"multiplicative":true}})",
        "test");
    const std::string echo1 = config_echo(cfg);
    ExperimentConfig cfg2 = parse_config_json(echo1, "echo");
    const std::string echo2 = config_echo(cfg2);
    CHECK(echo1 == echo2);
    CHECK(cfg2.preset == "gru_xgb");
    CHECK(cfg2.synthetic.bias.offset == 2.5);
    CHECK(cfg2.training.epochs == 7);
    CHECK(cfg2.analog_multiplicative);

    // The derive-per-cell sentinel is spelled by omission; explicit values survive.
    const std::string defaulted = config_echo(parse_config_json(minimal_config_text(), "t"));
    CHECK(defaulted.find("prune_threshold") == std::string::npos);
    CHECK(parse_config_json(defaulted, "echo").prune_threshold == -1.0);
    ExperimentConfig pinned = parse_config_json(
        R"({"data":{"synthetic":{}},"pollutants":["pm25"],"prune_threshold":0.05})", "test");
    CHECK(parse_config_json(config_echo(pinned), "echo").prune_threshold == 0.05);
}

TEST_CASE("config files are read from disk") {
    const fs::path path = test_root() / "config.json";
    std::ofstream(path) << minimal_config_text();
    ExperimentConfig cfg = parse_config(path);
    CHECK(cfg.use_synthetic);
    CHECK_THROWS_AS(parse_config(test_root() / "missing.json"), IoError);
}

TEST_CASE("shared sweep start row is the latest first-test-row") {
    // n=100, h=24: 52 windows, 41 train -> first test target row 89.
    CHECK(shared_min_target_row(100, {24}, 0.8) == 89);
    // h=6 alone starts earlier (86); the max across horizons wins.
    CHECK(shared_min_target_row(100, {6}, 0.8) == 86);
    CHECK(shared_min_target_row(100, {6, 24}, 0.8) == 89);
    CHECK(shared_min_target_row(500, {6, 12, 24}, 0.8) == 409);
    // A horizon the table cannot host contributes nothing.
    CHECK(shared_min_target_row(50, {72}, 0.8) == 0);
}

TEST_CASE("thread cap honors AIRCORRECT_THREADS") {
    ThreadEnvGuard guard;
    setenv("AIRCORRECT_THREADS", "3", 1);
    CHECK(max_cell_threads() == 3);
    setenv("AIRCORRECT_THREADS", "1", 1);
    CHECK(max_cell_threads() == 1);
    setenv("AIRCORRECT_THREADS", "0", 1);
    CHECK(max_cell_threads() == 1);
    setenv("AIRCORRECT_THREADS", "abc", 1);
    CHECK(max_cell_threads() == 1);
    unsetenv("AIRCORRECT_THREADS");
    CHECK(max_cell_threads() >= 1);
}

TEST_CASE("experiment run emits a complete, verifiable artifact set") {
    ThreadEnvGuard guard;
    const fs::path out = test_root() / "experiment";
    ExperimentConfig cfg = tiny_config(out, 400);
    cfg.pollutants = {"pm25", "o3_1h"};

    setenv("AIRCORRECT_THREADS", "1", 1);
    RunArtifacts a = run_experiment(cfg);

    CHECK(a.total_cells == 2);
    CHECK(a.failed_cells == 0);
    REQUIRE(a.rows.size() == 2);
    for (const MetricsRow& row : a.rows) {
        CHECK(row.model == "ptc");
        CHECK(row.horizon_hours == 24);
        // 400 rows, h=24: 352 windows, 281 train, 71 test.
        CHECK(row.metrics.n == 71);
        CHECK(row.metrics.mae > 0.0);
    }
    CHECK(a.rows[0].pollutant == "pm25");
    CHECK(a.rows[1].pollutant == "o3_1h");

    CHECK(fs::exists(out / "config.json"));
    CHECK(fs::exists(out / "metrics.csv"));
    CHECK(fs::exists(out / "train_metrics.csv"));
    CHECK(fs::exists(out / "importance_synthetic_pm25_h24_ptc_temporal.csv"));
    CHECK(fs::exists(out / "importance_synthetic_pm25_h24_ptc_weather.csv"));
    CHECK(fs::exists(out / "series_synthetic_pm25_h24.csv"));
    CHECK(fs::exists(out / "overlay_synthetic_pm25_h24.svg"));
    CHECK(fs::exists(out / "bundles/synthetic_pm25_h24_ptc.bundle"));
    CHECK(fs::exists(out / "bundles/synthetic_o3_1h_h24_ptc.bundle"));
    CHECK_FALSE(fs::exists(out / "horizon_mae.csv"));  // single-preset single-horizon run
    REQUIRE(a.bundles.size() == 2);
    CHECK(verify_manifest(a.manifest).empty());

    // The bundle records the cell's derived seed, pinning the substream scheme.
    ModelBundle b = load_bundle(a.bundles[0]);
    CHECK(b.station == "synthetic");
    CHECK(b.pollutant == "pm25");
    CHECK(b.preset == "ptc");
    const std::uint64_t expect_seed = splitmix64(
        cfg.seed ^ fnv1a64(std::string("synthetic") + "\x1f" + "pm25" + "\x1f" + "24"));
    CHECK(b.seed == expect_seed);
    CHECK(b.has_cascade);
    CHECK(b.has_gbt_temporal);
    CHECK(b.has_gbt_weather);
    CHECK(b.has_corrector);

    // Byte-identical artifacts on a rerun, regardless of cell parallelism.
    const std::string metrics1 = slurp(out / "metrics.csv");
    const std::string bundle1 = slurp(a.bundles[0]);
    const std::string manifest1 = slurp(a.manifest);
    setenv("AIRCORRECT_THREADS", "4", 1);
    RunArtifacts again = run_experiment(cfg);
    CHECK(slurp(out / "metrics.csv") == metrics1);
    CHECK(slurp(again.bundles[0]) == bundle1);
    CHECK(slurp(again.manifest) == manifest1);
}

TEST_CASE("comparison run scores all seven models on one split") {
    ThreadEnvGuard guard;
    setenv("AIRCORRECT_THREADS", "2", 1);
    const fs::path out = test_root() / "comparison";
    ExperimentConfig cfg = tiny_config(out, 320);
    RunArtifacts a = run_comparison(cfg);

    CHECK(a.total_cells == 1);
    CHECK(a.failed_cells == 0);
    REQUIRE(a.rows.size() == 7);
    const std::vector<std::string> expect{"ptc",        "gru_xgb",     "lstm_dnn",
                                          "dnn_xgb",    "cmaq24_raw",  "persistence",
                                          "analog_ensemble"};
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(a.rows[i].model == expect[i]);

    // Every model is judged on the identical test slice.
    const std::size_t n = a.rows[0].metrics.n;
    for (const MetricsRow& row : a.rows) CHECK(row.metrics.n == n);

    // The raw forecast is its own baseline, so its improvement is exactly zero.
    for (const MetricsRow& row : a.rows)
        if (row.model == "cmaq24_raw") {
            CHECK(row.metrics.acc_improve_pct == 0.0);
            CHECK(row.metrics.eps_base == row.metrics.eps_model);
        }

    CHECK(fs::exists(out / "horizon_mae.csv"));
    CHECK(fs::exists(out / "series_synthetic_pm25_h24.csv"));
    CHECK(verify_manifest(a.manifest).empty());

    // Trainable models store bundles; pure baselines do not.
    std::set<std::string> bundle_names;
    for (const auto& p : a.bundles) bundle_names.insert(p.filename().string());
    CHECK(bundle_names.size() == 4);
    CHECK(bundle_names.count("synthetic_pm25_h24_ptc.bundle") == 1);
    CHECK(bundle_names.count("synthetic_pm25_h24_dnn_xgb.bundle") == 1);
    CHECK(bundle_names.count("synthetic_pm25_h24_cmaq24_raw.bundle") == 0);
}

TEST_CASE("horizon sweep compares horizons on one shared test period") {
    ThreadEnvGuard guard;
    setenv("AIRCORRECT_THREADS", "3", 1);
    const fs::path out = test_root() / "sweep";
    ExperimentConfig cfg = tiny_config(out, 500);
    cfg.horizons = {6, 12, 24};
    cfg.synthetic.options.diurnal_scale = 0.0;  // pure AR(1) pollutant process
    cfg.synthetic.bias = {10.0, 1.1, 3.0};

    RunArtifacts a = horizon_sweep(cfg);
    CHECK(a.total_cells == 3);
    CHECK(a.failed_cells == 0);
    REQUIRE(a.rows.size() == 9);  // {preset, cmaq24_raw, persistence} x 3 horizons

    // One shared evaluation window: every row scores the same sample count.
    for (const MetricsRow& row : a.rows) CHECK(row.metrics.n == a.rows[0].metrics.n);

    // Persistence degrades with lead time on an autoregressive process.
    double mae6 = 0, mae12 = 0, mae24 = 0;
    for (const MetricsRow& row : a.rows)
        if (row.model == "persistence") {
            if (row.horizon_hours == 6) mae6 = row.metrics.mae;
            if (row.horizon_hours == 12) mae12 = row.metrics.mae;
            if (row.horizon_hours == 24) mae24 = row.metrics.mae;
        }
    CHECK(mae6 > 0.0);
    CHECK(mae6 < mae12);
    CHECK(mae12 < mae24);

    CHECK(fs::exists(out / "horizon_mae.csv"));
    CHECK(fs::exists(out / "horizon_mae_synthetic_pm25.svg"));
    CHECK_FALSE(fs::exists(out / "series_synthetic_pm25_h6.csv"));  // sweep omits series

    const std::string hcsv = slurp(out / "horizon_mae.csv");
    CHECK(hcsv.rfind("station,pollutant,model,horizon_h,mae\n", 0) == 0);
    // Header plus nine data lines.
    CHECK(std::count(hcsv.begin(), hcsv.end(), '\n') == 10);
    CHECK(verify_manifest(a.manifest).empty());
}

TEST_CASE("a failing cell is isolated and recorded, others proceed") {
    ThreadEnvGuard guard;
    setenv("AIRCORRECT_THREADS", "1", 1);
    StationTable table = generate_synthetic(5, 260, BiasSpec{6.0, 1.1, 2.0});
    for (std::size_t c = 0; c < table.column_names.size(); ++c)
        if (table.column_names[c] == "so2") table.columns[c].assign(table.n_rows(), 10.0);
    const fs::path csv = test_root() / "two_pollutants.csv";
    write_station_csv(table, csv);

    const fs::path out = test_root() / "isolation";
    ExperimentConfig cfg = tiny_config(out, 0);
    cfg.use_synthetic = false;
    cfg.csv_path = csv;
    cfg.pollutants = {"pm25", "so2"};

    RunArtifacts a = run_experiment(cfg);
    CHECK(a.total_cells == 2);
    CHECK(a.failed_cells == 1);
    REQUIRE(a.rows.size() == 1);
    CHECK(a.rows[0].pollutant == "pm25");
    REQUIRE(a.bundles.size() == 1);

    const std::string manifest = slurp(a.manifest);
    CHECK(manifest.find("synthetic/so2/h24") != std::string::npos);
    CHECK(verify_manifest(a.manifest).empty());
}

TEST_CASE("asking for an absent station fails up front") {
    ThreadEnvGuard guard;
    const fs::path out = test_root() / "ghost";
    ExperimentConfig cfg = tiny_config(out, 300);
    cfg.stations = {"ghost"};
    CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
}
