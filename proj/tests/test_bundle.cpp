#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "aircorrect/boosting.hpp"
#include "aircorrect/bundle.hpp"
#include "aircorrect/corrector.hpp"
#include "aircorrect/errors.hpp"
#include "aircorrect/recurrent.hpp"
#include "aircorrect/rng.hpp"
#include "test_support.hpp"

using namespace aircorrect;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "aircorrect_bundle_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

fs::path bundle_path(const std::string& name) { return test_dir() / name; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void put_u64(std::string& s, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

bool same_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

CascadeNet sample_cascade(CellKind cell, CascadeWiring wiring, std::uint64_t seed) {
    CascadeConfig cfg;
    cfg.cell = cell;
    cfg.wiring = wiring;
    cfg.layer1_hidden = 6;
    cfg.layer2_hidden = 9;
    CascadeNet net = make_cascade(cfg, 27, seed);
    for (int i = 0; i < 27; ++i) net.feature_names.push_back("x" + std::to_string(i));
    net.scalers.pollutant = {2.5, 97.5};
    net.scalers.cmaq[0] = {1.0, 90.0};
    net.scalers.cmaq[1] = {1.5, 91.0};
    net.scalers.cmaq[2] = {2.0, 92.0};
    net.scalers.train_count = 1234;
    return net;
}

GBTModel sample_gbt(std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd X = testsupport::random_matrix(rng, 40, 3, 0.0, 1.0);
    Eigen::VectorXd y(40);
    for (Eigen::Index i = 0; i < 40; ++i)
        y(i) = 3.0 * X(i, 0) - 2.0 * X(i, 2) + 0.1 * rng.normal();
    GBTConfig cfg;
    cfg.n_estimators = 25;
    cfg.max_depth = 3;
    cfg.min_child_weight = 2;
    return fit_gbt(X, y, cfg, {"a", "b", "c"});
}

ModelBundle meta_only_bundle() {
    ModelBundle b;
    b.station = "st-7";
    b.pollutant = "pm25";
    b.preset = "ptc";
    b.horizon_hours = 24;
    b.seed = 99;
    b.target_scaler = {3.25, 181.75};
    b.weather_features = {"max_t", "min_t"};
    return b;
}

}  // namespace

TEST_CASE("LSTM cascade survives a round trip bit-exactly") {
    ModelBundle b = meta_only_bundle();
    b.has_cascade = true;
    b.cascade = sample_cascade(CellKind::lstm, CascadeWiring::hidden_sequence, 11);

    Rng rng(12);
    Eigen::VectorXd sample = testsupport::random_matrix(rng, 27, 1, 0.0, 1.0).col(0);
    const double before = cascade_forward(b.cascade, sample);

    const fs::path path = bundle_path("lstm.bundle");
    save_bundle(b, path);
    ModelBundle loaded = load_bundle(path);

    REQUIRE(loaded.has_cascade);
    CHECK_FALSE(loaded.has_gbt_temporal);
    CHECK_FALSE(loaded.has_dense_main);
    CHECK_FALSE(loaded.has_corrector);
    CHECK(loaded.cascade.config.cell == CellKind::lstm);
    CHECK(loaded.cascade.config.layer1_hidden == 6);
    CHECK(loaded.cascade.config.layer2_hidden == 9);
    CHECK(loaded.cascade.feature_names == b.cascade.feature_names);
    CHECK(loaded.cascade.scalers.pollutant.min == 2.5);
    CHECK(loaded.cascade.scalers.pollutant.max == 97.5);
    CHECK(loaded.cascade.scalers.cmaq[2].max == 92.0);
    CHECK(loaded.cascade.scalers.train_count == 1234);

    auto av = b.cascade.param_views();
    auto bv = loaded.cascade.param_views();
    REQUIRE(av.size() == bv.size());
    for (std::size_t i = 0; i < av.size(); ++i) CHECK(same_matrix(*av[i], *bv[i]));
    CHECK(cascade_forward(loaded.cascade, sample) == before);
}

TEST_CASE("GRU prediction-feed cascade survives a round trip bit-exactly") {
    ModelBundle b = meta_only_bundle();
    b.has_cascade = true;
    b.cascade = sample_cascade(CellKind::gru, CascadeWiring::prediction_feed, 21);

    Rng rng(22);
    Eigen::VectorXd sample = testsupport::random_matrix(rng, 27, 1, 0.0, 1.0).col(0);
    const double before = cascade_forward(b.cascade, sample);

    const fs::path path = bundle_path("gru.bundle");
    save_bundle(b, path);
    ModelBundle loaded = load_bundle(path);
    REQUIRE(loaded.has_cascade);
    CHECK(loaded.cascade.config.cell == CellKind::gru);
    CHECK(loaded.cascade.config.wiring == CascadeWiring::prediction_feed);
    CHECK(cascade_forward(loaded.cascade, sample) == before);
}

TEST_CASE("GBT sections survive a round trip bit-exactly") {
    ModelBundle b = meta_only_bundle();
    b.has_gbt_temporal = true;
    b.gbt_temporal = sample_gbt(31);
    b.has_gbt_weather = true;
    b.gbt_weather = sample_gbt(32);

    Rng rng(33);
    Eigen::MatrixXd probe = testsupport::random_matrix(rng, 15, 3, 0.0, 1.0);
    const Eigen::VectorXd before_t = predict_gbt(b.gbt_temporal, probe);
    const Eigen::VectorXd before_w = predict_gbt(b.gbt_weather, probe);

    const fs::path path = bundle_path("gbt.bundle");
    save_bundle(b, path);
    ModelBundle loaded = load_bundle(path);
    REQUIRE(loaded.has_gbt_temporal);
    REQUIRE(loaded.has_gbt_weather);
    CHECK(loaded.gbt_temporal.base_score == b.gbt_temporal.base_score);
    CHECK(loaded.gbt_temporal.learning_rate == b.gbt_temporal.learning_rate);
    CHECK(loaded.gbt_temporal.feature_names == b.gbt_temporal.feature_names);
    CHECK(loaded.gbt_temporal.trees.size() == b.gbt_temporal.trees.size());
    CHECK(same_matrix(predict_gbt(loaded.gbt_temporal, probe), before_t));
    CHECK(same_matrix(predict_gbt(loaded.gbt_weather, probe), before_w));

    const auto imp_before = feature_importance(b.gbt_temporal);
    const auto imp_after = feature_importance(loaded.gbt_temporal);
    CHECK(imp_before.fraction == imp_after.fraction);
}

TEST_CASE("dense main section survives a round trip bit-exactly") {
    ModelBundle b = meta_only_bundle();
    b.preset = "dnn_xgb";
    b.has_dense_main = true;
    DenseNetConfig cfg;
    cfg.hidden = {7, 5};
    cfg.dropout_rate = 0.1;
    cfg.dropout_layers = 1;
    b.dense_main = make_dense_net(cfg, 4, 41);
    b.dense_main_features = {"D3", "D7", "cmaq_24h", "max_t"};

    Rng rng(42);
    Eigen::MatrixXd probe = testsupport::random_matrix(rng, 9, 4, -1.0, 1.0);
    const Eigen::VectorXd before = dense_forward_batch(b.dense_main, probe);

    const fs::path path = bundle_path("dense.bundle");
    save_bundle(b, path);
    ModelBundle loaded = load_bundle(path);
    REQUIRE(loaded.has_dense_main);
    CHECK(loaded.dense_main.config.hidden == cfg.hidden);
    CHECK(loaded.dense_main.config.dropout_rate == 0.1);
    CHECK(loaded.dense_main.config.dropout_layers == 1);
    CHECK(loaded.dense_main.input_width == 4);
    CHECK(loaded.dense_main_features == b.dense_main_features);
    CHECK(same_matrix(dense_forward_batch(loaded.dense_main, probe), before));
}

TEST_CASE("full bundle: every section plus a live corrector") {
    ModelBundle b = meta_only_bundle();
    b.has_cascade = true;
    b.cascade = sample_cascade(CellKind::lstm, CascadeWiring::hidden_sequence, 51);
    b.has_gbt_temporal = true;
    b.gbt_temporal = sample_gbt(52);
    b.has_gbt_weather = true;
    b.gbt_weather = sample_gbt(53);

    Rng rng(54);
    WeatherMatrix weather;
    weather.values = testsupport::random_matrix(rng, 60, 2, 0.0, 1.0);
    weather.feature_names = {"max_t", "min_t"};
    weather.met_scalers = {{0.0, 1.0}, {0.0, 1.0}};
    weather.target_rows.assign(60, 0);
    Eigen::VectorXd recurrent(60), observed(60);
    for (Eigen::Index i = 0; i < 60; ++i) {
        recurrent(i) = rng.uniform(0.3, 0.7);
        observed(i) = recurrent(i) + 0.1 * weather.values(i, 0) - 0.05;
    }
    TrainingConfig tc;
    tc.epochs = 3;
    tc.batch_size = 16;
    b.has_corrector = true;
    b.corrector = train_corrector(recurrent, observed, weather, tc);
    REQUIRE_FALSE(b.corrector.degenerate);

    const CorrectionResult before =
        apply_correction(recurrent, weather, b.corrector, b.target_scaler);

    const fs::path path = bundle_path("full.bundle");
    save_bundle(b, path);
    ModelBundle loaded = load_bundle(path);

    CHECK(loaded.station == "st-7");
    CHECK(loaded.pollutant == "pm25");
    CHECK(loaded.preset == "ptc");
    CHECK(loaded.horizon_hours == 24);
    CHECK(loaded.seed == 99);
    CHECK(loaded.target_scaler.min == 3.25);
    CHECK(loaded.target_scaler.max == 181.75);
    CHECK(loaded.weather_features == b.weather_features);
    REQUIRE(loaded.has_corrector);
    CHECK_FALSE(loaded.corrector.degenerate);
    CHECK(loaded.corrector.residual_scaler.min == b.corrector.residual_scaler.min);
    CHECK(loaded.corrector.residual_scaler.max == b.corrector.residual_scaler.max);
    CHECK(loaded.corrector.feature_names == b.corrector.feature_names);

    const CorrectionResult after =
        apply_correction(recurrent, weather, loaded.corrector, loaded.target_scaler);
    CHECK(same_matrix(after.final_scaled, before.final_scaled));
    CHECK(same_matrix(after.final_physical, before.final_physical));
    CHECK(after.clamped == before.clamped);

    const std::string listing = describe_bundle(path);
    CHECK(listing.find("section meta") != std::string::npos);
    CHECK(listing.find("section cascade") != std::string::npos);
    CHECK(listing.find("section gbt_temporal") != std::string::npos);
    CHECK(listing.find("section gbt_weather") != std::string::npos);
    CHECK(listing.find("section corrector") != std::string::npos);
    CHECK(listing.find("\"pollutant\":\"pm25\"") != std::string::npos);
}

TEST_CASE("degenerate corrector persists without a network section") {
    ModelBundle b = meta_only_bundle();
    b.has_corrector = true;
    b.corrector.degenerate = true;
    b.corrector.feature_names = {"max_t"};

    const fs::path path = bundle_path("degenerate.bundle");
    save_bundle(b, path);
    const std::string listing = describe_bundle(path);
    CHECK(listing.find("section corrector") == std::string::npos);

    ModelBundle loaded = load_bundle(path);
    REQUIRE(loaded.has_corrector);
    CHECK(loaded.corrector.degenerate);
    CHECK(loaded.corrector.feature_names == b.corrector.feature_names);

    WeatherMatrix weather;
    weather.values = Eigen::MatrixXd::Zero(3, 1);
    weather.feature_names = {"max_t"};
    weather.met_scalers = {{0.0, 1.0}};
    weather.target_rows.assign(3, 0);
    Eigen::VectorXd recurrent(3);
    recurrent << 0.1, 0.2, 0.3;
    CorrectionResult res =
        apply_correction(recurrent, weather, loaded.corrector, ScalerParams{0.0, 10.0});
    CHECK(same_matrix(res.final_scaled, recurrent));
}

TEST_CASE("saving twice produces identical bytes, as does save-load-save") {
    ModelBundle b = meta_only_bundle();
    b.has_cascade = true;
    b.cascade = sample_cascade(CellKind::lstm, CascadeWiring::hidden_sequence, 61);
    b.has_gbt_temporal = true;
    b.gbt_temporal = sample_gbt(62);

    const fs::path p1 = bundle_path("stable1.bundle");
    const fs::path p2 = bundle_path("stable2.bundle");
    save_bundle(b, p1);
    save_bundle(b, p2);
    CHECK(slurp(p1) == slurp(p2));

    ModelBundle loaded = load_bundle(p1);
    const fs::path p3 = bundle_path("stable3.bundle");
    save_bundle(loaded, p3);
    CHECK(slurp(p1) == slurp(p3));
}

TEST_CASE("foreign files are rejected as not a bundle") {
    const fs::path path = bundle_path("foreign.bin");
    spit(path, "PK\x03\x04 this is really a zip file");
    CHECK_THROWS_AS(load_bundle(path), FormatError);

    const fs::path empty = bundle_path("empty.bin");
    spit(empty, "");
    CHECK_THROWS_AS(load_bundle(empty), FormatError);

    CHECK_THROWS_AS(load_bundle(test_dir() / "does_not_exist.bundle"), IoError);
}

TEST_CASE("other bundle versions are refused by name") {
    const fs::path v0 = bundle_path("v0.bundle");
    spit(v0, "AIRCORRECT-BUNDLE-v0\nrest");
    try {
        load_bundle(v0);
        FAIL("expected UnsupportedVersionError");
    } catch (const UnsupportedVersionError& e) {
        CHECK(std::string(e.what()).find("v0") != std::string::npos);
    }

    const fs::path v9 = bundle_path("v9.bundle");
    spit(v9, "AIRCORRECT-BUNDLE-v9\n");
    CHECK_THROWS_AS(load_bundle(v9), UnsupportedVersionError);
}

TEST_CASE("truncated and padded bundles are rejected") {
    ModelBundle b = meta_only_bundle();
    b.has_gbt_temporal = true;
    b.gbt_temporal = sample_gbt(71);
    const fs::path path = bundle_path("mutate.bundle");
    save_bundle(b, path);
    const std::string good = slurp(path);

    const fs::path chopped = bundle_path("chopped.bundle");
    spit(chopped, good.substr(0, good.size() - 10));
    CHECK_THROWS_AS(load_bundle(chopped), FormatError);

    const fs::path padded = bundle_path("padded.bundle");
    spit(padded, good + "extra");
    CHECK_THROWS_AS(load_bundle(padded), FormatError);
}

TEST_CASE("a corrupted section magic is caught") {
    ModelBundle b = meta_only_bundle();
    const fs::path path = bundle_path("flip.bundle");
    save_bundle(b, path);
    std::string bytes = slurp(path);
    const std::size_t at = bytes.find("AIRCORRECT-META");
    REQUIRE(at != std::string::npos);
    bytes[at + 11] = 'X';  // META -> XETA, lengths unchanged
    const fs::path bad = bundle_path("flip_bad.bundle");
    spit(bad, bytes);
    try {
        load_bundle(bad);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
}

TEST_CASE("unknown section names are rejected") {
    std::string data = "AIRCORRECT-BUNDLE-v1\n";
    const std::string header = R"({"sections":[{"name":"mystery","kind":"meta"}]})";
    put_u64(data, header.size());
    data += header;
    const std::string payload = "hello";
    put_u64(data, payload.size());
    data += payload;
    const fs::path path = bundle_path("mystery.bundle");
    spit(path, data);
    try {
        load_bundle(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("mystery") != std::string::npos);
    }
}

TEST_CASE("a header that is not JSON is rejected") {
    std::string data = "AIRCORRECT-BUNDLE-v1\n";
    const std::string header = "this is not json";
    put_u64(data, header.size());
    data += header;
    const fs::path path = bundle_path("badheader.bundle");
    spit(path, data);
    CHECK_THROWS_AS(load_bundle(path), FormatError);
}
