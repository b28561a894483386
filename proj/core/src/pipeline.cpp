#include "aircorrect/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "aircorrect/csv.hpp"
#include "aircorrect/errors.hpp"
#include "aircorrect/evaluation.hpp"
#include "aircorrect/rng.hpp"

namespace aircorrect {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------- config ---

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& prefix) {
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (item.key() == a) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("unknown config key \"" + prefix + item.key() + "\"");
    }
}

const json& member(const json& j, const char* key) { return j.at(key); }

double require_number(const json& v, const std::string& key) {
    if (!v.is_number()) throw ConfigError("config key \"" + key + "\" must be a number");
    return v.get<double>();
}

std::uint64_t require_uint(const json& v, const std::string& key) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigError("config key \"" + key + "\" must be a non-negative integer");
}

bool require_bool(const json& v, const std::string& key) {
    if (!v.is_boolean()) throw ConfigError("config key \"" + key + "\" must be a boolean");
    return v.get<bool>();
}

std::string require_string(const json& v, const std::string& key) {
    if (!v.is_string()) throw ConfigError("config key \"" + key + "\" must be a string");
    return v.get<std::string>();
}

double number_in(const json& v, const std::string& key, double lo, double hi, bool lo_open,
                 bool hi_open) {
    const double d = require_number(v, key);
    const bool lo_ok = lo_open ? d > lo : d >= lo;
    const bool hi_ok = hi_open ? d < hi : d <= hi;
    if (!lo_ok || !hi_ok) {
        std::ostringstream msg;
        msg << "config key \"" << key << "\" must lie in " << (lo_open ? '(' : '[') << lo << ", "
            << hi << (hi_open ? ')' : ']') << ", got " << d;
        throw ConfigError(msg.str());
    }
    return d;
}

std::vector<std::string> dedup_strings(const std::vector<std::string>& in, const char* what,
                                       std::vector<std::string>& warnings) {
    std::vector<std::string> out;
    for (const auto& s : in) {
        if (std::find(out.begin(), out.end(), s) != out.end()) {
            warnings.push_back(std::string("duplicate ") + what + " \"" + s + "\" ignored");
            continue;
        }
        out.push_back(s);
    }
    return out;
}

void parse_training(const json& t, TrainingConfig& cfg) {
    check_keys(t,
               {"learning_rate", "beta1", "beta2", "epsilon", "batch_size", "epochs", "patience",
                "clip_norm", "validation_fraction"},
               "training.");
    if (t.contains("learning_rate"))
        cfg.learning_rate = number_in(t["learning_rate"], "training.learning_rate", 0.0, 1e9,
                                      true, false);
    if (t.contains("beta1"))
        cfg.beta1 = number_in(t["beta1"], "training.beta1", 0.0, 1.0, false, true);
    if (t.contains("beta2"))
        cfg.beta2 = number_in(t["beta2"], "training.beta2", 0.0, 1.0, false, true);
    if (t.contains("epsilon"))
        cfg.epsilon = number_in(t["epsilon"], "training.epsilon", 0.0, 1.0, true, false);
    if (t.contains("batch_size")) {
        cfg.batch_size = static_cast<std::size_t>(require_uint(t["batch_size"],
                                                               "training.batch_size"));
        if (cfg.batch_size < 1) throw ConfigError("config key \"training.batch_size\" must be >= 1");
    }
    if (t.contains("epochs")) {
        cfg.epochs = static_cast<std::size_t>(require_uint(t["epochs"], "training.epochs"));
        if (cfg.epochs < 1) throw ConfigError("config key \"training.epochs\" must be >= 1");
    }
    if (t.contains("patience"))
        cfg.patience = static_cast<std::size_t>(require_uint(t["patience"], "training.patience"));
    if (t.contains("clip_norm"))
        cfg.clip_norm = number_in(t["clip_norm"], "training.clip_norm", 0.0, 1e9, false, false);
    if (t.contains("validation_fraction"))
        cfg.validation_fraction = number_in(t["validation_fraction"],
                                            "training.validation_fraction", 0.0, 0.5, false, false);
}

void parse_gbt(const json& g, GBTConfig& cfg) {
    check_keys(g,
               {"learning_rate", "max_depth", "min_child_weight", "n_estimators", "lambda",
                "gain_importance"},
               "gbt.");
    if (g.contains("learning_rate"))
        cfg.learning_rate = number_in(g["learning_rate"], "gbt.learning_rate", 0.0, 1e9, true,
                                      false);
    if (g.contains("max_depth")) {
        cfg.max_depth = static_cast<int>(require_uint(g["max_depth"], "gbt.max_depth"));
        if (cfg.max_depth < 1) throw ConfigError("config key \"gbt.max_depth\" must be >= 1");
    }
    if (g.contains("min_child_weight")) {
        cfg.min_child_weight =
            static_cast<std::size_t>(require_uint(g["min_child_weight"], "gbt.min_child_weight"));
        if (cfg.min_child_weight < 1)
            throw ConfigError("config key \"gbt.min_child_weight\" must be >= 1");
    }
    if (g.contains("n_estimators")) {
        cfg.n_estimators =
            static_cast<std::size_t>(require_uint(g["n_estimators"], "gbt.n_estimators"));
        if (cfg.n_estimators < 1)
            throw ConfigError("config key \"gbt.n_estimators\" must be >= 1");
    }
    if (g.contains("lambda"))
        cfg.lambda = number_in(g["lambda"], "gbt.lambda", 0.0, 1e12, false, false);
    if (g.contains("gain_importance"))
        cfg.gain_importance = require_bool(g["gain_importance"], "gbt.gain_importance");
}

void parse_cascade(const json& c, CascadeConfig& cfg) {
    check_keys(c, {"layer1_hidden", "layer2_hidden", "dropout_rate", "wiring", "layout"},
               "cascade.");
    if (c.contains("layer1_hidden")) {
        cfg.layer1_hidden = static_cast<int>(require_uint(c["layer1_hidden"],
                                                          "cascade.layer1_hidden"));
        if (cfg.layer1_hidden < 1)
            throw ConfigError("config key \"cascade.layer1_hidden\" must be >= 1");
    }
    if (c.contains("layer2_hidden")) {
        cfg.layer2_hidden = static_cast<int>(require_uint(c["layer2_hidden"],
                                                          "cascade.layer2_hidden"));
        if (cfg.layer2_hidden < 1)
            throw ConfigError("config key \"cascade.layer2_hidden\" must be >= 1");
    }
    if (c.contains("dropout_rate"))
        cfg.dropout_rate = number_in(c["dropout_rate"], "cascade.dropout_rate", 0.0, 1.0, false,
                                     true);
    if (c.contains("wiring")) {
        const std::string w = require_string(c["wiring"], "cascade.wiring");
        if (w == "hidden_sequence")
            cfg.wiring = CascadeWiring::hidden_sequence;
        else if (w == "prediction_feed")
            cfg.wiring = CascadeWiring::prediction_feed;
        else
            throw ConfigError("config key \"cascade.wiring\" must be \"hidden_sequence\" or "
                              "\"prediction_feed\"");
    }
    if (c.contains("layout")) {
        const std::string l = require_string(c["layout"], "cascade.layout");
        if (l == "univariate")
            cfg.layout = SequenceLayout::univariate;
        else if (l == "lag_multivariate")
            cfg.layout = SequenceLayout::lag_multivariate;
        else
            throw ConfigError("config key \"cascade.layout\" must be \"univariate\" or "
                              "\"lag_multivariate\"");
    }
}

void parse_dense(const json& d, DenseNetConfig& cfg) {
    check_keys(d, {"hidden", "dropout_rate", "dropout_layers"}, "dense.");
    if (d.contains("hidden")) {
        if (!d["hidden"].is_array() || d["hidden"].empty())
            throw ConfigError("config key \"dense.hidden\" must be a non-empty array");
        cfg.hidden.clear();
        for (const auto& v : d["hidden"]) {
            const int w = static_cast<int>(require_uint(v, "dense.hidden[]"));
            if (w < 1) throw ConfigError("config key \"dense.hidden[]\" must be >= 1");
            cfg.hidden.push_back(w);
        }
    }
    if (d.contains("dropout_rate"))
        cfg.dropout_rate = number_in(d["dropout_rate"], "dense.dropout_rate", 0.0, 1.0, false,
                                     true);
    if (d.contains("dropout_layers"))
        cfg.dropout_layers =
            static_cast<int>(require_uint(d["dropout_layers"], "dense.dropout_layers"));
}

void parse_data(const json& data, ExperimentConfig& cfg) {
    if (!data.is_object()) throw ConfigError("config key \"data\" must be an object");
    check_keys(data, {"csv", "synthetic"}, "data.");
    if (data.contains("csv") == data.contains("synthetic"))
        throw ConfigError("config key \"data\" must hold exactly one of \"csv\" or \"synthetic\"");
    if (data.contains("csv")) {
        cfg.use_synthetic = false;
        cfg.csv_path = require_string(data["csv"], "data.csv");
        if (cfg.csv_path.empty()) throw ConfigError("config key \"data.csv\" must be non-empty");
        return;
    }
    const json& s = data["synthetic"];
    if (!s.is_object()) throw ConfigError("config key \"data.synthetic\" must be an object");
    check_keys(s,
               {"seed", "n_hours", "offset", "scale", "noise_sd", "station_id", "start_epoch",
                "diurnal_scale"},
               "data.synthetic.");
    cfg.use_synthetic = true;
    if (s.contains("seed")) cfg.synthetic.seed = require_uint(s["seed"], "data.synthetic.seed");
    if (s.contains("n_hours")) {
        cfg.synthetic.n_hours =
            static_cast<std::size_t>(require_uint(s["n_hours"], "data.synthetic.n_hours"));
        if (cfg.synthetic.n_hours < 200)
            throw ConfigError("config key \"data.synthetic.n_hours\" must be >= 200");
    }
    if (s.contains("offset"))
        cfg.synthetic.bias.offset = require_number(s["offset"], "data.synthetic.offset");
    if (s.contains("scale"))
        cfg.synthetic.bias.scale = require_number(s["scale"], "data.synthetic.scale");
    if (s.contains("noise_sd"))
        cfg.synthetic.bias.noise_sd =
            number_in(s["noise_sd"], "data.synthetic.noise_sd", 0.0, 1e9, false, false);
    if (s.contains("station_id")) {
        cfg.synthetic.options.station_id =
            require_string(s["station_id"], "data.synthetic.station_id");
        if (cfg.synthetic.options.station_id.empty())
            throw ConfigError("config key \"data.synthetic.station_id\" must be non-empty");
    }
    if (s.contains("start_epoch"))
        cfg.synthetic.options.start_epoch =
            static_cast<std::int64_t>(require_uint(s["start_epoch"], "data.synthetic.start_epoch"));
    if (s.contains("diurnal_scale"))
        cfg.synthetic.options.diurnal_scale =
            number_in(s["diurnal_scale"], "data.synthetic.diurnal_scale", 0.0, 1e9, false, false);
}

bool known_pollutant(const std::string& name) {
    for (const char* p : kPollutantNames)
        if (name == p) return true;
    return false;
}

std::string pollutant_list() {
    std::string out;
    for (const char* p : kPollutantNames) {
        if (!out.empty()) out += ", ";
        out += p;
    }
    return out;
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("config " + origin + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config " + origin + ": top level must be an object");
    check_keys(j,
               {"data", "stations", "pollutants", "horizons", "preset", "prune_threshold",
                "train_fraction", "calendar_features", "seed", "output_dir", "training", "gbt",
                "cascade", "dense", "impute", "analog"},
               "");

    ExperimentConfig cfg;
    if (!j.contains("data")) throw ConfigError("config requires a \"data\" object");
    parse_data(j["data"], cfg);

    if (j.contains("stations")) {
        if (!j["stations"].is_array())
            throw ConfigError("config key \"stations\" must be an array of strings");
        std::vector<std::string> raw;
        for (const auto& v : j["stations"]) raw.push_back(require_string(v, "stations[]"));
        cfg.stations = dedup_strings(raw, "station", cfg.warnings);
    }

    if (!j.contains("pollutants") || !j["pollutants"].is_array() || j["pollutants"].empty())
        throw ConfigError("config requires a non-empty \"pollutants\" array");
    {
        std::vector<std::string> raw;
        for (const auto& v : j["pollutants"]) {
            const std::string p = require_string(v, "pollutants[]");
            if (!known_pollutant(p))
                throw ConfigError("unknown pollutant \"" + p + "\"; valid pollutants: " +
                                  pollutant_list());
            raw.push_back(p);
        }
        cfg.pollutants = dedup_strings(raw, "pollutant", cfg.warnings);
    }

    if (j.contains("horizons")) {
        if (!j["horizons"].is_array() || j["horizons"].empty())
            throw ConfigError("config key \"horizons\" must be a non-empty array");
        std::vector<int> raw;
        for (const auto& v : j["horizons"]) {
            const int h = static_cast<int>(require_uint(v, "horizons[]"));
            if (!is_valid_horizon(h))
                throw ConfigError("horizon " + std::to_string(h) +
                                  " h not supported; valid horizons: 6, 12, 24, 48, 72");
            raw.push_back(h);
        }
        cfg.horizons.clear();
        for (int h : raw) {
            if (std::find(cfg.horizons.begin(), cfg.horizons.end(), h) != cfg.horizons.end()) {
                cfg.warnings.push_back("duplicate horizon " + std::to_string(h) + " ignored");
                continue;
            }
            cfg.horizons.push_back(h);
        }
    }

    if (j.contains("preset")) {
        cfg.preset = require_string(j["preset"], "preset");
        comparison_preset(cfg.preset);  // validates, listing the presets on failure
    }
    if (j.contains("prune_threshold"))
        cfg.prune_threshold =
            number_in(j["prune_threshold"], "prune_threshold", 0.0, 1.0, false, true);
    if (j.contains("train_fraction"))
        cfg.train_fraction = number_in(j["train_fraction"], "train_fraction", 0.0, 1.0, true, true);
    if (j.contains("calendar_features"))
        cfg.calendar_features = require_bool(j["calendar_features"], "calendar_features");
    if (j.contains("seed")) cfg.seed = require_uint(j["seed"], "seed");
    if (j.contains("output_dir")) {
        cfg.output_dir = require_string(j["output_dir"], "output_dir");
        if (cfg.output_dir.empty()) throw ConfigError("config key \"output_dir\" must be non-empty");
    }

    if (j.contains("training")) {
        if (!j["training"].is_object()) throw ConfigError("config key \"training\" must be an object");
        parse_training(j["training"], cfg.training);
    }
    if (j.contains("gbt")) {
        if (!j["gbt"].is_object()) throw ConfigError("config key \"gbt\" must be an object");
        parse_gbt(j["gbt"], cfg.gbt);
    }
    if (j.contains("cascade")) {
        if (!j["cascade"].is_object()) throw ConfigError("config key \"cascade\" must be an object");
        parse_cascade(j["cascade"], cfg.cascade);
    }
    if (j.contains("dense")) {
        if (!j["dense"].is_object()) throw ConfigError("config key \"dense\" must be an object");
        parse_dense(j["dense"], cfg.dense);
    }
    if (j.contains("impute")) {
        if (!j["impute"].is_object()) throw ConfigError("config key \"impute\" must be an object");
        check_keys(j["impute"], {"max_absent_fraction"}, "impute.");
        if (j["impute"].contains("max_absent_fraction"))
            cfg.impute.max_absent_fraction = number_in(
                j["impute"]["max_absent_fraction"], "impute.max_absent_fraction", 0.0, 1.0, false,
                false);
    }
    if (j.contains("analog")) {
        if (!j["analog"].is_object()) throw ConfigError("config key \"analog\" must be an object");
        check_keys(j["analog"], {"d1_weight", "d2_weight", "multiplicative"}, "analog.");
        const json& a = j["analog"];
        if (a.contains("d1_weight"))
            cfg.analog_d1_weight = number_in(a["d1_weight"], "analog.d1_weight", 0.0, 1e9, false,
                                             false);
        if (a.contains("d2_weight"))
            cfg.analog_d2_weight = number_in(a["d2_weight"], "analog.d2_weight", 0.0, 1e9, false,
                                             false);
        if (a.contains("multiplicative"))
            cfg.analog_multiplicative = require_bool(a["multiplicative"], "analog.multiplicative");
    }
    return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open config: " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_json(ss.str(), path.string());
}

std::string config_echo(const ExperimentConfig& cfg) {
    json j;
    if (cfg.use_synthetic) {
        j["data"]["synthetic"] = {{"seed", cfg.synthetic.seed},
                                  {"n_hours", cfg.synthetic.n_hours},
                                  {"offset", cfg.synthetic.bias.offset},
                                  {"scale", cfg.synthetic.bias.scale},
                                  {"noise_sd", cfg.synthetic.bias.noise_sd},
                                  {"station_id", cfg.synthetic.options.station_id},
                                  {"start_epoch", cfg.synthetic.options.start_epoch},
                                  {"diurnal_scale", cfg.synthetic.options.diurnal_scale}};
    } else {
        j["data"]["csv"] = cfg.csv_path.string();
    }
    if (!cfg.stations.empty()) j["stations"] = cfg.stations;
    j["pollutants"] = cfg.pollutants;
    j["horizons"] = cfg.horizons;
    j["preset"] = cfg.preset;
    // Negative means "derive 0.5/n per cell"; that default is spelled by
    // omission so the echo stays parseable.
    if (cfg.prune_threshold >= 0.0) j["prune_threshold"] = cfg.prune_threshold;
    j["train_fraction"] = cfg.train_fraction;
    j["calendar_features"] = cfg.calendar_features;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir.string();
    j["training"] = {{"learning_rate", cfg.training.learning_rate},
                     {"beta1", cfg.training.beta1},
                     {"beta2", cfg.training.beta2},
                     {"epsilon", cfg.training.epsilon},
                     {"batch_size", cfg.training.batch_size},
                     {"epochs", cfg.training.epochs},
                     {"patience", cfg.training.patience},
                     {"clip_norm", cfg.training.clip_norm},
                     {"validation_fraction", cfg.training.validation_fraction}};
    j["gbt"] = {{"learning_rate", cfg.gbt.learning_rate},
                {"max_depth", cfg.gbt.max_depth},
                {"min_child_weight", cfg.gbt.min_child_weight},
                {"n_estimators", cfg.gbt.n_estimators},
                {"lambda", cfg.gbt.lambda},
                {"gain_importance", cfg.gbt.gain_importance}};
    j["cascade"] = {
        {"layer1_hidden", cfg.cascade.layer1_hidden},
        {"layer2_hidden", cfg.cascade.layer2_hidden},
        {"dropout_rate", cfg.cascade.dropout_rate},
        {"wiring", cfg.cascade.wiring == CascadeWiring::hidden_sequence ? "hidden_sequence"
                                                                        : "prediction_feed"},
        {"layout",
         cfg.cascade.layout == SequenceLayout::univariate ? "univariate" : "lag_multivariate"}};
    j["dense"] = {{"hidden", cfg.dense.hidden},
                  {"dropout_rate", cfg.dense.dropout_rate},
                  {"dropout_layers", cfg.dense.dropout_layers}};
    j["impute"] = {{"max_absent_fraction", cfg.impute.max_absent_fraction}};
    j["analog"] = {{"d1_weight", cfg.analog_d1_weight},
                   {"d2_weight", cfg.analog_d2_weight},
                   {"multiplicative", cfg.analog_multiplicative}};
    return j.dump(2) + "\n";
}

std::size_t shared_min_target_row(std::size_t n_rows, const std::vector<int>& horizons,
                                  double train_fraction) {
    std::size_t best = 0;
    for (int h : horizons) {
        const std::size_t lead = static_cast<std::size_t>(kLagCount + h);
        if (n_rows <= lead) continue;  // that horizon fails on its own later
        const std::size_t count = n_rows - lead;
        const auto tn =
            static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(count)));
        best = std::max(best, lead + tn);
    }
    return best;
}

std::size_t max_cell_threads() {
    if (const char* env = std::getenv("AIRCORRECT_THREADS")) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(env, &end, 10);
        if (end != env && end && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
        return 1;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? hc : 1;
}

// ------------------------------------------------------------------ cells ---

namespace {

enum class RunMode { experiment, comparison, sweep };

struct CellJob {
    std::size_t table_index = 0;
    std::string pollutant;
    int horizon = 0;
    std::size_t min_target_row = 0;  // sweep: start of the shared test period
};

struct ModelOutput {
    std::string name;
    std::vector<double> test_pred;  // physical, shared test period
    MetricsRow test_row;
    bool has_train_row = false;
    MetricsRow train_row;
    bool has_imp_temporal = false;
    ImportanceReport imp_temporal;
    bool has_imp_weather = false;
    ImportanceReport imp_weather;
    bool has_bundle = false;
    ModelBundle bundle;
};

struct CellResult {
    CellJob job;
    std::string station;
    bool ok = false;
    std::string error;
    std::vector<std::int64_t> test_timestamps;  // shared test period
    std::vector<double> y_true;                 // observed, physical
    std::vector<double> y_base;                 // raw 24 h forecast
    std::vector<ModelOutput> models;
    std::vector<std::string> warnings;
};

struct CellContext {
    const StationTable* table = nullptr;
    std::string station;
    std::string pollutant;
    int horizon = 0;
    SplitSpec split;
    std::uint64_t cell_seed = 0;  // shared by every preset in the cell

    WindowedDataset full, train, test;
    WeatherMatrix weather, wtrain, wtest;
    std::vector<double> y_true_test, y_base_test;  // full test slice, physical
    std::vector<double> y_true_train, y_base_train;
    std::size_t shared_start = 0;  // index into the test slice
};

std::uint64_t substream(std::uint64_t seed, const char* purpose) {
    return splitmix64(seed ^ fnv1a64(purpose));
}

std::span<const double> shared_span(const std::vector<double>& v, std::size_t from) {
    return {v.data() + from, v.size() - from};
}

std::vector<double> shared_copy(const std::vector<double>& v, std::size_t from) {
    return {v.begin() + static_cast<std::ptrdiff_t>(from), v.end()};
}

CellContext make_cell_context(const StationTable& table, const CellJob& job,
                              const ExperimentConfig& cfg) {
    CellContext ctx;
    ctx.table = &table;
    ctx.station = table.station_id;
    ctx.pollutant = job.pollutant;
    ctx.horizon = job.horizon;
    ctx.split = SplitSpec{cfg.train_fraction};
    ctx.cell_seed = splitmix64(cfg.seed ^ fnv1a64(table.station_id + "\x1f" + job.pollutant +
                                                  "\x1f" + std::to_string(job.horizon)));

    ctx.full = build_temporal_windows(table, job.pollutant, job.horizon, ctx.split);
    ctx.weather = build_weather_matrix(table, ctx.full, cfg.calendar_features);
    std::tie(ctx.train, ctx.test) = chronological_split(ctx.full, ctx.split);
    std::tie(ctx.wtrain, ctx.wtest) = split_weather(ctx.weather, ctx.split);

    const auto& obs = table.column(job.pollutant);
    const auto& cm24 = table.column(forecast_column_name(24, job.pollutant));
    for (std::size_t r : ctx.test.target_rows) {
        ctx.y_true_test.push_back(obs[r]);
        ctx.y_base_test.push_back(cm24[r]);
    }
    for (std::size_t r : ctx.train.target_rows) {
        ctx.y_true_train.push_back(obs[r]);
        ctx.y_base_train.push_back(cm24[r]);
    }

    while (ctx.shared_start < ctx.test.target_rows.size() &&
           ctx.test.target_rows[ctx.shared_start] < job.min_target_row)
        ++ctx.shared_start;
    if (ctx.shared_start >= ctx.test.target_rows.size())
        throw EmptyDatasetError("shared test period is empty at horizon " +
                                std::to_string(job.horizon));
    return ctx;
}

MetricsRow make_test_row(const CellContext& ctx, const std::string& model,
                         const std::vector<double>& pred_full_test) {
    MetricsRow row;
    row.station = ctx.station;
    row.pollutant = ctx.pollutant;
    row.horizon_hours = ctx.horizon;
    row.model = model;
    row.metrics = evaluate_model(shared_span(ctx.y_true_test, ctx.shared_start),
                                 shared_span(pred_full_test, ctx.shared_start),
                                 shared_span(ctx.y_base_test, ctx.shared_start));
    return row;
}

MetricsRow make_train_row(const CellContext& ctx, const std::string& model,
                          const std::vector<double>& pred_train) {
    MetricsRow row;
    row.station = ctx.station;
    row.pollutant = ctx.pollutant;
    row.horizon_hours = ctx.horizon;
    row.model = model;
    row.metrics = evaluate_model(ctx.y_true_train, pred_train, ctx.y_base_train);
    return row;
}

std::vector<double> to_physical(const Eigen::VectorXd& scaled, const ScalerParams& p) {
    std::vector<double> out(static_cast<std::size_t>(scaled.size()));
    for (Eigen::Index i = 0; i < scaled.size(); ++i)
        out[static_cast<std::size_t>(i)] = std::max(0.0, inverse_transform(scaled(i), p));
    return out;
}

std::vector<double> to_vector(const Eigen::VectorXd& v) {
    return {v.data(), v.data() + v.size()};
}

/// Carves a chronological validation tail off a training slice. Returns
/// {fit, val}; val is empty when the fraction or the slice is too small.
std::pair<WindowedDataset, WindowedDataset> carve_validation(const WindowedDataset& train,
                                                             double fraction) {
    if (fraction > 0.0 && train.n_samples() >= 2) {
        const auto tn = static_cast<std::size_t>(
            std::floor((1.0 - fraction) * static_cast<double>(train.n_samples())));
        if (tn >= 1 && tn < train.n_samples())
            return chronological_split(train, SplitSpec{1.0 - fraction});
    }
    return {train, WindowedDataset{}};
}

ModelOutput run_trainable(const CellContext& ctx, const PresetWiring& wiring,
                          const ExperimentConfig& cfg, std::vector<std::string>& warnings) {
    ModelOutput out;
    out.name = wiring.name;

    ModelBundle bundle;
    bundle.station = ctx.station;
    bundle.pollutant = ctx.pollutant;
    bundle.preset = wiring.name;
    bundle.horizon_hours = ctx.horizon;
    bundle.seed = ctx.cell_seed;
    bundle.target_scaler = ctx.full.scalers.pollutant;

    const std::string cell_tag =
        ctx.station + "/" + ctx.pollutant + "/h" + std::to_string(ctx.horizon);

    // Importance-driven pruning of the temporal pattern.
    WindowedDataset used = ctx.full;
    if (wiring.use_pruning) {
        const GBTModel gbt_t =
            fit_gbt(ctx.train.inputs, ctx.train.targets, cfg.gbt, ctx.train.feature_names);
        out.imp_temporal = feature_importance(gbt_t);
        out.has_imp_temporal = true;
        bundle.gbt_temporal = gbt_t;
        bundle.has_gbt_temporal = true;
        const double thr = cfg.prune_threshold >= 0.0
                               ? cfg.prune_threshold
                               : default_prune_threshold(ctx.full.feature_names.size());
        PruneResult info;
        used = prune_dataset(out.imp_temporal, ctx.full, thr, &info);
        if (info.passthrough)
            warnings.push_back(cell_tag + " " + wiring.name +
                               ": empty importance report, temporal pruning skipped");
    }
    auto [train_used, test_used] = chronological_split(used, ctx.split);

    // Weather pattern, pruned the same way when the consumer wants it.
    const bool needs_weather = wiring.use_corrector || wiring.kind == ModelKind::dnn_xgb;
    WeatherMatrix weather_used;
    if (needs_weather) {
        weather_used = ctx.weather;
        if (!wiring.corrector_raw_weather) {
            const GBTModel gbt_w = fit_gbt(ctx.wtrain.values, ctx.train.targets, cfg.gbt,
                                           ctx.weather.feature_names);
            out.imp_weather = feature_importance(gbt_w);
            out.has_imp_weather = true;
            bundle.gbt_weather = gbt_w;
            bundle.has_gbt_weather = true;
            const double thr_w = cfg.prune_threshold >= 0.0
                                     ? cfg.prune_threshold
                                     : default_prune_threshold(ctx.weather.feature_names.size());
            PruneResult info;
            weather_used = prune_weather(out.imp_weather, ctx.weather, thr_w, &info);
            if (info.passthrough)
                warnings.push_back(cell_tag + " " + wiring.name +
                                   ": empty importance report, weather pruning skipped");
        }
        bundle.weather_features = weather_used.feature_names;
    }
    auto [wtrain_used, wtest_used] = split_weather(
        needs_weather ? weather_used : ctx.weather, ctx.split);

    std::vector<double> pred_test_physical, pred_train_physical;

    if (wiring.use_recurrence) {
        CascadeConfig cc = cfg.cascade;
        cc.cell = wiring.cell;
        CascadeNet net = make_cascade(cc, static_cast<int>(used.feature_names.size()),
                                      substream(ctx.cell_seed, "cascade_init"));
        TrainingConfig tc = cfg.training;
        tc.seed = substream(ctx.cell_seed, "train_cascade");
        auto [fit_ds, val_ds] = carve_validation(train_used, tc.validation_fraction);
        train_recurrent(net, fit_ds, val_ds, tc);

        const Eigen::VectorXd train_scaled = predict(net, train_used);
        const Eigen::VectorXd test_scaled = predict(net, test_used);
        bundle.cascade = net;
        bundle.has_cascade = true;

        if (wiring.use_corrector) {
            TrainingConfig tcc = cfg.training;
            tcc.seed = substream(ctx.cell_seed, "train_corrector");
            const CorrectorModel corr =
                train_corrector(train_scaled, train_used.targets, wtrain_used, tcc, cfg.dense);
            const CorrectionResult test_fix =
                apply_correction(test_scaled, wtest_used, corr, used.scalers.pollutant);
            const CorrectionResult train_fix =
                apply_correction(train_scaled, wtrain_used, corr, used.scalers.pollutant);
            pred_test_physical = to_vector(test_fix.final_physical);
            pred_train_physical = to_vector(train_fix.final_physical);
            bundle.corrector = corr;
            bundle.has_corrector = true;
            if (corr.degenerate)
                warnings.push_back(cell_tag + " " + wiring.name +
                                   ": constant residuals, corrector is an identity");
        } else {
            pred_test_physical = to_physical(test_scaled, used.scalers.pollutant);
            pred_train_physical = to_physical(train_scaled, used.scalers.pollutant);
        }
    } else {
        // Dense model over the pruned temporal and weather features jointly.
        const Eigen::Index nt = used.inputs.cols();
        const Eigen::Index nw = weather_used.values.cols();
        Eigen::MatrixXd all(used.inputs.rows(), nt + nw);
        all << used.inputs, weather_used.values;
        std::vector<std::string> names = used.feature_names;
        names.insert(names.end(), weather_used.feature_names.begin(),
                     weather_used.feature_names.end());

        const auto tn = static_cast<Eigen::Index>(train_used.n_samples());
        Eigen::MatrixXd Xtrain = all.topRows(tn);
        Eigen::MatrixXd Xtest = all.bottomRows(all.rows() - tn);

        DenseNet net = make_dense_net(cfg.dense, static_cast<int>(all.cols()),
                                      substream(ctx.cell_seed, "dense_init"));
        TrainingConfig tc = cfg.training;
        tc.seed = substream(ctx.cell_seed, "train_dense");

        Eigen::Index fit_n = tn;
        if (tc.validation_fraction > 0.0 && tn >= 2) {
            const auto f = static_cast<Eigen::Index>(
                std::floor((1.0 - tc.validation_fraction) * static_cast<double>(tn)));
            if (f >= 1 && f < tn) fit_n = f;
        }
        train_dense(net, Xtrain.topRows(fit_n), train_used.targets.head(fit_n),
                    Xtrain.bottomRows(tn - fit_n), train_used.targets.tail(tn - fit_n), tc);

        pred_test_physical =
            to_physical(dense_forward_batch(net, Xtest), used.scalers.pollutant);
        pred_train_physical =
            to_physical(dense_forward_batch(net, Xtrain), used.scalers.pollutant);
        bundle.dense_main = net;
        bundle.has_dense_main = true;
        bundle.dense_main_features = names;
    }

    out.test_row = make_test_row(ctx, wiring.name, pred_test_physical);
    out.train_row = make_train_row(ctx, wiring.name, pred_train_physical);
    out.has_train_row = true;
    out.test_pred = shared_copy(pred_test_physical, ctx.shared_start);
    out.bundle = std::move(bundle);
    out.has_bundle = true;
    return out;
}

ModelOutput run_baseline(const CellContext& ctx, ModelKind kind, const ExperimentConfig& cfg) {
    ModelOutput out;
    out.name = model_kind_name(kind);
    std::vector<double> pred(ctx.test.n_samples(), 0.0);
    switch (kind) {
        case ModelKind::cmaq24_raw:
            pred = ctx.y_base_test;
            break;
        case ModelKind::persistence: {
            const std::vector<double> p =
                persistence_forecast(*ctx.table, ctx.pollutant, ctx.horizon);
            for (std::size_t i = 0; i < pred.size(); ++i)
                pred[i] = p[ctx.test.target_rows[i] - static_cast<std::size_t>(ctx.horizon)];
            break;
        }
        case ModelKind::analog_ensemble: {
            AnalogDatabase db =
                build_analog_database(*ctx.table, ctx.pollutant, ctx.train.target_rows);
            db.d1_weight = cfg.analog_d1_weight;
            db.d2_weight = cfg.analog_d2_weight;
            db.multiplicative = cfg.analog_multiplicative;
            for (std::size_t i = 0; i < pred.size(); ++i) {
                const auto triple =
                    forecast_triple(*ctx.table, ctx.pollutant, ctx.test.target_rows[i]);
                pred[i] = std::max(0.0, analog_adjust(db, triple));
            }
            break;
        }
        default:
            throw InternalConsistencyError("run_baseline: not a baseline kind");
    }
    out.test_row = make_test_row(ctx, out.name, pred);
    out.test_pred = shared_copy(pred, ctx.shared_start);
    return out;
}

std::vector<std::string> mode_models(const ExperimentConfig& cfg, RunMode mode) {
    switch (mode) {
        case RunMode::experiment:
            return {cfg.preset};
        case RunMode::comparison:
            return {"ptc",        "gru_xgb",     "lstm_dnn",       "dnn_xgb",
                    "cmaq24_raw", "persistence", "analog_ensemble"};
        case RunMode::sweep:
            return {cfg.preset, "cmaq24_raw", "persistence"};
    }
    return {};
}

bool is_baseline_name(const std::string& name, ModelKind& kind) {
    if (name == "cmaq24_raw") kind = ModelKind::cmaq24_raw;
    else if (name == "persistence") kind = ModelKind::persistence;
    else if (name == "analog_ensemble") kind = ModelKind::analog_ensemble;
    else return false;
    return true;
}

CellResult run_cell(const StationTable& table, const CellJob& job, const ExperimentConfig& cfg,
                    RunMode mode) {
    CellResult res;
    res.job = job;
    res.station = table.station_id;
    try {
        CellContext ctx = make_cell_context(table, job, cfg);
        for (const std::string& name : mode_models(cfg, mode)) {
            ModelKind kind;
            if (is_baseline_name(name, kind))
                res.models.push_back(run_baseline(ctx, kind, cfg));
            else
                res.models.push_back(
                    run_trainable(ctx, comparison_preset(name), cfg, res.warnings));
        }
        res.test_timestamps.assign(
            ctx.test.target_timestamps.begin() + static_cast<std::ptrdiff_t>(ctx.shared_start),
            ctx.test.target_timestamps.end());
        res.y_true = shared_copy(ctx.y_true_test, ctx.shared_start);
        res.y_base = shared_copy(ctx.y_base_test, ctx.shared_start);
        res.ok = true;
    } catch (const std::exception& e) {
        res.ok = false;
        res.error = e.what();
        res.models.clear();  // cell isolation: nothing partial escapes
    }
    return res;
}

// ------------------------------------------------------------ orchestration --

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '_' || c == '-';
        out += ok ? c : '_';
    }
    return out.empty() ? std::string("_") : out;
}

std::string cell_stem(const CellResult& res) {
    return sanitize(res.station) + "_" + sanitize(res.job.pollutant) + "_h" +
           std::to_string(res.job.horizon);
}

std::string cell_label(const CellResult& res) {
    return res.station + "/" + res.job.pollutant + "/h" + std::to_string(res.job.horizon);
}

std::vector<StationTable> load_tables(const ExperimentConfig& cfg,
                                      std::vector<std::string>& warnings) {
    std::vector<StationTable> tables;
    if (cfg.use_synthetic) {
        tables.push_back(generate_synthetic(cfg.synthetic.seed, cfg.synthetic.n_hours,
                                            cfg.synthetic.bias, cfg.synthetic.options));
    } else {
        tables = load_stations_csv(cfg.csv_path);
    }
    if (!cfg.stations.empty()) {
        std::vector<StationTable> picked;
        for (const std::string& name : cfg.stations) {
            const auto it = std::find_if(tables.begin(), tables.end(), [&](const StationTable& t) {
                return t.station_id == name;
            });
            if (it == tables.end())
                throw ConfigError("station \"" + name + "\" is not present in the input data");
            picked.push_back(std::move(*it));
            tables.erase(it);
        }
        tables = std::move(picked);
    }
    for (auto& t : tables) {
        ImputeStats stats;
        t = impute_missing(t, cfg.impute, &stats);
        if (stats.cells_filled > 0 || stats.leading_rows_dropped > 0)
            warnings.push_back("station " + t.station_id + ": filled " +
                               std::to_string(stats.cells_filled) + " absent cells, dropped " +
                               std::to_string(stats.leading_rows_dropped) + " leading rows");
    }
    return tables;
}

RunArtifacts run_all(const ExperimentConfig& cfg, RunMode mode) {
    std::vector<std::string> warnings = cfg.warnings;
    std::vector<StationTable> tables = load_tables(cfg, warnings);

    std::vector<CellJob> jobs;
    for (std::size_t ti = 0; ti < tables.size(); ++ti) {
        const std::size_t min_row =
            mode == RunMode::sweep
                ? shared_min_target_row(tables[ti].n_rows(), cfg.horizons, cfg.train_fraction)
                : 0;
        for (const std::string& p : cfg.pollutants)
            for (int h : cfg.horizons) jobs.push_back({ti, p, h, min_row});
    }

    std::vector<CellResult> results(jobs.size());
    const std::size_t workers =
        std::max<std::size_t>(1, std::min(max_cell_threads(), jobs.size()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i)
            results[i] = run_cell(tables[jobs[i].table_index], jobs[i], cfg, mode);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&]() {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= jobs.size()) return;
                    results[i] = run_cell(tables[jobs[i].table_index], jobs[i], cfg, mode);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    // All file output happens here, in job order, on one thread.
    RunArtifacts artifacts;
    artifacts.output_dir = cfg.output_dir;
    artifacts.total_cells = jobs.size();
    ReportDir rep(cfg.output_dir);
    rep.write_text("config.json", config_echo(cfg));

    std::vector<MetricsRow> test_rows, train_rows;
    for (const CellResult& res : results) {
        if (!res.ok) {
            ++artifacts.failed_cells;
            rep.add_failure(cell_label(res), res.error);
            continue;
        }
        for (const std::string& w : res.warnings) rep.add_warning(w);
        const std::string stem = cell_stem(res);
        std::vector<SeriesColumn> series;
        series.push_back({"observed", res.y_true});
        for (const ModelOutput& mo : res.models) {
            test_rows.push_back(mo.test_row);
            if (mo.has_train_row) train_rows.push_back(mo.train_row);
            if (mo.has_imp_temporal)
                rep.write_text("importance_" + stem + "_" + sanitize(mo.name) + "_temporal.csv",
                               importance_csv(mo.imp_temporal));
            if (mo.has_imp_weather)
                rep.write_text("importance_" + stem + "_" + sanitize(mo.name) + "_weather.csv",
                               importance_csv(mo.imp_weather));
            if (mo.has_bundle) {
                const std::string rel = "bundles/" + stem + "_" + sanitize(mo.name) + ".bundle";
                const std::filesystem::path path = rep.dir() / rel;
                std::filesystem::create_directories(path.parent_path());
                save_bundle(mo.bundle, path);
                rep.record(rel);
                artifacts.bundles.push_back(path);
            }
            series.push_back({mo.name, mo.test_pred});
        }
        if (mode != RunMode::sweep) {
            bool has_raw_column = false;
            for (const ModelOutput& mo : res.models)
                if (mo.name == "cmaq24_raw") has_raw_column = true;
            if (!has_raw_column) series.push_back({"cmaq24_raw", res.y_base});
            rep.write_text("series_" + stem + ".csv", series_csv(res.test_timestamps, series));
            rep.write_text("overlay_" + stem + ".svg",
                           overlay_svg(cell_label(res) + " test period", res.test_timestamps,
                                       series));
        }
    }

    if (test_rows.empty()) {
        rep.add_warning("no cell produced metrics; only the manifest was written");
    } else {
        artifacts.metrics_csv = rep.write_text("metrics.csv", metrics_csv(test_rows));
        if (!train_rows.empty()) rep.write_text("train_metrics.csv", metrics_csv(train_rows));
    }
    artifacts.rows = test_rows;

    // Metric-vs-horizon table and plots when several horizons are in play.
    if ((mode == RunMode::sweep || mode == RunMode::comparison) && cfg.horizons.size() >= 1 &&
        !test_rows.empty()) {
        std::vector<int> horder = cfg.horizons;
        std::sort(horder.begin(), horder.end());
        std::ostringstream hcsv;
        hcsv << "station,pollutant,model,horizon_h,mae\n";
        auto find_mae = [&](const std::string& st, const std::string& po,
                            const std::string& mo, int h, double& out_mae) {
            for (const MetricsRow& r : test_rows)
                if (r.station == st && r.pollutant == po && r.model == mo &&
                    r.horizon_hours == h) {
                    out_mae = r.metrics.mae;
                    return true;
                }
            return false;
        };
        for (const auto& table : tables) {
            for (const std::string& p : cfg.pollutants) {
                std::vector<HorizonSeries> lines;
                for (const std::string& m : mode_models(cfg, mode)) {
                    HorizonSeries hs;
                    hs.model = m;
                    for (int h : horder) {
                        double v = 0.0;
                        if (find_mae(table.station_id, p, m, h, v)) {
                            hs.horizons.push_back(h);
                            hs.values.push_back(v);
                            hcsv << sanitize(table.station_id) << ',' << p << ',' << m << ',' << h
                                 << ',' << format_double(v) << '\n';
                        }
                    }
                    if (!hs.horizons.empty()) lines.push_back(std::move(hs));
                }
                if (!lines.empty() && cfg.horizons.size() > 1) {
                    const std::string stem =
                        sanitize(table.station_id) + "_" + sanitize(p);
                    rep.write_text("horizon_mae_" + stem + ".svg",
                                   horizon_svg("MAE by horizon: " + table.station_id + " " + p,
                                               "MAE", lines));
                }
            }
        }
        rep.write_text("horizon_mae.csv", hcsv.str());
    }

    for (const std::string& w : warnings) rep.add_warning(w);
    artifacts.manifest = rep.write_manifest();
    return artifacts;
}

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& config) {
    return run_all(config, RunMode::experiment);
}

RunArtifacts run_comparison(const ExperimentConfig& config) {
    return run_all(config, RunMode::comparison);
}

RunArtifacts horizon_sweep(const ExperimentConfig& config) {
    return run_all(config, RunMode::sweep);
}

}  // namespace aircorrect
