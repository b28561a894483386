#include "aircorrect/baselines.hpp"

#include "aircorrect/errors.hpp"

namespace aircorrect {

std::pair<double, double> analog_distance(const std::array<double, 3>& train_triple,
                                          const std::array<double, 3>& now_triple) {
    double d1 = 0.0;
    for (int j = 0; j < 3; ++j) {
        const double diff = train_triple[static_cast<std::size_t>(j)] -
                            now_triple[static_cast<std::size_t>(j)];
        d1 += kAnalogD1Weights[j] * diff * diff;
    }
    double d2 = 0.0;
    for (int j = 0; j < 2; ++j) {
        const double t_step = train_triple[static_cast<std::size_t>(j)] -
                              train_triple[static_cast<std::size_t>(j) + 1];
        const double n_step = now_triple[static_cast<std::size_t>(j)] -
                              now_triple[static_cast<std::size_t>(j) + 1];
        const double diff = t_step - n_step;
        d2 += kAnalogD2Weights[j] * diff * diff;
    }
    return {d1, d2};
}

double analog_combined_distance(const AnalogDatabase& db, const std::array<double, 3>& train,
                                const std::array<double, 3>& now) {
    const auto [d1, d2] = analog_distance(train, now);
    return db.d1_weight * d1 + db.d2_weight * d2;
}

std::size_t analog_nearest(const AnalogDatabase& db, const std::array<double, 3>& now_triple) {
    if (db.entries.empty()) throw EmptyDatasetError("analog database is empty");
    std::size_t best = 0;
    double best_d = analog_combined_distance(db, db.entries[0].triple, now_triple);
    for (std::size_t i = 1; i < db.entries.size(); ++i) {
        const double d = analog_combined_distance(db, db.entries[i].triple, now_triple);
        if (d < best_d) {  // strict: ties keep the earliest entry
            best_d = d;
            best = i;
        }
    }
    return best;
}

double analog_adjust(const AnalogDatabase& db, const std::array<double, 3>& now_triple) {
    const AnalogEntry& e = db.entries[analog_nearest(db, now_triple)];
    if (db.multiplicative && e.triple[0] != 0.0)
        return now_triple[0] * (e.observed / e.triple[0]);
    return now_triple[0] + e.bias;
}

std::array<double, 3> forecast_triple(const StationTable& table, const std::string& pollutant,
                                      std::size_t row) {
    std::array<double, 3> triple{};
    for (int j = 0; j < 3; ++j)
        triple[static_cast<std::size_t>(j)] =
            table.column(forecast_column_name(kForecastHorizons[j], pollutant))[row];
    return triple;
}

AnalogDatabase build_analog_database(const StationTable& table, const std::string& pollutant,
                                     const std::vector<std::size_t>& rows) {
    AnalogDatabase db;
    db.entries.reserve(rows.size());
    const auto& obs = table.column(pollutant);
    for (std::size_t r : rows) {
        AnalogEntry e;
        e.triple = forecast_triple(table, pollutant, r);
        e.observed = obs[r];
        e.bias = e.observed - e.triple[0];
        e.timestamp = table.timestamps[r];
        db.entries.push_back(e);
    }
    if (db.entries.empty()) throw EmptyDatasetError("analog database is empty");
    return db;
}

std::vector<double> persistence_forecast(const StationTable& table, const std::string& pollutant,
                                         int horizon_hours) {
    if (horizon_hours < 1) throw ConfigError("persistence horizon must be >= 1");
    const auto& obs = table.column(pollutant);
    const std::size_t n = obs.size();
    std::vector<double> out;
    if (static_cast<std::size_t>(horizon_hours) >= n) return out;  // caller warns
    out.reserve(n - static_cast<std::size_t>(horizon_hours));
    for (std::size_t t = static_cast<std::size_t>(horizon_hours); t < n; ++t)
        out.push_back(obs[t - static_cast<std::size_t>(horizon_hours)]);
    return out;
}

std::string model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::ptc: return "ptc";
        case ModelKind::gru_xgb: return "gru_xgb";
        case ModelKind::lstm_dnn: return "lstm_dnn";
        case ModelKind::dnn_xgb: return "dnn_xgb";
        case ModelKind::cmaq24_raw: return "cmaq24_raw";
        case ModelKind::persistence: return "persistence";
        case ModelKind::analog_ensemble: return "analog_ensemble";
    }
    return "unknown";
}

const std::vector<std::string>& trainable_preset_names() {
    static const std::vector<std::string> names{"ptc", "gru_xgb", "lstm_dnn", "dnn_xgb"};
    return names;
}

PresetWiring comparison_preset(const std::string& name) {
    PresetWiring w;
    w.name = name;
    if (name == "ptc") {
        w.kind = ModelKind::ptc;
        w.cell = CellKind::lstm;
        w.use_recurrence = true;
        w.use_pruning = true;
        w.use_corrector = true;
    } else if (name == "gru_xgb") {
        w.kind = ModelKind::gru_xgb;
        w.cell = CellKind::gru;
        w.use_recurrence = true;
        w.use_pruning = true;
        w.use_corrector = false;
    } else if (name == "lstm_dnn") {
        w.kind = ModelKind::lstm_dnn;
        w.cell = CellKind::lstm;
        w.use_recurrence = true;
        w.use_pruning = false;
        w.use_corrector = true;
        w.corrector_raw_weather = true;
    } else if (name == "dnn_xgb") {
        w.kind = ModelKind::dnn_xgb;
        w.use_recurrence = false;
        w.use_pruning = true;
        w.use_corrector = false;
    } else {
        std::string valid;
        for (const auto& p : trainable_preset_names()) valid += (valid.empty() ? "" : ", ") + p;
        throw ConfigError("unknown preset \"" + name + "\"; valid presets: " + valid);
    }
    return w;
}

}  // namespace aircorrect
