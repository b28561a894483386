#pragma once

// Reference predictors: raw 24 h forecast pass-through, persistence, and the
// analog-ensemble adjustment, plus the wiring presets for the comparison
// models.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "aircorrect/recurrent.hpp"
#include "aircorrect/station.hpp"

namespace aircorrect {

// Fixed distance weights for the analog triples (24/48/72 h) and the
// difference terms (24-48, 48-72).
inline constexpr double kAnalogD1Weights[3] = {1.0, 0.8, 0.6};
inline constexpr double kAnalogD2Weights[2] = {0.3, 0.2};

struct AnalogEntry {
    std::array<double, 3> triple;  // forecasts valid at this time, 24/48/72 h leads
    double observed = 0.0;
    double bias = 0.0;  // observed - triple[0]
    std::int64_t timestamp = 0;
};

struct AnalogDatabase {
    std::vector<AnalogEntry> entries;  // chronological
    double d1_weight = 1.0;            // combination d = w1*d1 + w2*d2
    double d2_weight = 1.0;
    bool multiplicative = false;  // additive bias transfer by default
};

/// d1 weighs squared level differences, d2 squared inter-lead differences.
std::pair<double, double> analog_distance(const std::array<double, 3>& train_triple,
                                          const std::array<double, 3>& now_triple);

/// Combined distance under the database's weights.
double analog_combined_distance(const AnalogDatabase& db, const std::array<double, 3>& train,
                                const std::array<double, 3>& now);

/// Index of the minimizing entry; ties resolve to the earliest.
std::size_t analog_nearest(const AnalogDatabase& db, const std::array<double, 3>& now_triple);

/// now_24h adjusted by the most similar historical point's bias.
double analog_adjust(const AnalogDatabase& db, const std::array<double, 3>& now_triple);

/// Entries at the given source-table rows, physical units.
AnalogDatabase build_analog_database(const StationTable& table, const std::string& pollutant,
                                     const std::vector<std::size_t>& rows);

std::array<double, 3> forecast_triple(const StationTable& table, const std::string& pollutant,
                                      std::size_t row);

/// prediction at t = observation at t - horizon, for t in [horizon, n).
/// A horizon at or beyond the series length yields an empty vector.
std::vector<double> persistence_forecast(const StationTable& table, const std::string& pollutant,
                                         int horizon_hours);

// Model identifiers used in the metrics report.
enum class ModelKind {
    ptc,
    gru_xgb,
    lstm_dnn,
    dnn_xgb,
    cmaq24_raw,
    persistence,
    analog_ensemble,
};

std::string model_kind_name(ModelKind kind);

struct PresetWiring {
    std::string name;
    ModelKind kind = ModelKind::ptc;
    CellKind cell = CellKind::lstm;
    bool use_recurrence = true;
    bool use_pruning = true;
    bool use_corrector = true;
    bool corrector_raw_weather = false;  // corrector consumes unpruned weather
};

/// Wiring for one of {ptc, gru_xgb, lstm_dnn, dnn_xgb}. Unknown names raise a
/// ConfigError listing the valid presets.
PresetWiring comparison_preset(const std::string& name);

const std::vector<std::string>& trainable_preset_names();

}  // namespace aircorrect
