#include "aircorrect/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "aircorrect/errors.hpp"
#include "aircorrect/rng.hpp"

namespace aircorrect {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

Rng column_rng(std::uint64_t seed, const std::string& column) {
    return Rng(splitmix64(seed ^ fnv1a64(column)));
}

// Stationary-start AR(1): s_0 ~ N(0, sigma_e^2/(1-phi^2)), s_t = phi*s_{t-1} + e_t.
std::vector<double> ar1(Rng& rng, std::size_t n, double phi, double sigma_e) {
    std::vector<double> s(n);
    const double sigma_s = sigma_e / std::sqrt(1.0 - phi * phi);
    s[0] = sigma_s * rng.normal();
    for (std::size_t t = 1; t < n; ++t) s[t] = phi * s[t - 1] + sigma_e * rng.normal();
    return s;
}

struct PollutantSpec {
    const char* name;
    double level;
    double diurnal_amp;  // kept well under 1.19 * stationary sd so persistence
                         // error still grows from 6 h to 72 h lags
    double sigma_e;
    double phase_hours;
};

// o3_8h is derived from o3_1h below rather than generated.
constexpr PollutantSpec kPollutantSpecs[] = {
    {"co", 1.2, 0.15, 0.06, 2.0},  {"so2", 18.0, 3.0, 1.5, 4.0},
    {"pm25", 60.0, 8.0, 4.0, 6.0}, {"no2", 35.0, 6.0, 2.5, 8.0},
    {"o3_1h", 70.0, 14.0, 5.0, 14.0},
};

}  // namespace

StationTable generate_synthetic(std::uint64_t seed, std::size_t n_hours, const BiasSpec& bias,
                                const SyntheticOptions& options) {
    if (n_hours < 200)
        throw ConfigError("generate_synthetic: n_hours must be >= 200, got " +
                          std::to_string(n_hours));

    StationTable t = make_empty_station_table(options.station_id, n_hours);
    for (std::size_t r = 0; r < n_hours; ++r)
        t.timestamps[r] = options.start_epoch + static_cast<std::int64_t>(r) * 3600;

    const double phi = 0.95;
    for (const PollutantSpec& spec : kPollutantSpecs) {
        Rng rng = column_rng(seed, std::string("truth_") + spec.name);
        const std::vector<double> s = ar1(rng, n_hours, phi, spec.sigma_e);
        auto& col = t.column(spec.name);
        for (std::size_t r = 0; r < n_hours; ++r) {
            const double hour = static_cast<double>(t.timestamps[r] / 3600 % 24);
            const double diurnal = options.diurnal_scale * spec.diurnal_amp *
                                   std::sin(kTwoPi * (hour + spec.phase_hours) / 24.0);
            col[r] = std::max(0.0, spec.level + s[r] + diurnal);
        }
    }

    {  // rolling 8-hour mean, partial windows at the series head
        const auto& o3 = t.column("o3_1h");
        auto& o38 = t.column("o3_8h");
        double acc = 0.0;
        for (std::size_t r = 0; r < n_hours; ++r) {
            acc += o3[r];
            if (r >= 8) acc -= o3[r - 8];
            o38[r] = acc / static_cast<double>(std::min<std::size_t>(r + 1, 8));
        }
    }

    for (const char* pollutant : kPollutantNames) {
        const auto& truth = t.column(pollutant);
        for (int h : kForecastHorizons) {
            const std::string name = forecast_column_name(h, pollutant);
            Rng rng = column_rng(seed, name);
            const double sd = bias.noise_sd * std::sqrt(static_cast<double>(h) / 24.0);
            auto& col = t.column(name);
            for (std::size_t r = 0; r < n_hours; ++r)
                col[r] = bias.scale * truth[r] + bias.offset + sd * rng.normal();
        }
    }

    {  // temperature pair: shared seasonal base, small independent jitters
        Rng rb = column_rng(seed, "met_t_base");
        Rng rj1 = column_rng(seed, "met_t_max");
        Rng rj2 = column_rng(seed, "met_t_min");
        const std::vector<double> base = ar1(rb, n_hours, 0.99, 0.4);
        const std::vector<double> j1 = ar1(rj1, n_hours, 0.9, 0.5);
        const std::vector<double> j2 = ar1(rj2, n_hours, 0.9, 0.5);
        auto& mx = t.column("max_t");
        auto& mn = t.column("min_t");
        for (std::size_t r = 0; r < n_hours; ++r) {
            const double seasonal =
                12.0 + 8.0 * std::sin(kTwoPi * static_cast<double>(r) / (24.0 * 365.25));
            mn[r] = seasonal + base[r] - 4.0 + j2[r];
            mx[r] = std::max(seasonal + base[r] + 4.0 + j1[r], mn[r] + 0.5);
        }
    }

    {  // humidity pair clamped into [1, 100]
        Rng rb = column_rng(seed, "met_h_base");
        Rng rj = column_rng(seed, "met_h_gap");
        const std::vector<double> base = ar1(rb, n_hours, 0.97, 1.2);
        const std::vector<double> gap = ar1(rj, n_hours, 0.9, 1.0);
        auto& mx = t.column("max_h");
        auto& mn = t.column("min_h");
        for (std::size_t r = 0; r < n_hours; ++r) {
            mx[r] = std::clamp(70.0 + base[r], 5.0, 100.0);
            mn[r] = std::clamp(mx[r] - 18.0 + gap[r], 1.0, mx[r] - 1.0);
        }
    }

    {  // wind pair, non-negative
        Rng rb = column_rng(seed, "met_w_base");
        Rng rj = column_rng(seed, "met_w_gap");
        const std::vector<double> base = ar1(rb, n_hours, 0.95, 0.3);
        const std::vector<double> gap = ar1(rj, n_hours, 0.9, 0.2);
        auto& mx = t.column("max_ws");
        auto& mn = t.column("min_ws");
        for (std::size_t r = 0; r < n_hours; ++r) {
            const double b = std::max(0.3, 2.5 + base[r]);
            mx[r] = b * 1.5 + std::abs(gap[r]);
            mn[r] = std::clamp(b * 0.6, 0.0, mx[r] - 0.05);
        }
    }

    {  // surface pressure, slow synoptic swings
        Rng rb = column_rng(seed, "met_ap");
        const std::vector<double> base = ar1(rb, n_hours, 0.995, 0.25);
        auto& ap = t.column("ap");
        for (std::size_t r = 0; r < n_hours; ++r) ap[r] = 1013.0 + base[r];
    }

    {  // rain: thresholded latent AR process, zero most hours, episodic bursts
        Rng rb = column_rng(seed, "met_rain");
        const std::vector<double> g = ar1(rb, n_hours, 0.95, 1.0);
        auto& rain = t.column("rain");
        for (std::size_t r = 0; r < n_hours; ++r) rain[r] = std::max(0.0, g[r] - 3.5) * 1.5;
    }

    return t;
}

}  // namespace aircorrect
