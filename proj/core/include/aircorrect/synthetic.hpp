#pragma once

// Deterministic synthetic station generator. Pollutant truth is a positive
// AR(1) process plus a diurnal sinusoid; forecast columns are affine-biased,
// noise-injected copies of truth; meteorology is a set of smooth correlated
// processes. Identical (seed, n_hours, bias, options) always produces a
// bit-identical table.

#include <cstdint>

#include "aircorrect/station.hpp"

namespace aircorrect {

struct BiasSpec {
    double offset = 0.0;
    double scale = 1.0;
    double noise_sd = 0.0;  // at 24 h lead; grows as sqrt(h/24) with lead h
};

struct SyntheticOptions {
    std::string station_id = "synthetic";
    std::int64_t start_epoch = 1451606400;  // 2016-01-01T00:00:00Z
    double diurnal_scale = 1.0;             // 0 yields pure AR(1) pollutants
};

/// n_hours must be >= 200 (ConfigError otherwise).
StationTable generate_synthetic(std::uint64_t seed, std::size_t n_hours, const BiasSpec& bias,
                                const SyntheticOptions& options = {});

}  // namespace aircorrect
