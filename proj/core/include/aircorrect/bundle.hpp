#pragma once

// Model persistence. A bundle is a single binary file: an outer magic line,
// a JSON table of contents naming the sections, then length-prefixed binary
// sections (one per model part). All numeric payloads are raw little-endian
// doubles, so load(save(m)) reproduces predictions bit-exactly.

#include <filesystem>
#include <string>

#include "aircorrect/boosting.hpp"
#include "aircorrect/corrector.hpp"
#include "aircorrect/recurrent.hpp"

namespace aircorrect {

inline constexpr const char* kBundleMagic = "AIRCORRECT-BUNDLE-v1\n";
inline constexpr const char* kRnnMagic = "AIRCORRECT-RNN-v1\n";
inline constexpr const char* kGbtMagic = "AIRCORRECT-GBT-v1\n";
inline constexpr const char* kDnnMagic = "AIRCORRECT-DNN-v1\n";
inline constexpr const char* kMetaMagic = "AIRCORRECT-META-v1\n";

struct ModelBundle {
    std::string station;
    std::string pollutant;
    std::string preset;
    int horizon_hours = 0;
    std::uint64_t seed = 0;
    ScalerParams target_scaler;
    std::vector<std::string> weather_features;

    bool has_cascade = false;
    CascadeNet cascade;
    bool has_gbt_temporal = false;
    GBTModel gbt_temporal;
    bool has_gbt_weather = false;
    GBTModel gbt_weather;
    bool has_dense_main = false;  // the no-recurrence comparison model
    DenseNet dense_main;
    std::vector<std::string> dense_main_features;
    bool has_corrector = false;
    CorrectorModel corrector;
};

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);

/// Throws FormatError on a corrupted or foreign file and
/// UnsupportedVersionError on a bundle version this build cannot read.
ModelBundle load_bundle(const std::filesystem::path& path);

/// Human-readable table of contents (section names, kinds, byte sizes).
std::string describe_bundle(const std::filesystem::path& path);

}  // namespace aircorrect
