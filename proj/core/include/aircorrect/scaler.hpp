#pragma once

// Min-max scaling. Fits on the training portion only; test-set values may map
// outside [0,1] and callers must tolerate that.

#include <span>
#include <vector>

namespace aircorrect {

struct ScalerParams {
    double min = 0.0;
    double max = 1.0;
};

/// Scans the sequence for its extrema. Throws EmptyDatasetError on an empty
/// sequence, ParseError on non-finite values, DegenerateFeatureError when the
/// sequence is constant (min == max).
ScalerParams fit_minmax(std::span<const double> values);

double transform(double x, const ScalerParams& p);
double inverse_transform(double scaled, const ScalerParams& p);

std::vector<double> transform(std::span<const double> values, const ScalerParams& p);
std::vector<double> inverse_transform(std::span<const double> scaled, const ScalerParams& p);

}  // namespace aircorrect
