#include "aircorrect/scaler.hpp"

#include <cmath>
#include <limits>

#include "aircorrect/errors.hpp"

namespace aircorrect {

ScalerParams fit_minmax(std::span<const double> values) {
    if (values.empty()) throw EmptyDatasetError("fit_minmax: empty sequence");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : values) {
        if (!std::isfinite(v)) throw ParseError("fit_minmax: non-finite value");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (lo == hi) throw DegenerateFeatureError("fit_minmax: constant sequence (min == max)");
    return {lo, hi};
}

double transform(double x, const ScalerParams& p) {
    return (x - p.min) / (p.max - p.min);
}

double inverse_transform(double scaled, const ScalerParams& p) {
    return scaled * (p.max - p.min) + p.min;
}

std::vector<double> transform(std::span<const double> values, const ScalerParams& p) {
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(transform(v, p));
    return out;
}

std::vector<double> inverse_transform(std::span<const double> scaled, const ScalerParams& p) {
    std::vector<double> out;
    out.reserve(scaled.size());
    for (double v : scaled) out.push_back(inverse_transform(v, p));
    return out;
}

}  // namespace aircorrect
