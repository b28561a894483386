#include "aircorrect/evaluation.hpp"

#include <cmath>

#include "aircorrect/errors.hpp"

namespace aircorrect {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size())
        throw DimensionError(std::string(what) + ": length mismatch (" +
                             std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    if (a.empty()) throw EmptyDatasetError(std::string(what) + ": empty vectors");
}

}  // namespace

double mae(std::span<const double> y, std::span<const double> y_hat) {
    check_pair(y, y_hat, "mae");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += std::abs(y[i] - y_hat[i]);
    return acc / static_cast<double>(y.size());
}

double mean_signed_error(std::span<const double> y, std::span<const double> y_hat) {
    check_pair(y, y_hat, "mean_signed_error");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] - y_hat[i];
    return acc / static_cast<double>(y.size());
}

double rmse(std::span<const double> y, std::span<const double> y_hat) {
    check_pair(y, y_hat, "rmse");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - y_hat[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(y.size()));
}

double r_squared(std::span<const double> y, std::span<const double> y_hat) {
    check_pair(y, y_hat, "r_squared");
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = y[i] - y_hat[i];
        const double d = y[i] - mean;
        ss_res += r * r;
        ss_tot += d * d;
    }
    if (ss_tot == 0.0) throw UndefinedVarianceError("r_squared: constant y has no variance");
    return 1.0 - ss_res / ss_tot;
}

double euclidean_loss(std::span<const double> predictions, std::span<const double> truth) {
    check_pair(predictions, truth, "euclidean_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = predictions[i] - truth[i];
        acc += d * d;
    }
    return acc / static_cast<double>(truth.size());
}

double accuracy_improvement(double eps_base, double eps_model) {
    if (!(eps_base > 0.0))
        throw UndefinedBaselineError("accuracy_improvement: eps_base must be positive, got " +
                                     std::to_string(eps_base));
    return (eps_base - eps_model) / eps_base * 100.0;
}

MetricsReport evaluate_model(std::span<const double> y_true, std::span<const double> y_model,
                             std::span<const double> y_baseline) {
    check_pair(y_true, y_model, "evaluate_model");
    check_pair(y_true, y_baseline, "evaluate_model baseline");
    MetricsReport r;
    r.n = y_true.size();
    r.mae = mae(y_true, y_model);
    r.rmse = rmse(y_true, y_model);
    r.bias = mean_signed_error(y_true, y_model);
    r.r2 = r_squared(y_true, y_model);
    r.eps_base = euclidean_loss(y_baseline, y_true);
    r.eps_model = euclidean_loss(y_model, y_true);
    r.acc_improve_pct = accuracy_improvement(r.eps_base, r.eps_model);
    double mean = 0.0;
    for (double v : y_true) mean += v;
    r.y_mean = mean / static_cast<double>(y_true.size());
    return r;
}

}  // namespace aircorrect
