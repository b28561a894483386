#pragma once

// Error metrics and the improvement-vs-baseline comparison. All functions are
// pure; vectors must be equal-length and non-empty.

#include <span>
#include <string>

namespace aircorrect {

double mae(std::span<const double> y, std::span<const double> y_hat);

/// Mean signed error (y - y_hat), reported as a bias diagnostic alongside MAE.
double mean_signed_error(std::span<const double> y, std::span<const double> y_hat);

double rmse(std::span<const double> y, std::span<const double> y_hat);

/// 1 - SSres/SStot. Throws UndefinedVarianceError when y is constant.
double r_squared(std::span<const double> y, std::span<const double> y_hat);

/// Mean squared deviation between the two vectors.
double euclidean_loss(std::span<const double> predictions, std::span<const double> truth);

/// (eps_base - eps_model)/eps_base * 100. Throws UndefinedBaselineError unless
/// eps_base > 0.
double accuracy_improvement(double eps_base, double eps_model);

struct MetricsReport {
    double mae = 0.0;
    double rmse = 0.0;
    double r2 = 0.0;
    double bias = 0.0;  // mean signed error
    double eps_base = 0.0;
    double eps_model = 0.0;
    double acc_improve_pct = 0.0;
    double y_mean = 0.0;
    std::size_t n = 0;
};

/// Evaluates a model against truth with the raw 24 h forecast as baseline.
MetricsReport evaluate_model(std::span<const double> y_true, std::span<const double> y_model,
                             std::span<const double> y_baseline);

}  // namespace aircorrect
