#include "aircorrect/optimizer.hpp"

#include <cmath>

#include "aircorrect/errors.hpp"

namespace aircorrect {

GradientList make_gradients_like(const ParamViews& params) {
    GradientList g;
    g.reserve(params.size());
    for (const Eigen::MatrixXd* p : params) g.emplace_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    return g;
}

AdamState make_adam_state(const ParamViews& params) {
    AdamState s;
    s.m = make_gradients_like(params);
    s.v = make_gradients_like(params);
    return s;
}

void adam_update(const ParamViews& params, const GradientList& grads, AdamState& state,
                 const TrainingConfig& config) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw DimensionError("adam_update: parameter/gradient/state count mismatch");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Eigen::MatrixXd& p = *params[i];
        const Eigen::MatrixXd& g = grads[i];
        if (p.rows() != g.rows() || p.cols() != g.cols())
            throw DimensionError("adam_update: gradient shape mismatch at index " +
                                 std::to_string(i));
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g.cwiseProduct(g);
        const Eigen::MatrixXd m_hat = state.m[i] / bc1;
        const Eigen::MatrixXd v_hat = state.v[i] / bc2;
        p.array() -= config.learning_rate * m_hat.array() /
                     (v_hat.array().sqrt() + config.epsilon);
    }
}

double global_norm(const GradientList& grads) {
    double sq = 0.0;
    for (const auto& g : grads) sq += g.squaredNorm();
    return std::sqrt(sq);
}

double clip_global_norm(GradientList& grads, double max_norm) {
    const double norm = global_norm(grads);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& g : grads) g *= s;
    }
    return norm;
}

}  // namespace aircorrect
