#include "aircorrect/corrector.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "aircorrect/errors.hpp"

namespace aircorrect {

namespace {

Eigen::MatrixXd relu(const Eigen::MatrixXd& m) { return m.cwiseMax(0.0); }

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& m) {
    return (1.0 / (1.0 + (-m.array()).exp())).matrix();
}

bool dropped_layer(const DenseNet& net, std::size_t layer) {
    return net.config.dropout_rate > 0.0 &&
           layer < static_cast<std::size_t>(net.config.dropout_layers);
}

// Forward pass keeping pre-activations and post-dropout activations when a
// cache is requested. Activations are columns (features x batch).
struct DenseWork {
    std::vector<Eigen::MatrixXd> z;  // pre-activation per layer
    std::vector<Eigen::MatrixXd> a;  // post-activation (and dropout) per layer; a[0] = input
    Eigen::MatrixXd out;             // 1 x B sigmoid output
};

void dense_forward_impl(const DenseNet& net, const Eigen::MatrixXd& rows,
                        const DenseDropoutMasks* masks, bool want_cache, DenseWork& w) {
    if (rows.cols() != net.input_width)
        throw DimensionError("dense net: expected " + std::to_string(net.input_width) +
                             " features, got " + std::to_string(rows.cols()));
    const bool drop = masks && !masks->layers.empty();
    const std::size_t L = net.layer_count();
    if (want_cache) {
        w.z.resize(L);
        w.a.resize(L + 1);
    }
    Eigen::MatrixXd act = rows.transpose();  // features x B
    if (want_cache) w.a[0] = act;
    for (std::size_t l = 0; l < L; ++l) {
        Eigen::MatrixXd z = net.W[l] * act;
        z.colwise() += net.b[l].col(0);
        if (l + 1 == L) {
            w.out = sigmoid(z);
            if (want_cache) w.z[l] = std::move(z);
            break;
        }
        act = relu(z);
        if (drop && dropped_layer(net, l)) act = act.cwiseProduct(masks->layers[l]);
        if (want_cache) {
            w.z[l] = std::move(z);
            w.a[l + 1] = act;
        }
    }
}

}  // namespace

ParamViews DenseNet::param_views() {
    ParamViews v;
    for (std::size_t l = 0; l < W.size(); ++l) {
        v.push_back(&W[l]);
        v.push_back(&b[l]);
    }
    return v;
}

std::vector<const Eigen::MatrixXd*> DenseNet::param_views() const {
    auto views = const_cast<DenseNet*>(this)->param_views();
    return {views.begin(), views.end()};
}

DenseNet make_dense_net(const DenseNetConfig& config, int input_width, std::uint64_t seed) {
    if (input_width < 1) throw ConfigError("dense net needs at least one input feature");
    if (config.hidden.empty()) throw ConfigError("dense net needs at least one hidden layer");
    for (int h : config.hidden)
        if (h < 1) throw ConfigError("dense hidden widths must be >= 1");
    if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0))
        throw ConfigError("dropout rate must lie in [0,1)");

    DenseNet net;
    net.config = config;
    net.input_width = input_width;
    Rng rng(splitmix64(seed ^ fnv1a64("make_dense_net")));
    int in = input_width;
    auto add_layer = [&](int out) {
        Eigen::MatrixXd w(out, in);
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c)
                w(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
        net.W.push_back(std::move(w));
        net.b.push_back(Eigen::MatrixXd::Zero(out, 1));
        in = out;
    };
    for (int h : config.hidden) add_layer(h);
    add_layer(1);
    return net;
}

DenseDropoutMasks draw_dense_masks(const DenseNet& net, Eigen::Index batch, Rng& rng) {
    DenseDropoutMasks masks;
    if (net.config.dropout_rate <= 0.0) return masks;
    const double keep = 1.0 - net.config.dropout_rate;
    const double inv = 1.0 / keep;
    const auto n_dropped = std::min<std::size_t>(
        static_cast<std::size_t>(net.config.dropout_layers), net.config.hidden.size());
    for (std::size_t l = 0; l < n_dropped; ++l) {
        Eigen::MatrixXd m(net.config.hidden[l], batch);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                m(r, c) = rng.uniform() < keep ? inv : 0.0;
        masks.layers.push_back(std::move(m));
    }
    return masks;
}

double dense_forward(const DenseNet& net, const Eigen::VectorXd& features) {
    DenseWork w;
    Eigen::MatrixXd row = features.transpose();
    dense_forward_impl(net, row, nullptr, false, w);
    return w.out(0, 0);
}

Eigen::VectorXd dense_forward_batch(const DenseNet& net, const Eigen::MatrixXd& rows,
                                    const DenseDropoutMasks* masks) {
    if (rows.rows() == 0) return Eigen::VectorXd();
    DenseWork w;
    dense_forward_impl(net, rows, masks, false, w);
    return w.out.transpose();
}

DenseGradientResult dense_gradients(const DenseNet& net, const Eigen::MatrixXd& rows,
                                    const Eigen::VectorXd& targets,
                                    const DenseDropoutMasks* masks) {
    if (rows.rows() == 0) throw EmptyDatasetError("dense_gradients: empty batch");
    if (rows.rows() != targets.size())
        throw DimensionError("dense_gradients: sample/target count mismatch");
    const Eigen::Index B = rows.rows();
    const bool drop = masks && !masks->layers.empty();

    DenseWork w;
    dense_forward_impl(net, rows, masks, true, w);

    auto const_views = net.param_views();
    ParamViews views;
    for (const auto* p : const_views) views.push_back(const_cast<Eigen::MatrixXd*>(p));

    DenseGradientResult res;
    res.grads = make_gradients_like(views);
    res.predictions = w.out.transpose();
    const Eigen::VectorXd err = res.predictions - targets;
    res.loss = err.squaredNorm() / static_cast<double>(B);
    if (!std::isfinite(res.loss)) throw DivergenceError("dense_gradients: non-finite loss");

    const std::size_t L = net.layer_count();
    // Output layer: d(loss)/d(pre) via the sigmoid derivative.
    Eigen::MatrixXd dz = (2.0 / static_cast<double>(B)) * err.transpose();  // 1 x B
    dz = dz.cwiseProduct(w.out)
             .cwiseProduct((1.0 - w.out.array()).matrix());
    for (std::size_t li = L; li-- > 0;) {
        res.grads[2 * li].noalias() += dz * w.a[li].transpose();
        res.grads[2 * li + 1] += dz.rowwise().sum();
        if (li == 0) break;
        Eigen::MatrixXd da = net.W[li].transpose() * dz;
        if (drop && dropped_layer(net, li - 1))
            da = da.cwiseProduct(masks->layers[li - 1]);
        // ReLU gate from the stored pre-activation.
        dz = da.cwiseProduct(
            (w.z[li - 1].array() > 0.0).cast<double>().matrix());
    }
    return res;
}

DenseTrainHistory train_dense(DenseNet& net, const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& targets, const Eigen::MatrixXd& val_X,
                              const Eigen::VectorXd& val_targets, const TrainingConfig& config) {
    const std::size_t n = static_cast<std::size_t>(X.rows());
    if (n == 0) throw EmptyDatasetError("train_dense: empty training set");
    if (config.batch_size < 1) throw ConfigError("batch_size must be >= 1");

    ParamViews views = net.param_views();
    AdamState adam = make_adam_state(views);
    Rng rng(splitmix64(config.seed ^ fnv1a64("train_dense")));

    const bool has_val = val_X.rows() > 0;
    DenseTrainHistory hist;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Eigen::MatrixXd> best;
    for (const auto* p : std::as_const(net).param_views()) best.push_back(*p);
    std::size_t streak = 0;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t bs = std::min(config.batch_size, n - start);
            Eigen::MatrixXd xb(static_cast<Eigen::Index>(bs), X.cols());
            Eigen::VectorXd yb(static_cast<Eigen::Index>(bs));
            for (std::size_t r = 0; r < bs; ++r) {
                xb.row(static_cast<Eigen::Index>(r)) =
                    X.row(static_cast<Eigen::Index>(order[start + r]));
                yb(static_cast<Eigen::Index>(r)) =
                    targets(static_cast<Eigen::Index>(order[start + r]));
            }
            DenseDropoutMasks masks =
                draw_dense_masks(net, static_cast<Eigen::Index>(bs), rng);
            DenseGradientResult res = dense_gradients(net, xb, yb, &masks);
            clip_global_norm(res.grads, config.clip_norm);
            adam_update(views, res.grads, adam, config);
            loss_sum += res.loss * static_cast<double>(bs);
        }
        const double train_loss = loss_sum / static_cast<double>(n);
        if (!std::isfinite(train_loss))
            throw DivergenceError("dense training diverged at epoch " + std::to_string(epoch));
        hist.train_loss.push_back(train_loss);

        if (has_val) {
            const Eigen::VectorXd vp = dense_forward_batch(net, val_X);
            const double vloss =
                (vp - val_targets).squaredNorm() / static_cast<double>(vp.size());
            hist.val_loss.push_back(vloss);
            if (vloss < best_val) {
                best_val = vloss;
                best.clear();
                for (const auto* p : std::as_const(net).param_views()) best.push_back(*p);
                hist.best_epoch = epoch;
                streak = 0;
            } else {
                ++streak;
                if (streak >= config.patience) break;
            }
        } else {
            hist.val_loss.push_back(std::numeric_limits<double>::quiet_NaN());
        }
    }
    if (has_val)
        for (std::size_t i = 0; i < views.size(); ++i) *views[i] = best[i];
    else
        hist.best_epoch = hist.train_loss.empty() ? 0 : hist.train_loss.size() - 1;
    return hist;
}

CorrectorModel train_corrector(const Eigen::VectorXd& recurrent_predictions,
                               const Eigen::VectorXd& observed_targets,
                               const WeatherMatrix& weather, const TrainingConfig& config,
                               const DenseNetConfig& net_config) {
    const Eigen::Index n = recurrent_predictions.size();
    if (observed_targets.size() != n || weather.values.rows() != n)
        throw DimensionError("train_corrector: predictions, targets, and weather rows must align");
    if (n == 0) throw EmptyDatasetError("train_corrector: no samples");

    CorrectorModel model;
    model.feature_names = weather.feature_names;

    const Eigen::VectorXd residuals = observed_targets - recurrent_predictions;
    try {
        model.residual_scaler =
            fit_minmax(std::span<const double>(residuals.data(),
                                               static_cast<std::size_t>(residuals.size())));
    } catch (const DegenerateFeatureError&) {
        model.degenerate = true;  // perfect or uniformly shifted predictions
        return model;
    }

    Eigen::VectorXd targets01(n);
    for (Eigen::Index i = 0; i < n; ++i)
        targets01(i) = transform(residuals(i), model.residual_scaler);

    // Chronological tail as the validation fold.
    const auto val_n = static_cast<Eigen::Index>(
        std::floor(config.validation_fraction * static_cast<double>(n)));
    const Eigen::Index fit_n = n - val_n;
    if (fit_n < 1) throw ConfigError("validation_fraction leaves no training samples");

    model.net = make_dense_net(net_config, static_cast<int>(weather.values.cols()), config.seed);
    train_dense(model.net, weather.values.topRows(fit_n), targets01.head(fit_n),
                weather.values.bottomRows(val_n), targets01.tail(val_n), config);
    return model;
}

CorrectionResult apply_correction(const Eigen::VectorXd& recurrent_predictions,
                                  const WeatherMatrix& weather, const CorrectorModel& model,
                                  const ScalerParams& target_scaler) {
    const Eigen::Index n = recurrent_predictions.size();
    CorrectionResult res;
    res.final_scaled = recurrent_predictions;
    if (!model.degenerate) {
        if (weather.values.rows() != n)
            throw DimensionError("apply_correction: weather rows must align with predictions");
        const Eigen::VectorXd out01 = dense_forward_batch(model.net, weather.values);
        for (Eigen::Index i = 0; i < n; ++i)
            res.final_scaled(i) += inverse_transform(out01(i), model.residual_scaler);
    }
    res.final_physical.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double v = inverse_transform(res.final_scaled(i), target_scaler);
        if (v < 0.0) {
            v = 0.0;
            ++res.clamped;
        }
        res.final_physical(i) = v;
    }
    return res;
}

}  // namespace aircorrect
