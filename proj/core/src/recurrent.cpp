#include "aircorrect/recurrent.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "aircorrect/errors.hpp"

namespace aircorrect {

namespace {

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& m) {
    return (1.0 / (1.0 + (-m.array()).exp())).matrix();
}

Eigen::MatrixXd tanh_m(const Eigen::MatrixXd& m) {
    return m.array().tanh().matrix();
}

void glorot_fill(Eigen::MatrixXd& m, double fan_in, double fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
}

void init_lstm(LstmCellParams& p, Eigen::Index hidden, Eigen::Index input, Rng& rng) {
    const auto cols = hidden + input;
    for (Eigen::MatrixXd* w : {&p.W_f, &p.W_i, &p.W_C, &p.W_o}) {
        w->resize(hidden, cols);
        glorot_fill(*w, static_cast<double>(cols), static_cast<double>(hidden), rng);
    }
    for (Eigen::MatrixXd* b : {&p.b_f, &p.b_i, &p.b_C, &p.b_o})
        *b = Eigen::MatrixXd::Zero(hidden, 1);
    p.b_f.setOnes();  // start remembering; standard forget-gate initialization
}

void init_gru(GruCellParams& p, Eigen::Index hidden, Eigen::Index input, Rng& rng) {
    const auto cols = hidden + input;
    for (Eigen::MatrixXd* w : {&p.W_z, &p.W_r, &p.W_h}) {
        w->resize(hidden, cols);
        glorot_fill(*w, static_cast<double>(cols), static_cast<double>(hidden), rng);
    }
    for (Eigen::MatrixXd* b : {&p.b_z, &p.b_r, &p.b_h})
        *b = Eigen::MatrixXd::Zero(hidden, 1);
}

// Per-step activation caches for backprop. Index t covers the full sequence.
struct LstmCache {
    std::vector<Eigen::MatrixXd> z;  // (H+I) x B, [h_prev; x]
    std::vector<Eigen::MatrixXd> f, i, ct, o, c, tc;
};

struct GruCache {
    std::vector<Eigen::MatrixXd> z1;  // (H+I) x B, [h_prev; x]
    std::vector<Eigen::MatrixXd> z2;  // (H+I) x B, [r*h_prev; x]
    std::vector<Eigen::MatrixXd> zg, rg, htl;
};

// Runs the layer over the sequence; returns the final hidden state and
// optionally the per-step hidden sequence and/or the cache.
Eigen::MatrixXd lstm_layer_forward(const LstmCellParams& p,
                                   const std::vector<Eigen::MatrixXd>& xs,
                                   std::vector<Eigen::MatrixXd>* h_seq, LstmCache* cache) {
    const Eigen::Index H = p.hidden_size();
    const Eigen::Index I = p.input_size();
    const Eigen::Index B = xs.empty() ? 0 : xs[0].cols();
    const std::size_t T = xs.size();
    if (cache) {
        cache->z.resize(T);
        cache->f.resize(T);
        cache->i.resize(T);
        cache->ct.resize(T);
        cache->o.resize(T);
        cache->c.resize(T);
        cache->tc.resize(T);
    }
    if (h_seq) h_seq->resize(T);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd z(H + I, B), pre(H, B);
    for (std::size_t t = 0; t < T; ++t) {
        z.topRows(H) = h;
        z.bottomRows(I) = xs[t];
        pre.noalias() = p.W_f * z;
        pre.colwise() += p.b_f.col(0);
        Eigen::MatrixXd f = sigmoid(pre);
        pre.noalias() = p.W_i * z;
        pre.colwise() += p.b_i.col(0);
        Eigen::MatrixXd i = sigmoid(pre);
        pre.noalias() = p.W_C * z;
        pre.colwise() += p.b_C.col(0);
        Eigen::MatrixXd ct = tanh_m(pre);
        pre.noalias() = p.W_o * z;
        pre.colwise() += p.b_o.col(0);
        Eigen::MatrixXd o = sigmoid(pre);
        c = f.cwiseProduct(c) + i.cwiseProduct(ct);
        Eigen::MatrixXd tc = tanh_m(c);
        h = o.cwiseProduct(tc);
        if (h_seq) (*h_seq)[t] = h;
        if (cache) {
            cache->z[t] = z;
            cache->f[t] = std::move(f);
            cache->i[t] = std::move(i);
            cache->ct[t] = std::move(ct);
            cache->o[t] = std::move(o);
            cache->c[t] = c;
            cache->tc[t] = std::move(tc);
        }
    }
    return h;
}

Eigen::MatrixXd gru_layer_forward(const GruCellParams& p, const std::vector<Eigen::MatrixXd>& xs,
                                  std::vector<Eigen::MatrixXd>* h_seq, GruCache* cache) {
    const Eigen::Index H = p.hidden_size();
    const Eigen::Index I = p.input_size();
    const Eigen::Index B = xs.empty() ? 0 : xs[0].cols();
    const std::size_t T = xs.size();
    if (cache) {
        cache->z1.resize(T);
        cache->z2.resize(T);
        cache->zg.resize(T);
        cache->rg.resize(T);
        cache->htl.resize(T);
    }
    if (h_seq) h_seq->resize(T);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd z1(H + I, B), z2(H + I, B), pre(H, B);
    for (std::size_t t = 0; t < T; ++t) {
        z1.topRows(H) = h;
        z1.bottomRows(I) = xs[t];
        pre.noalias() = p.W_z * z1;
        pre.colwise() += p.b_z.col(0);
        Eigen::MatrixXd zg = sigmoid(pre);
        pre.noalias() = p.W_r * z1;
        pre.colwise() += p.b_r.col(0);
        Eigen::MatrixXd rg = sigmoid(pre);
        z2.topRows(H) = rg.cwiseProduct(h);
        z2.bottomRows(I) = xs[t];
        pre.noalias() = p.W_h * z2;
        pre.colwise() += p.b_h.col(0);
        Eigen::MatrixXd htl = tanh_m(pre);
        h = zg.cwiseProduct(h) + (1.0 - zg.array()).matrix().cwiseProduct(htl);
        if (h_seq) (*h_seq)[t] = h;
        if (cache) {
            cache->z1[t] = z1;
            cache->z2[t] = z2;
            cache->zg[t] = std::move(zg);
            cache->rg[t] = std::move(rg);
            cache->htl[t] = std::move(htl);
        }
    }
    return h;
}

struct LstmGradRefs {
    Eigen::MatrixXd *W_f, *W_i, *W_C, *W_o, *b_f, *b_i, *b_C, *b_o;
};

struct GruGradRefs {
    Eigen::MatrixXd *W_z, *W_r, *W_h, *b_z, *b_r, *b_h;
};

// Reverse pass. dh_final is the gradient on the last hidden state (may be
// empty); ext_dh holds per-step gradients on h_t (may be null). dxs, when
// non-null, receives gradients w.r.t. each step input.
void lstm_layer_backward(const LstmCellParams& p, const LstmCache& cache,
                         const Eigen::MatrixXd& dh_final,
                         const std::vector<Eigen::MatrixXd>* ext_dh, const LstmGradRefs& g,
                         std::vector<Eigen::MatrixXd>* dxs) {
    const Eigen::Index H = p.hidden_size();
    const Eigen::Index I = p.input_size();
    const std::size_t T = cache.z.size();
    const Eigen::Index B = T ? cache.z[0].cols() : 0;
    if (dxs) dxs->resize(T);
    Eigen::MatrixXd dh_next =
        dh_final.size() ? dh_final : Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(H, B);
    Eigen::MatrixXd dz(H + I, B);
    for (std::size_t ti = T; ti-- > 0;) {
        Eigen::MatrixXd dh = dh_next;
        if (ext_dh) dh += (*ext_dh)[ti];
        const Eigen::MatrixXd& f = cache.f[ti];
        const Eigen::MatrixXd& i = cache.i[ti];
        const Eigen::MatrixXd& ct = cache.ct[ti];
        const Eigen::MatrixXd& o = cache.o[ti];
        const Eigen::MatrixXd& tc = cache.tc[ti];

        Eigen::MatrixXd do_ = dh.cwiseProduct(tc);
        Eigen::MatrixXd dc =
            dc_next + dh.cwiseProduct(o).cwiseProduct((1.0 - tc.array().square()).matrix());
        Eigen::MatrixXd df =
            ti > 0 ? dc.cwiseProduct(cache.c[ti - 1]).eval()
                   : Eigen::MatrixXd::Zero(H, B).eval();
        Eigen::MatrixXd di = dc.cwiseProduct(ct);
        Eigen::MatrixXd dct = dc.cwiseProduct(i);

        Eigen::MatrixXd dpf = df.cwiseProduct(f).cwiseProduct((1.0 - f.array()).matrix());
        Eigen::MatrixXd dpi = di.cwiseProduct(i).cwiseProduct((1.0 - i.array()).matrix());
        Eigen::MatrixXd dpc = dct.cwiseProduct((1.0 - ct.array().square()).matrix());
        Eigen::MatrixXd dpo = do_.cwiseProduct(o).cwiseProduct((1.0 - o.array()).matrix());

        const Eigen::MatrixXd& z = cache.z[ti];
        g.W_f->noalias() += dpf * z.transpose();
        g.W_i->noalias() += dpi * z.transpose();
        g.W_C->noalias() += dpc * z.transpose();
        g.W_o->noalias() += dpo * z.transpose();
        *g.b_f += dpf.rowwise().sum();
        *g.b_i += dpi.rowwise().sum();
        *g.b_C += dpc.rowwise().sum();
        *g.b_o += dpo.rowwise().sum();

        dz.noalias() = p.W_f.transpose() * dpf;
        dz.noalias() += p.W_i.transpose() * dpi;
        dz.noalias() += p.W_C.transpose() * dpc;
        dz.noalias() += p.W_o.transpose() * dpo;
        dh_next = dz.topRows(H);
        if (dxs) (*dxs)[ti] = dz.bottomRows(I);
        dc_next = dc.cwiseProduct(f);
    }
}

void gru_layer_backward(const GruCellParams& p, const GruCache& cache,
                        const Eigen::MatrixXd& dh_final,
                        const std::vector<Eigen::MatrixXd>* ext_dh, const GruGradRefs& g,
                        std::vector<Eigen::MatrixXd>* dxs) {
    const Eigen::Index H = p.hidden_size();
    const Eigen::Index I = p.input_size();
    const std::size_t T = cache.z1.size();
    const Eigen::Index B = T ? cache.z1[0].cols() : 0;
    if (dxs) dxs->resize(T);
    Eigen::MatrixXd dh_next =
        dh_final.size() ? dh_final : Eigen::MatrixXd::Zero(H, B);
    for (std::size_t ti = T; ti-- > 0;) {
        Eigen::MatrixXd dh = dh_next;
        if (ext_dh) dh += (*ext_dh)[ti];
        const Eigen::MatrixXd& zg = cache.zg[ti];
        const Eigen::MatrixXd& rg = cache.rg[ti];
        const Eigen::MatrixXd& htl = cache.htl[ti];
        const auto h_prev = cache.z1[ti].topRows(H);

        Eigen::MatrixXd dzg = dh.cwiseProduct(h_prev - htl);
        Eigen::MatrixXd dhtl = dh.cwiseProduct((1.0 - zg.array()).matrix());
        Eigen::MatrixXd dh_prev = dh.cwiseProduct(zg);

        Eigen::MatrixXd dpre_h = dhtl.cwiseProduct((1.0 - htl.array().square()).matrix());
        g.W_h->noalias() += dpre_h * cache.z2[ti].transpose();
        *g.b_h += dpre_h.rowwise().sum();
        Eigen::MatrixXd dz2 = p.W_h.transpose() * dpre_h;
        Eigen::MatrixXd drh = dz2.topRows(H);  // gradient on r*h_prev
        Eigen::MatrixXd dr = drh.cwiseProduct(h_prev);
        dh_prev += drh.cwiseProduct(rg);
        Eigen::MatrixXd dx = dz2.bottomRows(I);

        Eigen::MatrixXd dpre_z = dzg.cwiseProduct(zg).cwiseProduct((1.0 - zg.array()).matrix());
        Eigen::MatrixXd dpre_r = dr.cwiseProduct(rg).cwiseProduct((1.0 - rg.array()).matrix());
        g.W_z->noalias() += dpre_z * cache.z1[ti].transpose();
        g.W_r->noalias() += dpre_r * cache.z1[ti].transpose();
        *g.b_z += dpre_z.rowwise().sum();
        *g.b_r += dpre_r.rowwise().sum();
        Eigen::MatrixXd dz1 = p.W_z.transpose() * dpre_z;
        dz1.noalias() += p.W_r.transpose() * dpre_r;
        dh_prev += dz1.topRows(H);
        dx += dz1.bottomRows(I);

        dh_next = std::move(dh_prev);
        if (dxs) (*dxs)[ti] = std::move(dx);
    }
}

std::vector<Eigen::MatrixXd> build_step_inputs(const CascadeNet& net,
                                               const Eigen::MatrixXd& samples) {
    const Eigen::Index B = samples.rows();
    const int T = net.steps();
    const int I = net.step_input();
    std::vector<Eigen::MatrixXd> xs(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        Eigen::MatrixXd x(I, B);
        x.row(0) = samples.col(t).transpose();
        if (net.config.layout == SequenceLayout::lag_multivariate) {
            for (int j = 0; j < 3; ++j)
                x.row(1 + j) = samples.col(kLagCount + j).transpose();
        }
        xs[static_cast<std::size_t>(t)] = std::move(x);
    }
    return xs;
}

// Everything the forward pass produces that the backward pass needs.
struct ForwardWork {
    std::vector<Eigen::MatrixXd> xs;
    LstmCache l1_lstm, l2_lstm;
    GruCache l1_gru, l2_gru;
    std::vector<Eigen::MatrixXd> h1;   // raw layer-1 hidden sequence
    std::vector<Eigen::MatrixXd> h1d;  // after dropout
    Eigen::MatrixXd h2, h2d;           // layer-2 final state, after dropout
    Eigen::MatrixXd pred;              // 1 x B
};

bool masks_active(const DropoutMasks* masks) {
    return masks && (!masks->layer1.empty() || masks->layer2.size() > 0);
}

void cascade_forward_impl(const CascadeNet& net, const Eigen::MatrixXd& samples,
                          const DropoutMasks* masks, bool want_cache, ForwardWork& w) {
    if (samples.cols() != net.feature_count)
        throw DimensionError("cascade: expected " + std::to_string(net.feature_count) +
                             " features, got " + std::to_string(samples.cols()));
    const bool drop = masks_active(masks);
    if (drop && masks->layer1.size() != static_cast<std::size_t>(net.steps()))
        throw DimensionError("cascade: dropout mask count does not match sequence length");

    w.xs = build_step_inputs(net, samples);
    if (net.config.cell == CellKind::lstm)
        lstm_layer_forward(net.l1_lstm, w.xs, &w.h1, want_cache ? &w.l1_lstm : nullptr);
    else
        gru_layer_forward(net.l1_gru, w.xs, &w.h1, want_cache ? &w.l1_gru : nullptr);

    const std::size_t T = w.h1.size();
    w.h1d.resize(T);
    for (std::size_t t = 0; t < T; ++t)
        w.h1d[t] = drop ? w.h1[t].cwiseProduct(masks->layer1[t]).eval() : w.h1[t];

    std::vector<Eigen::MatrixXd> xs2;
    xs2.reserve(T);
    if (net.config.wiring == CascadeWiring::hidden_sequence) {
        xs2 = w.h1d;
    } else {
        for (std::size_t t = 0; t < T; ++t) {
            Eigen::MatrixXd s = net.mid_w * w.h1d[t];
            s.array() += net.mid_b(0, 0);
            xs2.push_back(std::move(s));
        }
    }

    if (net.config.cell == CellKind::lstm)
        w.h2 = lstm_layer_forward(net.l2_lstm, xs2, nullptr, want_cache ? &w.l2_lstm : nullptr);
    else
        w.h2 = gru_layer_forward(net.l2_gru, xs2, nullptr, want_cache ? &w.l2_gru : nullptr);

    w.h2d = drop ? w.h2.cwiseProduct(masks->layer2).eval() : w.h2;
    w.pred = net.dense_w * w.h2d;
    w.pred.array() += net.dense_b(0, 0);
}

std::vector<Eigen::MatrixXd> snapshot_params(const std::vector<const Eigen::MatrixXd*>& views) {
    std::vector<Eigen::MatrixXd> out;
    out.reserve(views.size());
    for (const auto* p : views) out.push_back(*p);
    return out;
}

void restore_params(const ParamViews& views, const std::vector<Eigen::MatrixXd>& saved) {
    for (std::size_t i = 0; i < views.size(); ++i) *views[i] = saved[i];
}

}  // namespace

LstmStepResult lstm_cell_step(const LstmCellParams& params, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& h_prev, const Eigen::VectorXd& c_prev) {
    if (x.size() != params.input_size() || h_prev.size() != params.hidden_size() ||
        c_prev.size() != params.hidden_size())
        throw DimensionError("lstm_cell_step: input/state sizes do not match parameters");
    const Eigen::Index H = params.hidden_size();
    const Eigen::Index I = params.input_size();
    Eigen::MatrixXd z(H + I, 1);
    z.topRows(H) = h_prev;
    z.bottomRows(I) = x;
    auto gate = [&](const Eigen::MatrixXd& W, const Eigen::MatrixXd& b) {
        Eigen::MatrixXd pre = W * z + b;
        return pre;
    };
    LstmStepResult r;
    r.f = sigmoid(gate(params.W_f, params.b_f)).col(0);
    r.i = sigmoid(gate(params.W_i, params.b_i)).col(0);
    r.c_tilde = tanh_m(gate(params.W_C, params.b_C)).col(0);
    r.o = sigmoid(gate(params.W_o, params.b_o)).col(0);
    r.c = r.f.cwiseProduct(c_prev) + r.i.cwiseProduct(r.c_tilde);
    r.h = r.o.cwiseProduct(r.c.array().tanh().matrix());
    return r;
}

GruStepResult gru_cell_step(const GruCellParams& params, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& h_prev) {
    if (x.size() != params.input_size() || h_prev.size() != params.hidden_size())
        throw DimensionError("gru_cell_step: input/state sizes do not match parameters");
    const Eigen::Index H = params.hidden_size();
    const Eigen::Index I = params.input_size();
    Eigen::MatrixXd z1(H + I, 1);
    z1.topRows(H) = h_prev;
    z1.bottomRows(I) = x;
    GruStepResult r;
    r.z = sigmoid(params.W_z * z1 + params.b_z).col(0);
    r.r = sigmoid(params.W_r * z1 + params.b_r).col(0);
    Eigen::MatrixXd z2(H + I, 1);
    z2.topRows(H) = r.r.cwiseProduct(h_prev);
    z2.bottomRows(I) = x;
    r.h_tilde = tanh_m(params.W_h * z2 + params.b_h).col(0);
    r.h = r.z.cwiseProduct(h_prev) +
          (1.0 - r.z.array()).matrix().cwiseProduct(r.h_tilde);
    return r;
}

int CascadeNet::steps() const {
    return config.layout == SequenceLayout::univariate ? feature_count : kLagCount;
}

int CascadeNet::step_input() const {
    return config.layout == SequenceLayout::univariate ? 1 : 4;
}

ParamViews CascadeNet::param_views() {
    ParamViews v;
    if (config.cell == CellKind::lstm) {
        for (LstmCellParams* p : {&l1_lstm, &l2_lstm})
            for (Eigen::MatrixXd* m :
                 {&p->W_f, &p->W_i, &p->W_C, &p->W_o, &p->b_f, &p->b_i, &p->b_C, &p->b_o})
                v.push_back(m);
    } else {
        for (GruCellParams* p : {&l1_gru, &l2_gru})
            for (Eigen::MatrixXd* m : {&p->W_z, &p->W_r, &p->W_h, &p->b_z, &p->b_r, &p->b_h})
                v.push_back(m);
    }
    if (config.wiring == CascadeWiring::prediction_feed) {
        v.push_back(&mid_w);
        v.push_back(&mid_b);
    }
    v.push_back(&dense_w);
    v.push_back(&dense_b);
    return v;
}

std::vector<const Eigen::MatrixXd*> CascadeNet::param_views() const {
    auto views = const_cast<CascadeNet*>(this)->param_views();
    return {views.begin(), views.end()};
}

CascadeNet make_cascade(const CascadeConfig& config, int feature_count, std::uint64_t seed) {
    if (config.layer1_hidden < 1 || config.layer2_hidden < 1)
        throw ConfigError("cascade hidden sizes must be >= 1");
    if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0))
        throw ConfigError("dropout rate must lie in [0,1)");
    if (feature_count < 1) throw ConfigError("cascade needs at least one feature");
    if (config.layout == SequenceLayout::lag_multivariate &&
        feature_count != kTemporalFeatureCount)
        throw ConfigError("lag_multivariate layout requires the unpruned 27-feature layout");

    CascadeNet net;
    net.config = config;
    net.feature_count = feature_count;
    Rng rng(splitmix64(seed ^ fnv1a64("make_cascade")));
    const Eigen::Index H1 = config.layer1_hidden;
    const Eigen::Index H2 = config.layer2_hidden;
    const Eigen::Index I1 = net.step_input();
    const Eigen::Index I2 =
        config.wiring == CascadeWiring::hidden_sequence ? H1 : Eigen::Index(1);

    if (config.cell == CellKind::lstm) {
        init_lstm(net.l1_lstm, H1, I1, rng);
        init_lstm(net.l2_lstm, H2, I2, rng);
    } else {
        init_gru(net.l1_gru, H1, I1, rng);
        init_gru(net.l2_gru, H2, I2, rng);
    }
    if (config.wiring == CascadeWiring::prediction_feed) {
        net.mid_w.resize(1, H1);
        glorot_fill(net.mid_w, static_cast<double>(H1), 1.0, rng);
        net.mid_b = Eigen::MatrixXd::Zero(1, 1);
    }
    net.dense_w.resize(1, H2);
    glorot_fill(net.dense_w, static_cast<double>(H2), 1.0, rng);
    net.dense_b = Eigen::MatrixXd::Zero(1, 1);
    return net;
}

DropoutMasks draw_dropout_masks(const CascadeConfig& config, int steps, Eigen::Index batch,
                                Rng& rng) {
    DropoutMasks masks;
    if (config.dropout_rate <= 0.0) return masks;
    const double keep = 1.0 - config.dropout_rate;
    const double inv = 1.0 / keep;
    auto draw = [&](Eigen::Index rows, Eigen::Index cols) {
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform() < keep ? inv : 0.0;
        return m;
    };
    masks.layer1.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t)
        masks.layer1.push_back(draw(config.layer1_hidden, batch));
    masks.layer2 = draw(config.layer2_hidden, batch);
    return masks;
}

double cascade_forward(const CascadeNet& net, const Eigen::VectorXd& sample) {
    Eigen::MatrixXd row = sample.transpose();
    ForwardWork w;
    cascade_forward_impl(net, row, nullptr, false, w);
    return w.pred(0, 0);
}

Eigen::VectorXd cascade_forward_batch(const CascadeNet& net, const Eigen::MatrixXd& samples,
                                      const DropoutMasks* masks) {
    if (samples.rows() == 0) return Eigen::VectorXd();
    ForwardWork w;
    cascade_forward_impl(net, samples, masks, false, w);
    return w.pred.transpose();
}

GradientResult bptt_gradients(const CascadeNet& net, const Eigen::MatrixXd& samples,
                              const Eigen::VectorXd& targets, const DropoutMasks* masks) {
    if (samples.rows() == 0) throw EmptyDatasetError("bptt_gradients: empty batch");
    if (samples.rows() != targets.size())
        throw DimensionError("bptt_gradients: sample/target count mismatch");
    const Eigen::Index B = samples.rows();
    const bool drop = masks_active(masks);

    // The net is logically const here; views are needed to shape gradients.
    auto const_views = net.param_views();
    ParamViews views;
    views.reserve(const_views.size());
    for (const auto* p : const_views) views.push_back(const_cast<Eigen::MatrixXd*>(p));

    ForwardWork w;
    cascade_forward_impl(net, samples, masks, true, w);

    GradientResult res;
    res.grads = make_gradients_like(views);
    res.predictions = w.pred.transpose();
    const Eigen::VectorXd err = res.predictions - targets;
    res.loss = err.squaredNorm() / static_cast<double>(B);
    if (!std::isfinite(res.loss)) throw DivergenceError("bptt_gradients: non-finite loss");

    // Gradient index bookkeeping mirrors param_views() ordering.
    const std::size_t per_layer = net.config.cell == CellKind::lstm ? 8 : 6;
    const std::size_t mid_at = 2 * per_layer;
    const bool has_mid = net.config.wiring == CascadeWiring::prediction_feed;
    const std::size_t dense_at = mid_at + (has_mid ? 2 : 0);

    Eigen::MatrixXd dpred = (2.0 / static_cast<double>(B)) * err.transpose();  // 1 x B
    res.grads[dense_at].noalias() += dpred * w.h2d.transpose();
    res.grads[dense_at + 1](0, 0) += dpred.sum();

    Eigen::MatrixXd dh2d = net.dense_w.transpose() * dpred;  // H2 x B
    Eigen::MatrixXd dh2 = drop ? dh2d.cwiseProduct(masks->layer2).eval() : std::move(dh2d);

    std::vector<Eigen::MatrixXd> dxs2;
    if (net.config.cell == CellKind::lstm) {
        LstmGradRefs g2{&res.grads[per_layer + 0], &res.grads[per_layer + 1],
                        &res.grads[per_layer + 2], &res.grads[per_layer + 3],
                        &res.grads[per_layer + 4], &res.grads[per_layer + 5],
                        &res.grads[per_layer + 6], &res.grads[per_layer + 7]};
        lstm_layer_backward(net.l2_lstm, w.l2_lstm, dh2, nullptr, g2, &dxs2);
    } else {
        GruGradRefs g2{&res.grads[per_layer + 0], &res.grads[per_layer + 1],
                       &res.grads[per_layer + 2], &res.grads[per_layer + 3],
                       &res.grads[per_layer + 4], &res.grads[per_layer + 5]};
        gru_layer_backward(net.l2_gru, w.l2_gru, dh2, nullptr, g2, &dxs2);
    }

    const std::size_t T = w.h1.size();
    std::vector<Eigen::MatrixXd> dh1(T);
    if (net.config.wiring == CascadeWiring::hidden_sequence) {
        for (std::size_t t = 0; t < T; ++t) dh1[t] = std::move(dxs2[t]);
    } else {
        for (std::size_t t = 0; t < T; ++t) {
            const Eigen::MatrixXd& ds = dxs2[t];  // 1 x B
            res.grads[mid_at].noalias() += ds * w.h1d[t].transpose();
            res.grads[mid_at + 1](0, 0) += ds.sum();
            dh1[t] = net.mid_w.transpose() * ds;
        }
    }
    if (drop)
        for (std::size_t t = 0; t < T; ++t) dh1[t] = dh1[t].cwiseProduct(masks->layer1[t]);

    const Eigen::MatrixXd no_final;
    if (net.config.cell == CellKind::lstm) {
        LstmGradRefs g1{&res.grads[0], &res.grads[1], &res.grads[2], &res.grads[3],
                        &res.grads[4], &res.grads[5], &res.grads[6], &res.grads[7]};
        lstm_layer_backward(net.l1_lstm, w.l1_lstm, no_final, &dh1, g1, nullptr);
    } else {
        GruGradRefs g1{&res.grads[0], &res.grads[1], &res.grads[2],
                       &res.grads[3], &res.grads[4], &res.grads[5]};
        gru_layer_backward(net.l1_gru, w.l1_gru, no_final, &dh1, g1, nullptr);
    }
    return res;
}

TrainHistory train_recurrent(CascadeNet& net, const WindowedDataset& train,
                             const WindowedDataset& validation, const TrainingConfig& config) {
    const std::size_t n = train.n_samples();
    if (n == 0) throw EmptyDatasetError("train_recurrent: empty training set");
    if (train.inputs.cols() != net.feature_count)
        throw DimensionError("train_recurrent: dataset width does not match the net");
    if (config.batch_size < 1) throw ConfigError("batch_size must be >= 1");

    net.feature_names = train.feature_names;
    net.scalers = train.scalers;

    ParamViews views = net.param_views();
    AdamState adam = make_adam_state(views);
    Rng rng(splitmix64(config.seed ^ fnv1a64("train_recurrent")));

    const bool has_val = validation.n_samples() > 0;
    TrainHistory hist;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Eigen::MatrixXd> best = snapshot_params(std::as_const(net).param_views());
    std::size_t streak = 0;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t bs = std::min(config.batch_size, n - start);
            Eigen::MatrixXd xb(static_cast<Eigen::Index>(bs), net.feature_count);
            Eigen::VectorXd yb(static_cast<Eigen::Index>(bs));
            for (std::size_t r = 0; r < bs; ++r) {
                xb.row(static_cast<Eigen::Index>(r)) =
                    train.inputs.row(static_cast<Eigen::Index>(order[start + r]));
                yb(static_cast<Eigen::Index>(r)) =
                    train.targets(static_cast<Eigen::Index>(order[start + r]));
            }
            DropoutMasks masks = draw_dropout_masks(net.config, net.steps(),
                                                    static_cast<Eigen::Index>(bs), rng);
            GradientResult res;
            try {
                res = bptt_gradients(net, xb, yb, &masks);
            } catch (const DivergenceError&) {
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(start / config.batch_size));
            }
            const double norm = clip_global_norm(res.grads, config.clip_norm);
            if (config.clip_norm > 0.0 && norm > config.clip_norm) ++hist.clipped_batches;
            adam_update(views, res.grads, adam, config);
            loss_sum += res.loss * static_cast<double>(bs);
        }
        const double train_loss = loss_sum / static_cast<double>(n);
        if (!std::isfinite(train_loss))
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch));
        hist.train_loss.push_back(train_loss);

        if (has_val) {
            const Eigen::VectorXd vp = cascade_forward_batch(net, validation.inputs);
            const double vloss =
                (vp - validation.targets).squaredNorm() / static_cast<double>(vp.size());
            hist.val_loss.push_back(vloss);
            if (vloss < best_val) {
                best_val = vloss;
                best = snapshot_params(std::as_const(net).param_views());
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
        restore_params(views, best);
    else
        hist.best_epoch = hist.train_loss.empty() ? 0 : hist.train_loss.size() - 1;
    return hist;
}

Eigen::VectorXd predict(const CascadeNet& net, const WindowedDataset& dataset) {
    if (dataset.feature_names != net.feature_names)
        throw InternalConsistencyError("predict: dataset features differ from training features");
    auto same = [](const ScalerParams& a, const ScalerParams& b) {
        return a.min == b.min && a.max == b.max;
    };
    if (!same(dataset.scalers.pollutant, net.scalers.pollutant) ||
        !same(dataset.scalers.cmaq[0], net.scalers.cmaq[0]) ||
        !same(dataset.scalers.cmaq[1], net.scalers.cmaq[1]) ||
        !same(dataset.scalers.cmaq[2], net.scalers.cmaq[2]))
        throw InternalConsistencyError("predict: dataset scalers differ from training scalers");
    if (dataset.n_samples() == 0) return Eigen::VectorXd();
    return cascade_forward_batch(net, dataset.inputs);
}

}  // namespace aircorrect
