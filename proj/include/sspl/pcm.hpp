#pragma once

#include <vector>

#include "sspl/nn.hpp"

namespace sspl {

/// Layer plan and dynamics settings for the predictive coding module.
///
/// Layer l of L holds a representation r_l of c_v channels whose spatial size
/// halves going down from the visual feature at the top (8x8 -> 4x4 -> 2x2 in
/// the default plan); r_0 is the audio feature lifted to a 1x1 map of c_a
/// channels. `cycles` is the number of feedback+feedforward alternations per
/// forward pass during training; evaluation may override it, reusing the last
/// trained batch-norm slot for steps beyond the trained horizon.
struct PCMConfig {
    int layers = 3;
    int cycles = 5;
    int c_v = 128;
    int c_a = 64;
    int top_h = 8;
    int top_w = 8;
    int kernel = 3;
    bool use_bn = true;
    bool linear_phi = false;      // identity activation (algebraic tests)
    bool learnable_rates = true;  // softplus/sigmoid-mapped scalars
    std::vector<double> fixed_a;  // used when learnable_rates == false
    std::vector<double> fixed_b;

    int height(int l) const { return l == 0 ? 1 : std::max(1, top_h >> (layers - l)); }
    int width(int l) const { return l == 0 ? 1 : std::max(1, top_w >> (layers - l)); }
    int channels(int l) const { return l == 0 ? c_a : c_v; }

    void validate() const {
        if (layers < 1) throw ConfigError("pcm: layers must be >= 1");
        if (cycles < 1) throw ConfigError("pcm: cycles must be >= 1");
        for (int l = layers; l >= 1; --l) {
            const int h = height(l), hl = height(l - 1);
            if (hl != h && hl * 2 != h)
                throw ConfigError("pcm: spatial plan must halve or hold between layers");
            if (width(l - 1) != width(l) && width(l - 1) * 2 != width(l))
                throw ConfigError("pcm: spatial plan must halve or hold between layers");
        }
        if (!learnable_rates &&
            (fixed_a.size() != static_cast<size_t>(layers) ||
             fixed_b.size() != static_cast<size_t>(layers)))
            throw ConfigError("pcm: fixed rates must provide one value per layer");
    }
};

/// Per-layer representations, predictions, and errors at one time step.
/// r[0] is the lifted audio feature and p[layers] the visual feature; both
/// stay pinned across steps.
template <class T>
struct PCMState {
    std::vector<Tensor<T>> r; // 0..L
    std::vector<Tensor<T>> p; // 0..L
    std::vector<Tensor<T>> e; // 0..L-1
    int t = 0;
};

template <class T>
struct PCM {
    PCMConfig cfg;
    // fb[l-1] realizes the feedback weights of layer l: a stride-1 convolution
    // from r_l, max-pooled when the lower layer is half the size.
    std::vector<nn::Conv2d<T>> fb;
    // ff[l-1] realizes the feedforward weights of layer l: bilinear upsampling
    // of e_{l-1} followed by a transposed convolution into r_l's shape.
    std::vector<nn::ConvTranspose2d<T>> ff;
    std::vector<nn::BatchNorm<T>> bn_fb, bn_ff;
    Tensor<T> rate_a_raw, rate_b_raw; // [L], mapped through softplus/sigmoid
    nn::Conv2d<T> out_proj;           // 1x1 projection of r_L to f~_v

    static PCM create(const PCMConfig& cfg, Rng& rng) {
        cfg.validate();
        PCM m;
        m.cfg = cfg;
        const int pad = (cfg.kernel - 1) / 2;
        for (int l = 1; l <= cfg.layers; ++l) {
            m.fb.push_back(nn::Conv2d<T>::create(cfg.channels(l), cfg.channels(l - 1), cfg.kernel,
                                                 1, pad, rng, /*with_bias=*/l == 1));
            m.ff.push_back(
                nn::ConvTranspose2d<T>::create(cfg.channels(l - 1), cfg.c_v, cfg.kernel, 1, pad, rng));
            const int slots = cfg.cycles + 1; // slot 0 = init sweep, slot t = cycle t
            m.bn_fb.push_back(nn::BatchNorm<T>::create(cfg.c_v, slots));
            m.bn_ff.push_back(nn::BatchNorm<T>::create(cfg.c_v, slots));
        }
        m.rate_a_raw = Tensor<T>::full({cfg.layers}, T(-2.2521684), true); // softplus -> 0.1
        m.rate_b_raw = Tensor<T>::zeros({cfg.layers}, true);               // sigmoid -> 0.5
        m.out_proj = nn::Conv2d<T>::create(cfg.c_v, cfg.c_v, 1, 1, 0, rng, true);
        return m;
    }

    Tensor<T> phi(const Tensor<T>& x) const { return cfg.linear_phi ? x : gelu(x); }

    Tensor<T> rate_a(int l) const {
        if (!cfg.learnable_rates) return Tensor<T>::scalar(static_cast<T>(cfg.fixed_a[l - 1]));
        return softplus(select(rate_a_raw, l - 1));
    }

    Tensor<T> rate_b(int l) const {
        if (!cfg.learnable_rates) return Tensor<T>::scalar(static_cast<T>(cfg.fixed_b[l - 1]));
        return sigmoid(select(rate_b_raw, l - 1));
    }

    int bn_slot(int t) const { return std::min(t, cfg.cycles); }

    Tensor<T> upsample_to(const Tensor<T>& x, int l) const {
        const int h = cfg.height(l), w = cfg.width(l);
        if (x.dim(2) == h && x.dim(3) == w) return x;
        return bilinear_resize(x, h, w);
    }

    /// Prediction of layer l-1 from layer l (no activation, no normalization).
    Tensor<T> predict_below(const Tensor<T>& r_l, int l) const {
        auto p = fb[l - 1].forward(r_l);
        if (cfg.height(l - 1) * 2 == cfg.height(l)) p = max_pool2x2(p);
        return p;
    }

    /// Bottom-up initialization: r_0 = lifted f_a, then one feedforward lift
    /// per layer. When `fill_predictions` is set the state also gets p/e at
    /// t = 0 from a measurement pass that leaves r untouched.
    PCMState<T> init_state(const Tensor<T>& f_v, const Tensor<T>& f_a, bool training,
                           bool fill_predictions = false) const {
        if (f_v.ndim() != 4 || f_v.dim(1) != cfg.c_v || f_v.dim(2) != cfg.top_h ||
            f_v.dim(3) != cfg.top_w)
            throw ConfigError("pcm: f_v shape does not match configuration");
        if (f_a.ndim() != 2 || f_a.dim(1) != cfg.c_a)
            throw ConfigError("pcm: f_a shape does not match configuration");
        PCMState<T> st;
        st.t = 0;
        st.r.resize(cfg.layers + 1);
        st.p.resize(cfg.layers + 1);
        st.e.resize(cfg.layers);
        st.r[0] = reshape(f_a, {f_a.dim(0), cfg.c_a, 1, 1});
        // The lift normalizes with the feedback BN of the target layer at
        // slot 0, keeping init statistics separate from every cycle's.
        for (int l = 1; l <= cfg.layers; ++l) {
            auto x = ff[l - 1].forward(upsample_to(st.r[l - 1], l));
            if (cfg.use_bn) x = bn_fb[l - 1].forward(x, training, 0);
            st.r[l] = phi(x);
        }
        st.p[cfg.layers] = f_v;
        if (fill_predictions) measure(st);
        return st;
    }

    /// Recomputes p and e from the current representations without updating r.
    void measure(PCMState<T>& st) const {
        for (int l = cfg.layers - 1; l >= 1; --l) st.p[l] = predict_below(st.r[l + 1], l + 1);
        st.p[0] = phi(predict_below(st.r[1], 1));
        for (int l = 0; l < cfg.layers; ++l) st.e[l] = sub(st.r[l], st.p[l]);
    }

    /// Top-down sweep: p_l from the layer above (p_L pinned to f_v), then
    /// r_l <- phi((1-b_l) r_l(t-1) + b_l p_l), from layer L down to 1.
    void feedback_sweep(PCMState<T>& st, int t, bool training) const {
        const int slot = bn_slot(t);
        for (int l = cfg.layers; l >= 1; --l) {
            if (l < cfg.layers) st.p[l] = predict_below(st.r[l + 1], l + 1);
            auto b = rate_b(l);
            auto keep = add_scalar(scale(b, T(-1)), T(1)); // 1 - b_l
            auto pre = add(scale_by(st.r[l], keep), scale_by(st.p[l], b));
            if (cfg.use_bn) pre = bn_fb[l - 1].forward(pre, training, slot);
            st.r[l] = phi(pre);
        }
        st.t = t;
    }

    /// Bottom-up sweep: e_{l-1} = r_{l-1} - p_{l-1} (p_0 predicted from r_1),
    /// then r_l <- phi(r_l + a_l W^T e_{l-1}), from layer 1 up to L.
    void feedforward_sweep(PCMState<T>& st, int t, bool training) const {
        const int slot = bn_slot(t);
        for (int l = 1; l <= cfg.layers; ++l) {
            if (l == 1) st.p[0] = phi(predict_below(st.r[1], 1));
            st.e[l - 1] = sub(st.r[l - 1], st.p[l - 1]);
            auto corr = ff[l - 1].forward(upsample_to(st.e[l - 1], l));
            auto pre = add(st.r[l], scale_by(corr, rate_a(l)));
            if (cfg.use_bn) pre = bn_ff[l - 1].forward(pre, training, slot);
            st.r[l] = phi(pre);
        }
    }

    /// Runs T cycles of alternating sweeps and projects the top representation
    /// back to the visual feature's shape through the 1x1 convolution.
    Tensor<T> run(const Tensor<T>& f_v, const Tensor<T>& f_a, bool training, int cycles = -1,
                  std::vector<Tensor<T>>* per_cycle_out = nullptr) const {
        const int T_run = cycles > 0 ? cycles : cfg.cycles;
        PCMState<T> st = init_state(f_v, f_a, training);
        for (int t = 1; t <= T_run; ++t) {
            feedback_sweep(st, t, training);
            feedforward_sweep(st, t, training);
            if (per_cycle_out) per_cycle_out->push_back(out_proj.forward(st.r[cfg.layers]));
        }
        return out_proj.forward(st.r[cfg.layers]);
    }

    void collect(const std::string& p, nn::ParamList<T>& out) const {
        for (int l = 1; l <= cfg.layers; ++l) {
            fb[l - 1].collect(p + ".fb" + std::to_string(l), out);
            ff[l - 1].collect(p + ".ff" + std::to_string(l), out);
            bn_fb[l - 1].collect(p + ".bn_fb" + std::to_string(l), out);
            bn_ff[l - 1].collect(p + ".bn_ff" + std::to_string(l), out);
        }
        if (cfg.learnable_rates) {
            out.push_back({p + ".rate_a", rate_a_raw, true});
            out.push_back({p + ".rate_b", rate_b_raw, true});
        }
        out_proj.collect(p + ".out_proj", out);
    }
};

/// Diagnostic compound loss: per layer, 0.5|e_{l-1}|^2 + 0.5|r_l - p_l|^2.
/// Measured on detached values; the sweeps themselves are its descent
/// realization, so it is never differentiated.
template <class T>
struct PCMDiagnostic {
    std::vector<T> per_layer;
    T total = 0;
};

template <class T>
PCMDiagnostic<T> pcm_diagnostic_loss(const PCMState<T>& st) {
    const int L = static_cast<int>(st.e.size());
    for (int l = 0; l <= L; ++l)
        if (!st.p[l].defined() || !st.r[l].defined())
            throw UsageError("pcm_diagnostic_loss: state lacks predictions (run measure first)");
    NoGradScope<T> ng;
    PCMDiagnostic<T> d;
    for (int l = 1; l <= L; ++l) {
        T err = 0, mis = 0;
        const auto& e = st.e[l - 1];
        for (int64_t i = 0; i < e.size(); ++i) err += e.data()[i] * e.data()[i];
        const auto &r = st.r[l], &p = st.p[l];
        for (int64_t i = 0; i < r.size(); ++i) {
            const T dv = r.data()[i] - p.data()[i];
            mis += dv * dv;
        }
        d.per_layer.push_back(T(0.5) * err + T(0.5) * mis);
        d.total += d.per_layer.back();
    }
    return d;
}

} // namespace sspl
