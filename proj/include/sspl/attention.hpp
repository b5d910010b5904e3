#pragma once

#include "sspl/nn.hpp"
#include "sspl/ops.hpp"

namespace sspl {

enum class ScalingMethod { minmax, relu, sigmoid, softmax, relu_softmax };
enum class FusionMode { attention, concat, multiply, add };

inline const char* to_string(ScalingMethod m) {
    switch (m) {
        case ScalingMethod::minmax: return "minmax";
        case ScalingMethod::relu: return "relu";
        case ScalingMethod::sigmoid: return "sigmoid";
        case ScalingMethod::softmax: return "softmax";
        case ScalingMethod::relu_softmax: return "relu_softmax";
    }
    return "?";
}

inline const char* to_string(FusionMode m) {
    switch (m) {
        case FusionMode::attention: return "attention";
        case FusionMode::concat: return "concat";
        case FusionMode::multiply: return "multiply";
        case FusionMode::add: return "add";
    }
    return "?";
}

ScalingMethod scaling_from_string(const std::string& s);
FusionMode fusion_from_string(const std::string& s);

/// S(i,j) = cos(audio, visual(.,i,j)) per batch element:
/// audio [b,c], visual [b,c,h,w] -> [b,h,w]. Values lie in [-1,1].
template <class T>
Tensor<T> similarity_map(const Tensor<T>& audio, const Tensor<T>& visual) {
    if (audio.ndim() != 2 || visual.ndim() != 4 || audio.dim(0) != visual.dim(0) ||
        audio.dim(1) != visual.dim(1))
        throw DimError("similarity_map: expected audio [b,c] and visual [b,c,h,w]");
    const int b = visual.dim(0), c = visual.dim(1), h = visual.dim(2), w = visual.dim(3);
    const int hw = h * w;
    bool rec = detail::want_record<T>({&audio, &visual});
    Tensor<T> out = Tensor<T>::zeros({b, h, w}, rec);
    auto a_norms = std::make_shared<std::vector<T>>(b);
    auto f_norms = std::make_shared<std::vector<T>>(static_cast<size_t>(b) * hw);
    for (int bb = 0; bb < b; ++bb) {
        const T* a = audio.data() + static_cast<int64_t>(bb) * c;
        T na2 = 0;
        for (int k = 0; k < c; ++k) na2 += a[k] * a[k];
        const T na = std::sqrt(na2);
        (*a_norms)[bb] = na;
        const T* F = visual.data() + static_cast<int64_t>(bb) * c * hw;
        T* o = out.data() + static_cast<int64_t>(bb) * hw;
        for (int ij = 0; ij < hw; ++ij) {
            T nf2 = 0, d = 0;
            for (int k = 0; k < c; ++k) {
                const T fv = F[static_cast<int64_t>(k) * hw + ij];
                nf2 += fv * fv;
                d += a[k] * fv;
            }
            const T nf = std::sqrt(nf2);
            (*f_norms)[static_cast<size_t>(bb) * hw + ij] = nf;
            o[ij] = d / (na * nf + static_cast<T>(kNormEps));
        }
    }
    if (rec)
        Tape<T>::current()->record([audio, visual, out, a_norms, f_norms, b, c, hw] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            for (int bb = 0; bb < b; ++bb) {
                const T* a = audio.data() + static_cast<int64_t>(bb) * c;
                const T* F = visual.data() + static_cast<int64_t>(bb) * c * hw;
                const T* gs = g + static_cast<int64_t>(bb) * hw;
                const T* so = out.data() + static_cast<int64_t>(bb) * hw;
                const T na = (*a_norms)[bb];
                T* ga = audio.requires_grad() ? audio.grad_data() + static_cast<int64_t>(bb) * c
                                              : nullptr;
                T* gF = visual.requires_grad()
                            ? visual.grad_data() + static_cast<int64_t>(bb) * c * hw
                            : nullptr;
                for (int ij = 0; ij < hw; ++ij) {
                    const T gv = gs[ij];
                    if (gv == T(0)) continue;
                    const T nf = (*f_norms)[static_cast<size_t>(bb) * hw + ij];
                    const T den = na * nf + static_cast<T>(kNormEps);
                    const T s = so[ij];
                    if (ga) {
                        const T fa = na > T(0) ? s * nf / (na * den) : T(0);
                        for (int k = 0; k < c; ++k)
                            ga[k] += gv * (F[static_cast<int64_t>(k) * hw + ij] / den - fa * a[k]);
                    }
                    if (gF) {
                        const T ff = nf > T(0) ? s * na / (nf * den) : T(0);
                        for (int k = 0; k < c; ++k)
                            gF[static_cast<int64_t>(k) * hw + ij] +=
                                gv * (a[k] / den - ff * F[static_cast<int64_t>(k) * hw + ij]);
                    }
                }
            }
        });
    return out;
}

/// Per-map min-max rescaling to [0,1]. A constant map (max-min < 1e-8) maps to
/// 0.5 everywhere and passes no gradient.
template <class T>
Tensor<T> minmax_map(const Tensor<T>& s) {
    if (s.ndim() < 2) throw DimError("minmax_map: expected [b,h,w] or [h,w]");
    const int hw = s.dim(s.ndim() - 1) * s.dim(s.ndim() - 2);
    const int b = static_cast<int>(s.size() / hw);
    bool rec = detail::want_record<T>({&s});
    Tensor<T> out = Tensor<T>::zeros(s.shape(), rec);
    auto lo_idx = std::make_shared<std::vector<int>>(b);
    auto hi_idx = std::make_shared<std::vector<int>>(b);
    auto degenerate = std::make_shared<std::vector<uint8_t>>(b);
    for (int bb = 0; bb < b; ++bb) {
        const T* xs = s.data() + static_cast<int64_t>(bb) * hw;
        int lo = 0, hi = 0;
        for (int i = 1; i < hw; ++i) {
            if (xs[i] < xs[lo]) lo = i;
            if (xs[i] > xs[hi]) hi = i;
        }
        (*lo_idx)[bb] = lo;
        (*hi_idx)[bb] = hi;
        const T range = xs[hi] - xs[lo];
        T* o = out.data() + static_cast<int64_t>(bb) * hw;
        if (range < T(1e-8)) {
            (*degenerate)[bb] = 1;
            for (int i = 0; i < hw; ++i) o[i] = T(0.5);
        } else {
            (*degenerate)[bb] = 0;
            const T inv = T(1) / range;
            const T mn = xs[lo];
            for (int i = 0; i < hw; ++i) o[i] = (xs[i] - mn) * inv;
        }
    }
    if (rec)
        Tape<T>::current()->record([s, out, lo_idx, hi_idx, degenerate, b, hw] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            T* gx = s.grad_data();
            for (int bb = 0; bb < b; ++bb) {
                if ((*degenerate)[bb]) continue;
                const T* xs = s.data() + static_cast<int64_t>(bb) * hw;
                const T* gs = g + static_cast<int64_t>(bb) * hw;
                const T* os = out.data() + static_cast<int64_t>(bb) * hw;
                T* gxs = gx + static_cast<int64_t>(bb) * hw;
                const int lo = (*lo_idx)[bb], hi = (*hi_idx)[bb];
                const T inv = T(1) / (xs[hi] - xs[lo]);
                T sum_g = 0, sum_gy = 0;
                for (int i = 0; i < hw; ++i) {
                    sum_g += gs[i];
                    sum_gy += gs[i] * os[i];
                }
                for (int i = 0; i < hw; ++i) gxs[i] += gs[i] * inv;
                gxs[lo] -= sum_g * inv;
                gxs[hi] -= sum_gy * inv;
                gxs[lo] += sum_gy * inv;
            }
        });
    return out;
}

/// Rescales cosine similarities into [0,1] by the configured method.
template <class T>
Tensor<T> scale_map(const Tensor<T>& s, ScalingMethod method) {
    const int hw = s.dim(s.ndim() - 1) * s.dim(s.ndim() - 2);
    switch (method) {
        case ScalingMethod::minmax: return minmax_map(s);
        case ScalingMethod::relu: return relu(s);
        case ScalingMethod::sigmoid: return sigmoid(s);
        case ScalingMethod::softmax: return softmax_groups(s, hw);
        case ScalingMethod::relu_softmax: return softmax_groups(relu(s), hw);
    }
    throw ConfigError("scale_map: unsupported method");
}

/// f_av(k) = sum_ij weights(i,j) * visual(k,i,j): weights [b,h,w],
/// visual [b,c,h,w] -> [b,c]. Unnormalized weighted sum.
template <class T>
Tensor<T> attend_pool(const Tensor<T>& weights, const Tensor<T>& visual) {
    if (weights.ndim() != 3 || visual.ndim() != 4 || weights.dim(0) != visual.dim(0) ||
        weights.dim(1) != visual.dim(2) || weights.dim(2) != visual.dim(3))
        throw DimError("attend_pool: expected weights [b,h,w] and visual [b,c,h,w]");
    const int b = visual.dim(0), c = visual.dim(1), hw = visual.dim(2) * visual.dim(3);
    bool rec = detail::want_record<T>({&weights, &visual});
    Tensor<T> out = Tensor<T>::zeros({b, c}, rec);
    for (int bb = 0; bb < b; ++bb) {
        const T* wv = weights.data() + static_cast<int64_t>(bb) * hw;
        const T* F = visual.data() + static_cast<int64_t>(bb) * c * hw;
        T* o = out.data() + static_cast<int64_t>(bb) * c;
        for (int k = 0; k < c; ++k) {
            const T* fk = F + static_cast<int64_t>(k) * hw;
            T acc = 0;
            for (int ij = 0; ij < hw; ++ij) acc += wv[ij] * fk[ij];
            o[k] = acc;
        }
    }
    if (rec)
        Tape<T>::current()->record([weights, visual, out, b, c, hw] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            for (int bb = 0; bb < b; ++bb) {
                const T* gs = g + static_cast<int64_t>(bb) * c;
                const T* wv = weights.data() + static_cast<int64_t>(bb) * hw;
                const T* F = visual.data() + static_cast<int64_t>(bb) * c * hw;
                if (weights.requires_grad()) {
                    T* gw = weights.grad_data() + static_cast<int64_t>(bb) * hw;
                    for (int k = 0; k < c; ++k) {
                        const T gk = gs[k];
                        const T* fk = F + static_cast<int64_t>(k) * hw;
                        for (int ij = 0; ij < hw; ++ij) gw[ij] += gk * fk[ij];
                    }
                }
                if (visual.requires_grad()) {
                    T* gF = visual.grad_data() + static_cast<int64_t>(bb) * c * hw;
                    for (int k = 0; k < c; ++k) {
                        const T gk = gs[k];
                        T* gfk = gF + static_cast<int64_t>(k) * hw;
                        for (int ij = 0; ij < hw; ++ij) gfk[ij] += gk * wv[ij];
                    }
                }
            }
        });
    return out;
}

/// Attention-based audio-visual fusion: pool the visual map by the scaled
/// similarity map. Returns the pooled representation.
template <class T>
Tensor<T> fuse_attention(const Tensor<T>& audio, const Tensor<T>& visual, ScalingMethod method) {
    return attend_pool(scale_map(similarity_map(audio, visual), method), visual);
}

/// Baseline fusion variants. `concat_proj` is the learned 1x1 convolution the
/// concat mode reduces channels with (2*c_v -> c_v); unused otherwise.
template <class T>
Tensor<T> fuse_baseline(const Tensor<T>& visual, const Tensor<T>& audio, FusionMode mode,
                        ScalingMethod method, const nn::Conv2d<T>* concat_proj = nullptr) {
    switch (mode) {
        case FusionMode::attention:
            return fuse_attention(audio, visual, method);
        case FusionMode::add:
            return add(global_avg_pool(visual), audio);
        case FusionMode::multiply:
            return mul(global_avg_pool(visual), audio);
        case FusionMode::concat: {
            if (!concat_proj) throw ConfigError("fuse_baseline: concat mode needs a projection");
            auto tiled = tile_spatial(audio, visual.dim(2), visual.dim(3));
            return global_avg_pool(concat_proj->forward(concat_channels(visual, tiled)));
        }
    }
    throw ConfigError("fuse_baseline: unsupported mode");
}

inline ScalingMethod scaling_from_string(const std::string& s) {
    if (s == "minmax") return ScalingMethod::minmax;
    if (s == "relu") return ScalingMethod::relu;
    if (s == "sigmoid") return ScalingMethod::sigmoid;
    if (s == "softmax") return ScalingMethod::softmax;
    if (s == "relu_softmax") return ScalingMethod::relu_softmax;
    throw ConfigError("unknown scaling method: " + s);
}

inline FusionMode fusion_from_string(const std::string& s) {
    if (s == "attention") return FusionMode::attention;
    if (s == "concat") return FusionMode::concat;
    if (s == "multiply") return FusionMode::multiply;
    if (s == "add") return FusionMode::add;
    throw ConfigError("unknown fusion mode: " + s);
}

} // namespace sspl
