#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sspl/tensor.hpp"

namespace sspl {

namespace detail {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<MatRM<T>>;
template <class T>
using MapCM = Eigen::Map<const MatRM<T>>;
template <class T>
using MapA = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <class T>
using MapCA = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

// C (+)= A[m,k] * B[k,n], all row-major.
template <class T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    MapCM<T> A(a, m, k);
    MapCM<T> B(b, k, n);
    MapM<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

// C (+)= A[m,k] * B[n,k]^T.
template <class T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    MapCM<T> A(a, m, k);
    MapCM<T> B(b, n, k);
    MapM<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

// C (+)= A[k,m]^T * B[k,n].
template <class T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
    MapCM<T> A(a, k, m);
    MapCM<T> B(b, k, n);
    MapM<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

template <class T>
std::vector<T>& scratch(int which) {
    thread_local std::vector<T> bufs[4];
    return bufs[which];
}

// Unpacks [...,h,w] conv-style shapes; 3D tensors are treated as batch 1.
struct ConvDims {
    int b, c, h, w;
    bool batched;
};

inline ConvDims conv_dims(const std::vector<int>& s, const char* who) {
    if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
    if (s.size() == 3) return {1, s[0], s[1], s[2], false};
    throw DimError(std::string(who) + ": expected 3D [c,h,w] or 4D [b,c,h,w] input");
}

// Number of images whose columns are packed into one GEMM call; bounded so
// the scratch buffer stays cache-friendly (~8M floats).
inline int conv_group(int ckk, int ohw, int batch) {
    const int64_t budget = 8 << 20;
    int g = static_cast<int>(budget / (static_cast<int64_t>(ckk) * ohw));
    return std::max(1, std::min(batch, g));
}

// im2col for cross-correlation with an arbitrary row stride between the
// logical rows of the column matrix: cols[(c*k+dy)*k+dx, :] starts at
// cols + row * row_stride. Writing several images side by side into one wide
// matrix just offsets `cols` per image.
template <class T>
void im2col_strided(const T* x, int c, int h, int w, int k, int stride, int pad, int oh, int ow,
                    T* cols, int64_t row_stride) {
    const int ohw = oh * ow;
    for (int cc = 0; cc < c; ++cc) {
        const T* xc = x + static_cast<int64_t>(cc) * h * w;
        for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
                T* row = cols + (static_cast<int64_t>(cc) * k * k + dy * k + dx) * row_stride;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) row[oy * ow + ox] = T(0);
                        continue;
                    }
                    const T* xr = xc + static_cast<int64_t>(iy) * w;
                    const int lo = std::max(0, (pad - dx + stride - 1) / stride);
                    const int hi = std::min(ow, (w - 1 - dx + pad) / stride + 1);
                    T* out_row = row + oy * ow;
                    for (int ox = 0; ox < lo; ++ox) out_row[ox] = T(0);
                    if (stride == 1) {
                        const T* src = xr + lo + dx - pad;
                        for (int ox = lo; ox < hi; ++ox) out_row[ox] = src[ox - lo];
                    } else {
                        for (int ox = lo; ox < hi; ++ox) out_row[ox] = xr[ox * stride + dx - pad];
                    }
                    for (int ox = hi; ox < ow; ++ox) out_row[ox] = T(0);
                }
            }
        }
    }
    (void)ohw;
}

template <class T>
void col2im_strided(const T* cols, int c, int h, int w, int k, int stride, int pad, int oh, int ow,
                    int64_t row_stride, T* x) {
    for (int cc = 0; cc < c; ++cc) {
        T* xc = x + static_cast<int64_t>(cc) * h * w;
        for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
                const T* row = cols + (static_cast<int64_t>(cc) * k * k + dy * k + dx) * row_stride;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= h) continue;
                    T* xr = xc + static_cast<int64_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + dx - pad;
                        if (ix >= 0 && ix < w) xr[ix] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

// C = A[m,k] * B where B is [k, g*ohw] and C's g image blocks live at
// consecutive [m, ohw] strides (NCHW batch layout).
template <class T>
void gemm_strided_out(const T* a, const T* b, T* c, int m, int k, int g, int ohw) {
    const int64_t wide = static_cast<int64_t>(g) * ohw;
    if (g == 1) {
        gemm_nn(a, b, c, m, k, ohw, false);
        return;
    }
    auto& tmp = scratch<T>(3);
    tmp.resize(static_cast<size_t>(m) * wide);
    gemm_nn(a, b, tmp.data(), m, k, static_cast<int>(wide), false);
    for (int i = 0; i < g; ++i)
        for (int r = 0; r < m; ++r)
            std::copy_n(tmp.data() + static_cast<int64_t>(r) * wide + static_cast<int64_t>(i) * ohw,
                        ohw, c + (static_cast<int64_t>(i) * m + r) * ohw);
}

// im2col for cross-correlation: cols[(c*k+dy)*k+dx, oy*ow+ox].
template <class T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* cols) {
    const int ohw = oh * ow;
    for (int cc = 0; cc < c; ++cc) {
        const T* xc = x + static_cast<int64_t>(cc) * h * w;
        for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
                T* row = cols + (static_cast<int64_t>(cc) * k * k + dy * k + dx) * ohw;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) row[oy * ow + ox] = T(0);
                        continue;
                    }
                    const T* xr = xc + static_cast<int64_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + dx - pad;
                        row[oy * ow + ox] = (ix < 0 || ix >= w) ? T(0) : xr[ix];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: x += fold(cols).
template <class T>
void col2im(const T* cols, int c, int h, int w, int k, int stride, int pad, int oh, int ow, T* x) {
    const int ohw = oh * ow;
    for (int cc = 0; cc < c; ++cc) {
        T* xc = x + static_cast<int64_t>(cc) * h * w;
        for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
                const T* row = cols + (static_cast<int64_t>(cc) * k * k + dy * k + dx) * ohw;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= h) continue;
                    T* xr = xc + static_cast<int64_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + dx - pad;
                        if (ix >= 0 && ix < w) xr[ix] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

template <class T>
inline bool want_record(std::initializer_list<const Tensor<T>*> ins) {
    if (!Tape<T>::recording()) return false;
    for (const Tensor<T>* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimError("add: shape mismatch");
    bool rec = detail::want_record<T>({&a, &b});
    Tensor<T> out = Tensor<T>::zeros(a.shape(), rec);
    const int64_t n = a.size();
    detail::MapA<T>(out.data(), n) = detail::MapCA<T>(a.data(), n) + detail::MapCA<T>(b.data(), n);
    if (rec)
        Tape<T>::current()->record([a, b, out] {
            if (!out.has_grad()) return;
            if (a.requires_grad()) a.accumulate_grad(out.grad_data());
            if (b.requires_grad()) b.accumulate_grad(out.grad_data());
        });
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimError("sub: shape mismatch");
    bool rec = detail::want_record<T>({&a, &b});
    Tensor<T> out = Tensor<T>::zeros(a.shape(), rec);
    const int64_t n = a.size();
    detail::MapA<T>(out.data(), n) = detail::MapCA<T>(a.data(), n) - detail::MapCA<T>(b.data(), n);
    if (rec)
        Tape<T>::current()->record([a, b, out] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            if (a.requires_grad()) a.accumulate_grad(g);
            if (b.requires_grad()) {
                T* gb = b.grad_data();
                for (int64_t i = 0; i < b.size(); ++i) gb[i] -= g[i];
            }
        });
    return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimError("mul: shape mismatch");
    bool rec = detail::want_record<T>({&a, &b});
    Tensor<T> out = Tensor<T>::zeros(a.shape(), rec);
    const int64_t n = a.size();
    detail::MapA<T>(out.data(), n) = detail::MapCA<T>(a.data(), n) * detail::MapCA<T>(b.data(), n);
    if (rec)
        Tape<T>::current()->record([a, b, out] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            if (a.requires_grad()) {
                T* ga = a.grad_data();
                const T* bd = b.data();
                for (int64_t i = 0; i < a.size(); ++i) ga[i] += g[i] * bd[i];
            }
            if (b.requires_grad()) {
                T* gb = b.grad_data();
                const T* ad = a.data();
                for (int64_t i = 0; i < b.size(); ++i) gb[i] += g[i] * ad[i];
            }
        });
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    bool rec = detail::want_record<T>({&a});
    Tensor<T> out = Tensor<T>::zeros(a.shape(), rec);
    const int64_t n = a.size();
    detail::MapA<T>(out.data(), n) = detail::MapCA<T>(a.data(), n) * c;
    if (rec)
        Tape<T>::current()->record([a, out, c] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            T* ga = a.grad_data();
            for (int64_t i = 0; i < a.size(); ++i) ga[i] += c * g[i];
        });
    return out;
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    bool rec = detail::want_record<T>({&a});
    Tensor<T> out = Tensor<T>::zeros(a.shape(), rec);
    const int64_t n = a.size();
    detail::MapA<T>(out.data(), n) = detail::MapCA<T>(a.data(), n) + c;
    if (rec)
        Tape<T>::current()->record([a, out] {
            if (out.has_grad()) a.accumulate_grad(out.grad_data());
        });
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    bool rec = detail::want_record<T>({&a});
    T s = 0;
    const T* ad = a.data();
    for (int64_t i = 0; i < a.size(); ++i) s += ad[i];
    Tensor<T> out = Tensor<T>::scalar(s, rec);
    if (rec)
        Tape<T>::current()->record([a, out] {
            if (!out.has_grad()) return;
            const T g = out.grad_data()[0];
            T* ga = a.grad_data();
            for (int64_t i = 0; i < a.size(); ++i) ga[i] += g;
        });
    return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    const T inv = T(1) / static_cast<T>(a.size());
    return scale(sum(a), inv);
}

template <class T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.size() != b.size()) throw DimError("dot: size mismatch");
    bool rec = detail::want_record<T>({&a, &b});
    T s = 0;
    const T *ad = a.data(), *bd = b.data();
    for (int64_t i = 0; i < a.size(); ++i) s += ad[i] * bd[i];
    Tensor<T> out = Tensor<T>::scalar(s, rec);
    if (rec)
        Tape<T>::current()->record([a, b, out] {
            if (!out.has_grad()) return;
            const T g = out.grad_data()[0];
            if (a.requires_grad()) {
                T* ga = a.grad_data();
                const T* bd2 = b.data();
                for (int64_t i = 0; i < a.size(); ++i) ga[i] += g * bd2[i];
            }
            if (b.requires_grad()) {
                T* gb = b.grad_data();
                const T* ad2 = a.data();
                for (int64_t i = 0; i < b.size(); ++i) gb[i] += g * ad2[i];
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// shape manipulation
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> shape) {
    bool rec = detail::want_record<T>({&a});
    Tensor<T> out = a.detach().reshaped(std::move(shape));
    out.set_requires_grad(rec);
    if (rec)
        Tape<T>::current()->record([a, out] {
            if (out.has_grad()) a.accumulate_grad(out.grad_data());
        });
    return out;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    auto da = detail::conv_dims(a.shape(), "concat_channels");
    auto db = detail::conv_dims(b.shape(), "concat_channels");
    if (da.b != db.b || da.h != db.h || da.w != db.w)
        throw DimError("concat_channels: incompatible shapes");
    bool rec = detail::want_record<T>({&a, &b});
    const int c = da.c + db.c, hw = da.h * da.w;
    std::vector<int> os = da.batched ? std::vector<int>{da.b, c, da.h, da.w}
                                     : std::vector<int>{c, da.h, da.w};
    Tensor<T> out = Tensor<T>::zeros(os, rec);
    for (int bb = 0; bb < da.b; ++bb) {
        std::copy_n(a.data() + static_cast<int64_t>(bb) * da.c * hw, da.c * hw,
                    out.data() + static_cast<int64_t>(bb) * c * hw);
        std::copy_n(b.data() + static_cast<int64_t>(bb) * db.c * hw, db.c * hw,
                    out.data() + static_cast<int64_t>(bb) * c * hw + da.c * hw);
    }
    if (rec)
        Tape<T>::current()->record([a, b, out, da, db, c, hw] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            for (int bb = 0; bb < da.b; ++bb) {
                if (a.requires_grad()) {
                    T* ga = a.grad_data() + static_cast<int64_t>(bb) * da.c * hw;
                    const T* gs = g + static_cast<int64_t>(bb) * c * hw;
                    for (int i = 0; i < da.c * hw; ++i) ga[i] += gs[i];
                }
                if (b.requires_grad()) {
                    T* gb = b.grad_data() + static_cast<int64_t>(bb) * db.c * hw;
                    const T* gs = g + static_cast<int64_t>(bb) * c * hw + da.c * hw;
                    for (int i = 0; i < db.c * hw; ++i) gb[i] += gs[i];
                }
            }
        });
    return out;
}

/// Broadcasts per-sample vectors [b,c] to feature maps [b,c,h,w].
template <class T>
Tensor<T> tile_spatial(const Tensor<T>& v, int h, int w) {
    if (v.ndim() != 2) throw DimError("tile_spatial: expected [b,c]");
    const int b = v.dim(0), c = v.dim(1), hw = h * w;
    bool rec = detail::want_record<T>({&v});
    Tensor<T> out = Tensor<T>::zeros({b, c, h, w}, rec);
    for (int bb = 0; bb < b; ++bb)
        for (int cc = 0; cc < c; ++cc) {
            const T val = v.data()[bb * c + cc];
            T* o = out.data() + (static_cast<int64_t>(bb) * c + cc) * hw;
            for (int i = 0; i < hw; ++i) o[i] = val;
        }
    if (rec)
        Tape<T>::current()->record([v, out, b, c, hw] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            T* gv = v.grad_data();
            for (int bb = 0; bb < b; ++bb)
                for (int cc = 0; cc < c; ++cc) {
                    const T* gs = g + (static_cast<int64_t>(bb) * c + cc) * hw;
                    T acc = 0;
                    for (int i = 0; i < hw; ++i) acc += gs[i];
                    gv[bb * c + cc] += acc;
                }
        });
    return out;
}

/// Spatial mean of [b,c,h,w] (or [c,h,w]) down to [b,c] (or [c]).
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    auto d = detail::conv_dims(x.shape(), "global_avg_pool");
    bool rec = detail::want_record<T>({&x});
    std::vector<int> os = d.batched ? std::vector<int>{d.b, d.c} : std::vector<int>{d.c};
    Tensor<T> out = Tensor<T>::zeros(os, rec);
    const int hw = d.h * d.w;
    const T inv = T(1) / static_cast<T>(hw);
    for (int bc = 0; bc < d.b * d.c; ++bc) {
        const T* xs = x.data() + static_cast<int64_t>(bc) * hw;
        T acc = 0;
        for (int i = 0; i < hw; ++i) acc += xs[i];
        out.data()[bc] = acc * inv;
    }
    if (rec)
        Tape<T>::current()->record([x, out, d, hw, inv] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            T* gx = x.grad_data();
            for (int bc = 0; bc < d.b * d.c; ++bc) {
                const T gv = g[bc] * inv;
                T* gs = gx + static_cast<int64_t>(bc) * hw;
                for (int i = 0; i < hw; ++i) gs[i] += gv;
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw DimError("matmul: expected 2D operands");
    if (a.dim(1) != b.dim(0))
        throw DimError("matmul: inner dimensions disagree, " + Tensor<T>::shape_str(a.shape()) +
                       " x " + Tensor<T>::shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    bool rec = detail::want_record<T>({&a, &b});
    Tensor<T> out = Tensor<T>::zeros({m, n}, rec);
    detail::gemm_nn(a.data(), b.data(), out.data(), m, k, n, false);
    if (rec)
        Tape<T>::current()->record([a, b, out, m, k, n] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            if (a.requires_grad()) detail::gemm_nt(g, b.data(), a.grad_data(), m, n, k, true);
            if (b.requires_grad()) detail::gemm_tn(a.data(), g, b.grad_data(), k, m, n, true);
        });
    return out;
}

/// y = x W^T + bias, with x:[b,in], W:[out,in], bias:[out] (optional).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias = nullptr) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1))
        throw DimError("linear: shape mismatch");
    const int b = x.dim(0), in = x.dim(1), outd = w.dim(0);
    bool rec = bias ? detail::want_record<T>({&x, &w, bias}) : detail::want_record<T>({&x, &w});
    Tensor<T> out = Tensor<T>::zeros({b, outd}, rec);
    detail::gemm_nt(x.data(), w.data(), out.data(), b, in, outd, false);
    if (bias) {
        for (int i = 0; i < b; ++i) {
            T* o = out.data() + static_cast<int64_t>(i) * outd;
            const T* bd = bias->data();
            for (int j = 0; j < outd; ++j) o[j] += bd[j];
        }
    }
    Tensor<T> bias_t = bias ? *bias : Tensor<T>();
    if (rec)
        Tape<T>::current()->record([x, w, bias_t, out, b, in, outd] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            if (x.requires_grad()) detail::gemm_nn(g, w.data(), x.grad_data(), b, outd, in, true);
            if (w.requires_grad()) detail::gemm_tn(g, x.data(), w.grad_data(), outd, b, in, true);
            if (bias_t.defined() && bias_t.requires_grad()) {
                T* gb = bias_t.grad_data();
                for (int i = 0; i < b; ++i)
                    for (int j = 0; j < outd; ++j) gb[j] += g[static_cast<int64_t>(i) * outd + j];
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// Cross-correlation with square kernels [c_out,c_in,k,k].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, int stride = 1, int padding = 0) {
    auto d = detail::conv_dims(x.shape(), "conv2d");
    if (kernels.ndim() != 4 || kernels.dim(2) != kernels.dim(3))
        throw DimError("conv2d: kernels must be [c_out,c_in,k,k]");
    const int co = kernels.dim(0), ci = kernels.dim(1), k = kernels.dim(2);
    if (ci != d.c) throw DimError("conv2d: channel mismatch");
    const int oh_num = d.h + 2 * padding - k, ow_num = d.w + 2 * padding - k;
    if (oh_num < 0 || ow_num < 0 || oh_num % stride || ow_num % stride)
        throw DimError("conv2d: non-integral output size");
    const int oh = oh_num / stride + 1, ow = ow_num / stride + 1;
    const int ohw = oh * ow, ckk = ci * k * k;

    bool rec = detail::want_record<T>({&x, &kernels});
    std::vector<int> os = d.batched ? std::vector<int>{d.b, co, oh, ow}
                                    : std::vector<int>{co, oh, ow};
    Tensor<T> out = Tensor<T>::zeros(os, rec);
    // images are grouped so one GEMM covers a wide column block
    const int group = detail::conv_group(ckk, ohw, d.b);
    auto& cols = detail::scratch<T>(0);
    cols.resize(static_cast<size_t>(ckk) * ohw * group);
    for (int b0 = 0; b0 < d.b; b0 += group) {
        const int g = std::min(group, d.b - b0);
        for (int i = 0; i < g; ++i)
            detail::im2col_strided(x.data() + static_cast<int64_t>(b0 + i) * d.c * d.h * d.w, d.c,
                                   d.h, d.w, k, stride, padding, oh, ow,
                                   cols.data() + static_cast<int64_t>(i) * ohw,
                                   static_cast<int64_t>(g) * ohw);
        detail::gemm_strided_out(kernels.data(), cols.data(),
                                 out.data() + static_cast<int64_t>(b0) * co * ohw, co, ckk, g, ohw);
    }
    if (rec)
        Tape<T>::current()->record([x, kernels, out, d, co, k, stride, padding, oh, ow] {
            if (!out.has_grad()) return;
            const int ohw2 = oh * ow, ckk2 = d.c * k * k;
            const int group2 = detail::conv_group(ckk2, ohw2, d.b);
            auto& cols2 = detail::scratch<T>(0);
            auto& dcols = detail::scratch<T>(1);
            auto& gbuf = detail::scratch<T>(2);
            cols2.resize(static_cast<size_t>(ckk2) * ohw2 * group2);
            dcols.resize(static_cast<size_t>(ckk2) * ohw2 * group2);
            gbuf.resize(static_cast<size_t>(co) * ohw2 * group2);
            const T* g = out.grad_data();
            for (int b0 = 0; b0 < d.b; b0 += group2) {
                const int gn = std::min(group2, d.b - b0);
                // gather the chunk's output gradients into [co, gn*ohw]
                for (int i = 0; i < gn; ++i)
                    for (int c = 0; c < co; ++c)
                        std::copy_n(g + (static_cast<int64_t>(b0 + i) * co + c) * ohw2, ohw2,
                                    gbuf.data() + (static_cast<int64_t>(c) * gn + i) * ohw2);
                const int64_t wide = static_cast<int64_t>(gn) * ohw2;
                if (kernels.requires_grad()) {
                    for (int i = 0; i < gn; ++i)
                        detail::im2col_strided(
                            x.data() + static_cast<int64_t>(b0 + i) * d.c * d.h * d.w, d.c, d.h,
                            d.w, k, stride, padding, oh, ow,
                            cols2.data() + static_cast<int64_t>(i) * ohw2, wide);
                    detail::gemm_nt(gbuf.data(), cols2.data(), kernels.grad_data(), co,
                                    static_cast<int>(wide), ckk2, true);
                }
                if (x.requires_grad()) {
                    detail::gemm_tn(kernels.data(), gbuf.data(), dcols.data(), ckk2, co,
                                    static_cast<int>(wide), false);
                    for (int i = 0; i < gn; ++i)
                        detail::col2im_strided(
                            dcols.data() + static_cast<int64_t>(i) * ohw2, d.c, d.h, d.w, k,
                            stride, padding, oh, ow, wide,
                            x.grad_data() + static_cast<int64_t>(b0 + i) * d.c * d.h * d.w);
                }
            }
        });
    return out;
}

/// Adjoint of conv2d in its input slot: conv_transpose2d(y, K) applied to a
/// conv2d-output-shaped y yields a conv2d-input-shaped tensor, satisfying
/// <conv2d(x,K), y> = <x, conv_transpose2d(y,K)>.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& y, const Tensor<T>& kernels, int stride = 1,
                           int padding = 0) {
    auto d = detail::conv_dims(y.shape(), "conv_transpose2d");
    if (kernels.ndim() != 4 || kernels.dim(2) != kernels.dim(3))
        throw DimError("conv_transpose2d: kernels must be [c_out,c_in,k,k]");
    const int co = kernels.dim(0), ci = kernels.dim(1), k = kernels.dim(2);
    if (co != d.c) throw DimError("conv_transpose2d: channel mismatch");
    const int H = (d.h - 1) * stride + k - 2 * padding;
    const int W = (d.w - 1) * stride + k - 2 * padding;
    if (H <= 0 || W <= 0) throw DimError("conv_transpose2d: degenerate output size");
    const int ohw = d.h * d.w, ckk = ci * k * k;

    bool rec = detail::want_record<T>({&y, &kernels});
    std::vector<int> os = d.batched ? std::vector<int>{d.b, ci, H, W}
                                    : std::vector<int>{ci, H, W};
    Tensor<T> out = Tensor<T>::zeros(os, rec);
    const int group = detail::conv_group(ckk, ohw, d.b);
    auto& cols = detail::scratch<T>(0);
    auto& ybuf = detail::scratch<T>(2);
    cols.resize(static_cast<size_t>(ckk) * ohw * group);
    ybuf.resize(static_cast<size_t>(co) * ohw * group);
    for (int b0 = 0; b0 < d.b; b0 += group) {
        const int g = std::min(group, d.b - b0);
        const int64_t wide = static_cast<int64_t>(g) * ohw;
        for (int i = 0; i < g; ++i)
            for (int c = 0; c < co; ++c)
                std::copy_n(y.data() + (static_cast<int64_t>(b0 + i) * co + c) * ohw, ohw,
                            ybuf.data() + (static_cast<int64_t>(c) * g + i) * ohw);
        detail::gemm_tn(kernels.data(), ybuf.data(), cols.data(), ckk, co,
                        static_cast<int>(wide), false);
        for (int i = 0; i < g; ++i)
            detail::col2im_strided(cols.data() + static_cast<int64_t>(i) * ohw, ci, H, W, k,
                                   stride, padding, d.h, d.w, wide,
                                   out.data() + static_cast<int64_t>(b0 + i) * ci * H * W);
    }
    if (rec)
        Tape<T>::current()->record([y, kernels, out, d, ci, co, k, stride, padding, H, W] {
            if (!out.has_grad()) return;
            const int ohw2 = d.h * d.w, ckk2 = ci * k * k;
            const int group2 = detail::conv_group(ckk2, ohw2, d.b);
            auto& gcols = detail::scratch<T>(0);
            auto& ybuf2 = detail::scratch<T>(2);
            gcols.resize(static_cast<size_t>(ckk2) * ohw2 * group2);
            ybuf2.resize(static_cast<size_t>(co) * ohw2 * group2);
            const T* g = out.grad_data();
            for (int b0 = 0; b0 < d.b; b0 += group2) {
                const int gn = std::min(group2, d.b - b0);
                const int64_t wide = static_cast<int64_t>(gn) * ohw2;
                for (int i = 0; i < gn; ++i)
                    detail::im2col_strided(g + static_cast<int64_t>(b0 + i) * ci * H * W, ci, H, W,
                                           k, stride, padding, d.h, d.w,
                                           gcols.data() + static_cast<int64_t>(i) * ohw2, wide);
                if (y.requires_grad()) {
                    // dy = K * im2col(dout), scattered back to the NCHW blocks
                    auto& tmp = detail::scratch<T>(3);
                    tmp.resize(static_cast<size_t>(co) * wide);
                    detail::gemm_nn(kernels.data(), gcols.data(), tmp.data(), co, ckk2,
                                    static_cast<int>(wide), false);
                    T* gy = y.grad_data();
                    for (int i = 0; i < gn; ++i)
                        for (int c = 0; c < co; ++c) {
                            const T* src =
                                tmp.data() + (static_cast<int64_t>(c) * gn + i) * ohw2;
                            T* dst = gy + (static_cast<int64_t>(b0 + i) * co + c) * ohw2;
                            for (int j = 0; j < ohw2; ++j) dst[j] += src[j];
                        }
                }
                if (kernels.requires_grad()) {
                    for (int i = 0; i < gn; ++i)
                        for (int c = 0; c < co; ++c)
                            std::copy_n(y.data() + (static_cast<int64_t>(b0 + i) * co + c) * ohw2,
                                        ohw2,
                                        ybuf2.data() + (static_cast<int64_t>(c) * gn + i) * ohw2);
                    detail::gemm_nt(ybuf2.data(), gcols.data(), kernels.grad_data(), co,
                                    static_cast<int>(wide), ckk2, true);
                }
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// pooling and resizing
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> max_pool2x2(const Tensor<T>& x) {
    auto d = detail::conv_dims(x.shape(), "max_pool2x2");
    if (d.h % 2 || d.w % 2) throw DimError("max_pool2x2: spatial dims must be even");
    const int oh = d.h / 2, ow = d.w / 2;
    bool rec = detail::want_record<T>({&x});
    std::vector<int> os = d.batched ? std::vector<int>{d.b, d.c, oh, ow}
                                    : std::vector<int>{d.c, oh, ow};
    Tensor<T> out = Tensor<T>::zeros(os, rec);
    auto argmax = std::make_shared<std::vector<int32_t>>(out.size());
    for (int bc = 0; bc < d.b * d.c; ++bc) {
        const T* xs = x.data() + static_cast<int64_t>(bc) * d.h * d.w;
        T* o = out.data() + static_cast<int64_t>(bc) * oh * ow;
        int32_t* am = argmax->data() + static_cast<int64_t>(bc) * oh * ow;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                int best = (2 * oy) * d.w + 2 * ox;
                T bv = xs[best];
                const int cands[3] = {(2 * oy) * d.w + 2 * ox + 1, (2 * oy + 1) * d.w + 2 * ox,
                                      (2 * oy + 1) * d.w + 2 * ox + 1};
                for (int cand : cands)
                    if (xs[cand] > bv) { // first max wins on ties
                        bv = xs[cand];
                        best = cand;
                    }
                o[oy * ow + ox] = bv;
                am[oy * ow + ox] = best;
            }
    }
    if (rec)
        Tape<T>::current()->record([x, out, argmax, d, oh, ow] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            T* gx = x.grad_data();
            for (int bc = 0; bc < d.b * d.c; ++bc) {
                const T* gs = g + static_cast<int64_t>(bc) * oh * ow;
                const int32_t* am = argmax->data() + static_cast<int64_t>(bc) * oh * ow;
                T* gxs = gx + static_cast<int64_t>(bc) * d.h * d.w;
                for (int i = 0; i < oh * ow; ++i) gxs[am[i]] += gs[i];
            }
        });
    return out;
}

namespace detail {
// Sample positions for align-corners-false bilinear interpolation.
inline void bilinear_axis(int in, int out, std::vector<int>& i0, std::vector<int>& i1,
                          std::vector<double>& w1) {
    i0.resize(out);
    i1.resize(out);
    w1.resize(out);
    const double r = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * r - 0.5;
        if (src < 0) src = 0;
        if (src > in - 1) src = in - 1;
        int lo = static_cast<int>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        i0[o] = lo;
        i1[o] = std::min(lo + 1, in - 1);
        w1[o] = src - lo;
    }
}
} // namespace detail

/// Bilinear resize with the align-corners-false convention (sample centers at
/// (i+0.5)/n); constant maps stay constant.
template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int out_h, int out_w) {
    auto d = detail::conv_dims(x.shape(), "bilinear_resize");
    bool rec = detail::want_record<T>({&x});
    std::vector<int> os = d.batched ? std::vector<int>{d.b, d.c, out_h, out_w}
                                    : std::vector<int>{d.c, out_h, out_w};
    Tensor<T> out = Tensor<T>::zeros(os, rec);
    std::vector<int> y0, y1, x0, x1;
    std::vector<double> wy, wx;
    detail::bilinear_axis(d.h, out_h, y0, y1, wy);
    detail::bilinear_axis(d.w, out_w, x0, x1, wx);
    for (int bc = 0; bc < d.b * d.c; ++bc) {
        const T* xs = x.data() + static_cast<int64_t>(bc) * d.h * d.w;
        T* o = out.data() + static_cast<int64_t>(bc) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                const double fy = wy[oy], fx = wx[ox];
                const double v = (1 - fy) * ((1 - fx) * xs[y0[oy] * d.w + x0[ox]] +
                                             fx * xs[y0[oy] * d.w + x1[ox]]) +
                                 fy * ((1 - fx) * xs[y1[oy] * d.w + x0[ox]] +
                                       fx * xs[y1[oy] * d.w + x1[ox]]);
                o[oy * out_w + ox] = static_cast<T>(v);
            }
    }
    if (rec)
        Tape<T>::current()->record([x, out, d, out_h, out_w] {
            if (!out.has_grad()) return;
            std::vector<int> y0b, y1b, x0b, x1b;
            std::vector<double> wyb, wxb;
            detail::bilinear_axis(d.h, out_h, y0b, y1b, wyb);
            detail::bilinear_axis(d.w, out_w, x0b, x1b, wxb);
            const T* g = out.grad_data();
            T* gx = x.grad_data();
            for (int bc = 0; bc < d.b * d.c; ++bc) {
                const T* gs = g + static_cast<int64_t>(bc) * out_h * out_w;
                T* gxs = gx + static_cast<int64_t>(bc) * d.h * d.w;
                for (int oy = 0; oy < out_h; ++oy)
                    for (int ox = 0; ox < out_w; ++ox) {
                        const double fy = wyb[oy], fx = wxb[ox];
                        const T gv = gs[oy * out_w + ox];
                        gxs[y0b[oy] * d.w + x0b[ox]] += static_cast<T>((1 - fy) * (1 - fx)) * gv;
                        gxs[y0b[oy] * d.w + x1b[ox]] += static_cast<T>((1 - fy) * fx) * gv;
                        gxs[y1b[oy] * d.w + x0b[ox]] += static_cast<T>(fy * (1 - fx)) * gv;
                        gxs[y1b[oy] * d.w + x1b[ox]] += static_cast<T>(fy * fx) * gv;
                    }
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    bool rec = detail::want_record<T>({&x});
    Tensor<T> out = Tensor<T>::zeros(x.shape(), rec);
    const int64_t n = x.size();
    detail::MapA<T>(out.data(), n) = detail::MapCA<T>(x.data(), n).max(T(0));
    if (rec)
        Tape<T>::current()->record([x, out] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            const T* xd = x.data();
            T* gx = x.grad_data();
            for (int64_t i = 0; i < x.size(); ++i)
                if (xd[i] > T(0)) gx[i] += g[i];
        });
    return out;
}

namespace detail {
template <class T>
inline constexpr T kGeluC0 = T(0.7978845608028654); // sqrt(2/pi)
template <class T>
inline constexpr T kGeluC1 = T(0.044715);
} // namespace detail

/// GELU in the tanh approximation (closed-form derivative, |err| < 1e-3 vs the
/// erf form over the working range).
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    bool rec = detail::want_record<T>({&x});
    Tensor<T> out = Tensor<T>::zeros(x.shape(), rec);
    const int64_t n = x.size();
    detail::MapCA<T> xa(x.data(), n);
    detail::MapA<T> oa(out.data(), n);
    oa = T(0.5) * xa *
         (T(1) + (detail::kGeluC0<T> * (xa + detail::kGeluC1<T> * xa.cube())).tanh());
    if (rec)
        Tape<T>::current()->record([x, out] {
            if (!out.has_grad()) return;
            const int64_t m = x.size();
            detail::MapCA<T> xb(x.data(), m);
            detail::MapCA<T> gb(out.grad_data(), m);
            Eigen::Array<T, Eigen::Dynamic, 1> t =
                (detail::kGeluC0<T> * (xb + detail::kGeluC1<T> * xb.cube())).tanh();
            detail::MapA<T> gx(x.grad_data(), m);
            gx += gb * (T(0.5) * (T(1) + t) +
                        T(0.5) * xb * (T(1) - t.square()) *
                            (detail::kGeluC0<T> *
                             (T(1) + T(3) * detail::kGeluC1<T> * xb.square())));
        });
    return out;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    bool rec = detail::want_record<T>({&x});
    Tensor<T> out = Tensor<T>::zeros(x.shape(), rec);
    const int64_t n = x.size();
    detail::MapA<T>(out.data(), n) =
        T(1) / (T(1) + (-detail::MapCA<T>(x.data(), n)).exp());
    if (rec)
        Tape<T>::current()->record([x, out] {
            if (!out.has_grad()) return;
            const int64_t m = x.size();
            detail::MapCA<T> y(out.data(), m);
            detail::MapCA<T> g(out.grad_data(), m);
            detail::MapA<T> gx(x.grad_data(), m);
            gx += g * y * (T(1) - y);
        });
    return out;
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
    bool rec = detail::want_record<T>({&x});
    Tensor<T> out = Tensor<T>::zeros(x.shape(), rec);
    const int64_t n = x.size();
    // log1p(exp(x)) with the large-x branch kept linear for stability
    for (int64_t i = 0; i < n; ++i) {
        const T v = x.data()[i];
        out.data()[i] = v > T(20) ? v : std::log1p(std::exp(v));
    }
    if (rec)
        Tape<T>::current()->record([x, out] {
            if (!out.has_grad()) return;
            const int64_t m = x.size();
            detail::MapCA<T> xb(x.data(), m);
            detail::MapCA<T> g(out.grad_data(), m);
            detail::MapA<T> gx(x.grad_data(), m);
            gx += g * (T(1) / (T(1) + (-xb).exp()));
        });
    return out;
}

template <class T>
Tensor<T> tanh_act(const Tensor<T>& x) {
    bool rec = detail::want_record<T>({&x});
    Tensor<T> out = Tensor<T>::zeros(x.shape(), rec);
    const int64_t n = x.size();
    detail::MapA<T>(out.data(), n) = detail::MapCA<T>(x.data(), n).tanh();
    if (rec)
        Tape<T>::current()->record([x, out] {
            if (!out.has_grad()) return;
            const int64_t m = x.size();
            detail::MapCA<T> y(out.data(), m);
            detail::MapCA<T> g(out.grad_data(), m);
            detail::MapA<T> gx(x.grad_data(), m);
            gx += g * (T(1) - y.square());
        });
    return out;
}

/// Softmax over groups of `group` consecutive elements (one group = one map).
/// With group == size this is a softmax over all entries.
template <class T>
Tensor<T> softmax_groups(const Tensor<T>& x, int64_t group) {
    if (group <= 0 || x.size() % group) throw DimError("softmax_groups: bad group size");
    bool rec = detail::want_record<T>({&x});
    Tensor<T> out = Tensor<T>::zeros(x.shape(), rec);
    const int64_t rows = x.size() / group;
    for (int64_t r = 0; r < rows; ++r) {
        const T* xs = x.data() + r * group;
        T* o = out.data() + r * group;
        T m = xs[0];
        for (int64_t i = 1; i < group; ++i) m = std::max(m, xs[i]);
        T s = 0;
        for (int64_t i = 0; i < group; ++i) {
            o[i] = std::exp(xs[i] - m);
            s += o[i];
        }
        const T inv = T(1) / s;
        for (int64_t i = 0; i < group; ++i) o[i] *= inv;
    }
    if (rec)
        Tape<T>::current()->record([x, out, group] {
            if (!out.has_grad()) return;
            const int64_t rows2 = x.size() / group;
            const T* g = out.grad_data();
            T* gx = x.grad_data();
            for (int64_t r = 0; r < rows2; ++r) {
                const T* y = out.data() + r * group;
                const T* gs = g + r * group;
                T dotgy = 0;
                for (int64_t i = 0; i < group; ++i) dotgy += gs[i] * y[i];
                T* gxs = gx + r * group;
                for (int64_t i = 0; i < group; ++i) gxs[i] += y[i] * (gs[i] - dotgy);
            }
        });
    return out;
}

template <class T>
Tensor<T> softmax_all(const Tensor<T>& x) {
    return softmax_groups(x, x.size());
}

// ---------------------------------------------------------------------------
// normalization and similarity
// ---------------------------------------------------------------------------

inline constexpr double kNormEps = 1e-8; // added to every norm denominator

/// Per-channel standardization over (batch, spatial) with learnable affine.
/// Training mode requires batch >= 2, normalizes with biased variance and
/// updates running statistics with unbiased variance; inference mode applies
/// the running statistics. Running stats are [c] tensors treated as plain
/// state (never recorded).
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>* running_mean, Tensor<T>* running_var, bool training,
                     T momentum = T(0.1), T eps = T(1e-5)) {
    if (x.ndim() != 4 && x.ndim() != 2) throw DimError("batch_norm: expected [b,c,h,w] or [b,c]");
    const int b = x.dim(0);
    const int c = x.dim(1);
    const int hw = x.ndim() == 4 ? x.dim(2) * x.dim(3) : 1;
    if (gamma.size() != c || beta.size() != c) throw DimError("batch_norm: affine size mismatch");
    if (training && b < 2) throw ConfigError("batch_norm: training mode requires batch >= 2");
    if (!training && (!running_mean || !running_var))
        throw ConfigError("batch_norm: inference mode requires running statistics");

    bool rec = detail::want_record<T>({&x, &gamma, &beta});
    Tensor<T> out = Tensor<T>::zeros(x.shape(), rec);
    const int64_t n_reduce = static_cast<int64_t>(b) * hw;
    auto mean_c = std::make_shared<std::vector<T>>(c);
    auto invstd_c = std::make_shared<std::vector<T>>(c);

    if (training) {
        for (int cc = 0; cc < c; ++cc) {
            T m = 0;
            for (int bb = 0; bb < b; ++bb)
                m += detail::MapCA<T>(x.data() + (static_cast<int64_t>(bb) * c + cc) * hw, hw)
                         .sum();
            m /= static_cast<T>(n_reduce);
            T v = 0;
            for (int bb = 0; bb < b; ++bb)
                v += (detail::MapCA<T>(x.data() + (static_cast<int64_t>(bb) * c + cc) * hw, hw) - m)
                         .square()
                         .sum();
            v /= static_cast<T>(n_reduce);
            (*mean_c)[cc] = m;
            (*invstd_c)[cc] = T(1) / std::sqrt(v + eps);
            if (running_mean && running_var) {
                const T unbiased =
                    n_reduce > 1 ? v * static_cast<T>(n_reduce) / static_cast<T>(n_reduce - 1) : v;
                running_mean->data()[cc] = (T(1) - momentum) * running_mean->data()[cc] + momentum * m;
                running_var->data()[cc] =
                    (T(1) - momentum) * running_var->data()[cc] + momentum * unbiased;
            }
        }
    } else {
        for (int cc = 0; cc < c; ++cc) {
            (*mean_c)[cc] = running_mean->data()[cc];
            (*invstd_c)[cc] = T(1) / std::sqrt(running_var->data()[cc] + eps);
        }
    }

    for (int bb = 0; bb < b; ++bb)
        for (int cc = 0; cc < c; ++cc) {
            const T m = (*mean_c)[cc], is = (*invstd_c)[cc];
            const T gm = gamma.data()[cc], bt = beta.data()[cc];
            const int64_t off = (static_cast<int64_t>(bb) * c + cc) * hw;
            detail::MapA<T>(out.data() + off, hw) =
                (detail::MapCA<T>(x.data() + off, hw) - m) * (is * gm) + bt;
        }

    if (rec)
        Tape<T>::current()->record([x, gamma, beta, out, mean_c, invstd_c, b, c, hw, n_reduce,
                                    training] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            for (int cc = 0; cc < c; ++cc) {
                const T m = (*mean_c)[cc], is = (*invstd_c)[cc];
                T sum_g = 0, sum_gx = 0;
                for (int bb = 0; bb < b; ++bb) {
                    const int64_t off = (static_cast<int64_t>(bb) * c + cc) * hw;
                    detail::MapCA<T> gs(g + off, hw);
                    detail::MapCA<T> xs(x.data() + off, hw);
                    sum_g += gs.sum();
                    sum_gx += (gs * (xs - m)).sum() * is;
                }
                if (beta.requires_grad()) beta.grad_data()[cc] += sum_g;
                if (gamma.requires_grad()) gamma.grad_data()[cc] += sum_gx;
                if (x.requires_grad()) {
                    const T gm = gamma.data()[cc];
                    const T mean_g = sum_g / static_cast<T>(n_reduce);
                    const T mean_gx = sum_gx / static_cast<T>(n_reduce);
                    for (int bb = 0; bb < b; ++bb) {
                        const int64_t off = (static_cast<int64_t>(bb) * c + cc) * hw;
                        detail::MapCA<T> gs(g + off, hw);
                        detail::MapCA<T> xs(x.data() + off, hw);
                        detail::MapA<T> gx(x.grad_data() + off, hw);
                        if (training)
                            gx += (gm * is) * (gs - mean_g - (xs - m) * is * mean_gx);
                        else
                            gx += (gm * is) * gs;
                    }
                }
            }
        });
    return out;
}

/// Cosine similarity of two equal-length vectors; the denominator carries a
/// 1e-8 epsilon so degenerate inputs stay finite.
template <class T>
Tensor<T> cosine_sim(const Tensor<T>& u, const Tensor<T>& v) {
    if (u.size() != v.size()) throw DimError("cosine_sim: size mismatch");
    bool rec = detail::want_record<T>({&u, &v});
    const int64_t n = u.size();
    T nu = 0, nv = 0, d = 0;
    const T *ud = u.data(), *vd = v.data();
    for (int64_t i = 0; i < n; ++i) {
        nu += ud[i] * ud[i];
        nv += vd[i] * vd[i];
        d += ud[i] * vd[i];
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    const T den = nu * nv + static_cast<T>(kNormEps);
    const T s = d / den;
    Tensor<T> out = Tensor<T>::scalar(s, rec);
    if (rec)
        Tape<T>::current()->record([u, v, out, nu, nv, den, s] {
            if (!out.has_grad()) return;
            const T g = out.grad_data()[0];
            const int64_t m = u.size();
            if (u.requires_grad()) {
                T* gu = u.grad_data();
                const T f = nu > T(0) ? s * nv / (nu * den) : T(0);
                for (int64_t i = 0; i < m; ++i) gu[i] += g * (v.data()[i] / den - f * u.data()[i]);
            }
            if (v.requires_grad()) {
                T* gv = v.grad_data();
                const T f = nv > T(0) ? s * nu / (nv * den) : T(0);
                for (int64_t i = 0; i < m; ++i) gv[i] += g * (u.data()[i] / den - f * v.data()[i]);
            }
        });
    return out;
}

/// Row-wise cosine similarity for batches: [b,d] x [b,d] -> [b].
template <class T>
Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || a.shape() != b.shape()) throw DimError("cosine_rows: shape mismatch");
    const int rows = a.dim(0), d = a.dim(1);
    bool rec = detail::want_record<T>({&a, &b});
    Tensor<T> out = Tensor<T>::zeros({rows}, rec);
    auto na = std::make_shared<std::vector<T>>(rows);
    auto nb = std::make_shared<std::vector<T>>(rows);
    for (int r = 0; r < rows; ++r) {
        const T *u = a.data() + static_cast<int64_t>(r) * d, *v = b.data() + static_cast<int64_t>(r) * d;
        T pu = 0, pv = 0, pd = 0;
        for (int i = 0; i < d; ++i) {
            pu += u[i] * u[i];
            pv += v[i] * v[i];
            pd += u[i] * v[i];
        }
        (*na)[r] = std::sqrt(pu);
        (*nb)[r] = std::sqrt(pv);
        out.data()[r] = pd / ((*na)[r] * (*nb)[r] + static_cast<T>(kNormEps));
    }
    if (rec)
        Tape<T>::current()->record([a, b, out, na, nb, rows, d] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            for (int r = 0; r < rows; ++r) {
                const T nu = (*na)[r], nv = (*nb)[r];
                const T den = nu * nv + static_cast<T>(kNormEps);
                const T s = out.data()[r];
                const T* u = a.data() + static_cast<int64_t>(r) * d;
                const T* v = b.data() + static_cast<int64_t>(r) * d;
                if (a.requires_grad()) {
                    T* gu = a.grad_data() + static_cast<int64_t>(r) * d;
                    const T f = nu > T(0) ? s * nv / (nu * den) : T(0);
                    for (int i = 0; i < d; ++i) gu[i] += g[r] * (v[i] / den - f * u[i]);
                }
                if (b.requires_grad()) {
                    T* gv = b.grad_data() + static_cast<int64_t>(r) * d;
                    const T f = nv > T(0) ? s * nu / (nv * den) : T(0);
                    for (int i = 0; i < d; ++i) gv[i] += g[r] * (u[i] / den - f * v[i]);
                }
            }
        });
    return out;
}

/// Forward identity whose reverse pass contributes exactly zero upstream.
template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
    return x.detach();
}

/// x + bias broadcast over channels: x is [b,c,h,w] or [c,h,w], bias is [c].
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    auto d = detail::conv_dims(x.shape(), "add_channel_bias");
    if (bias.size() != d.c) throw DimError("add_channel_bias: channel mismatch");
    bool rec = detail::want_record<T>({&x, &bias});
    Tensor<T> out = Tensor<T>::zeros(x.shape(), rec);
    const int hw = d.h * d.w;
    for (int bb = 0; bb < d.b; ++bb)
        for (int cc = 0; cc < d.c; ++cc) {
            const T bv = bias.data()[cc];
            const T* xs = x.data() + (static_cast<int64_t>(bb) * d.c + cc) * hw;
            T* o = out.data() + (static_cast<int64_t>(bb) * d.c + cc) * hw;
            for (int i = 0; i < hw; ++i) o[i] = xs[i] + bv;
        }
    if (rec)
        Tape<T>::current()->record([x, bias, out, d, hw] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            if (x.requires_grad()) x.accumulate_grad(g);
            if (bias.requires_grad()) {
                T* gb = bias.grad_data();
                for (int bb = 0; bb < d.b; ++bb)
                    for (int cc = 0; cc < d.c; ++cc) {
                        const T* gs = g + (static_cast<int64_t>(bb) * d.c + cc) * hw;
                        T acc = 0;
                        for (int i = 0; i < hw; ++i) acc += gs[i];
                        gb[cc] += acc;
                    }
            }
        });
    return out;
}

/// x * s where s is a differentiable scalar tensor.
template <class T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.size() != 1) throw DimError("scale_by: scale must be scalar");
    bool rec = detail::want_record<T>({&x, &s});
    Tensor<T> out = Tensor<T>::zeros(x.shape(), rec);
    const T sv = s.data()[0];
    const int64_t n = x.size();
    detail::MapA<T>(out.data(), n) = detail::MapCA<T>(x.data(), n) * sv;
    if (rec)
        Tape<T>::current()->record([x, s, out, sv] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            if (x.requires_grad()) {
                T* gx = x.grad_data();
                for (int64_t i = 0; i < x.size(); ++i) gx[i] += sv * g[i];
            }
            if (s.requires_grad()) {
                T acc = 0;
                const T* xd = x.data();
                for (int64_t i = 0; i < x.size(); ++i) acc += g[i] * xd[i];
                s.grad_data()[0] += acc;
            }
        });
    return out;
}

/// Selects one element as a scalar tensor (gradient routes to that slot).
template <class T>
Tensor<T> select(const Tensor<T>& x, int64_t index) {
    if (index < 0 || index >= x.size()) throw DimError("select: index out of range");
    bool rec = detail::want_record<T>({&x});
    Tensor<T> out = Tensor<T>::scalar(x.data()[index], rec);
    if (rec)
        Tape<T>::current()->record([x, out, index] {
            if (out.has_grad() && x.requires_grad()) x.grad_data()[index] += out.grad_data()[0];
        });
    return out;
}

/// Row-wise l2 normalization of [b,d]; denominators carry the 1e-8 epsilon.
template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
    if (x.ndim() != 2) throw DimError("l2_normalize_rows: expected [b,d]");
    const int rows = x.dim(0), d = x.dim(1);
    bool rec = detail::want_record<T>({&x});
    Tensor<T> out = Tensor<T>::zeros(x.shape(), rec);
    auto norms = std::make_shared<std::vector<T>>(rows);
    for (int r = 0; r < rows; ++r) {
        const T* xs = x.data() + static_cast<int64_t>(r) * d;
        T n2 = 0;
        for (int i = 0; i < d; ++i) n2 += xs[i] * xs[i];
        const T n = std::sqrt(n2);
        (*norms)[r] = n;
        const T inv = T(1) / (n + static_cast<T>(kNormEps));
        T* o = out.data() + static_cast<int64_t>(r) * d;
        for (int i = 0; i < d; ++i) o[i] = xs[i] * inv;
    }
    if (rec)
        Tape<T>::current()->record([x, out, norms, rows, d] {
            if (!out.has_grad()) return;
            const T* g = out.grad_data();
            T* gx = x.grad_data();
            for (int r = 0; r < rows; ++r) {
                const T n = (*norms)[r];
                const T m = n + static_cast<T>(kNormEps);
                const T* xs = x.data() + static_cast<int64_t>(r) * d;
                const T* gs = g + static_cast<int64_t>(r) * d;
                T gdotx = 0;
                for (int i = 0; i < d; ++i) gdotx += gs[i] * xs[i];
                const T f = n > T(0) ? gdotx / (m * m * n) : T(0);
                T* gxs = gx + static_cast<int64_t>(r) * d;
                for (int i = 0; i < d; ++i) gxs[i] += gs[i] / m - f * xs[i];
            }
        });
    return out;
}

} // namespace sspl
