#pragma once

#include <functional>
#include <vector>

#include "sspl/ops.hpp"

namespace sspl {

/// The symmetric objective's value and its directed halves, plus the collapse
/// statistic of the projections it was computed from.
template <class T>
struct LossReport {
    Tensor<T> total;   // scalar, on the tape
    T term_12 = 0;     // mean of -cos(Pred(z1), SG(z2))
    T term_21 = 0;
    T collapse = 0;    // collapse statistic of z1's batch
};

/// Negative cosine similarity, batch-averaged: -mean_i cos(pred(z1)_i, z2_i).
/// The caller passes the target already wrapped in stop_gradient where the
/// symmetric loss requires it.
template <class T>
Tensor<T> ncs_loss(const std::function<Tensor<T>(const Tensor<T>&)>& pred,
                   const Tensor<T>& z_pred_side, const Tensor<T>& z_target) {
    return scale(mean(cosine_rows(pred(z_pred_side), z_target)), T(-1));
}

/// Per-dimension standard deviation of l2-normalized embeddings, averaged over
/// dimensions. Healthy batches sit near 1/sqrt(d); collapsed ones near 0.
/// Diagnostic only (no gradient).
template <class T>
T collapse_metric(const Tensor<T>& z_batch) {
    if (z_batch.ndim() != 2) throw UsageError("collapse_metric: expected [b,d]");
    const int b = z_batch.dim(0), d = z_batch.dim(1);
    if (b < 2) throw UsageError("collapse_metric: needs at least two rows");
    std::vector<T> normed(static_cast<size_t>(b) * d);
    for (int r = 0; r < b; ++r) {
        const T* zs = z_batch.data() + static_cast<int64_t>(r) * d;
        T n2 = 0;
        for (int i = 0; i < d; ++i) n2 += zs[i] * zs[i];
        const T inv = T(1) / (std::sqrt(n2) + static_cast<T>(kNormEps));
        for (int i = 0; i < d; ++i) normed[static_cast<size_t>(r) * d + i] = zs[i] * inv;
    }
    T acc = 0;
    for (int i = 0; i < d; ++i) {
        T m = 0;
        for (int r = 0; r < b; ++r) m += normed[static_cast<size_t>(r) * d + i];
        m /= static_cast<T>(b);
        T v = 0;
        for (int r = 0; r < b; ++r) {
            const T dv = normed[static_cast<size_t>(r) * d + i] - m;
            v += dv * dv;
        }
        acc += std::sqrt(v / static_cast<T>(b - 1));
    }
    return acc / static_cast<T>(d);
}

/// The symmetric stop-gradient objective:
/// 1/2 NCS(z1, SG(z2)) + 1/2 NCS(z2, SG(z1)). With `use_stop_gradient` off the
/// targets stay on the tape (the collapsing variant used for ablation).
template <class T>
LossReport<T> sspl_loss(const std::function<Tensor<T>(const Tensor<T>&)>& pred,
                        const Tensor<T>& z1, const Tensor<T>& z2,
                        bool use_stop_gradient = true) {
    Tensor<T> t12 = ncs_loss<T>(pred, z1, use_stop_gradient ? stop_gradient(z2) : z2);
    Tensor<T> t21 = ncs_loss<T>(pred, z2, use_stop_gradient ? stop_gradient(z1) : z1);
    LossReport<T> rep;
    rep.term_12 = t12.item();
    rep.term_21 = t21.item();
    rep.total = scale(add(t12, t21), T(0.5));
    rep.collapse = collapse_metric(z1.detach());
    return rep;
}

/// Symmetrized InfoNCE over a batch of paired embeddings (the global
/// contrastive baseline). `exclude_mask`, when given, is a b*b row-major
/// boolean table marking pairs to EXCLUDE from the negative set (same-class
/// pairs in the label-controlled regime); the diagonal is always the positive.
/// Anchors whose negative set is empty are skipped and counted.
template <class T>
Tensor<T> infonce_baseline(const Tensor<T>& z_v, const Tensor<T>& z_a, T temperature,
                           const std::vector<uint8_t>* exclude_mask = nullptr,
                           int* skipped_anchors = nullptr) {
    if (z_v.ndim() != 2 || z_v.shape() != z_a.shape())
        throw DimError("infonce_baseline: expected matching [b,d] batches");
    const int b = z_v.dim(0);
    if (b < 2) throw UsageError("infonce_baseline: batch must be >= 2");
    if (exclude_mask && exclude_mask->size() != static_cast<size_t>(b) * b)
        throw DimError("infonce_baseline: mask must be b*b");

    Tensor<T> u = l2_normalize_rows(z_v);
    Tensor<T> v = l2_normalize_rows(z_a);

    bool rec = detail::want_record<T>({&u, &v});
    const int d = z_v.dim(1);
    const T inv_tau = T(1) / temperature;

    // logits[i,j] = <u_i, v_j> / tau
    std::vector<T> logits(static_cast<size_t>(b) * b);
    detail::gemm_nt(u.data(), v.data(), logits.data(), b, d, b, false);
    for (T& x : logits) x *= inv_tau;

    auto allowed = [&](int anchor, int cand, bool v_anchor) {
        if (anchor == cand) return true;
        const size_t idx = v_anchor ? static_cast<size_t>(anchor) * b + cand
                                    : static_cast<size_t>(cand) * b + anchor;
        return !exclude_mask || !(*exclude_mask)[idx];
    };

    // dL/dlogits accumulated across both directions.
    auto dlogits = std::make_shared<std::vector<T>>(static_cast<size_t>(b) * b, T(0));
    std::vector<uint8_t> skipped_sample(b, 0);
    T total = 0;
    for (int dir = 0; dir < 2; ++dir) {
        const bool v_anchor = dir == 0;
        std::vector<int> active;
        for (int i = 0; i < b; ++i) {
            int negs = 0;
            for (int j = 0; j < b; ++j)
                if (j != i && allowed(i, j, v_anchor)) ++negs;
            if (negs == 0) {
                skipped_sample[i] = 1;
                continue;
            }
            active.push_back(i);
        }
        if (active.empty()) continue;
        const T wa = T(1) / (T(2) * static_cast<T>(active.size()));
        for (int i : active) {
            // stable log-sum-exp over the allowed candidate set
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < b; ++j)
                if (allowed(i, j, v_anchor))
                    mx = std::max(mx, v_anchor ? logits[static_cast<size_t>(i) * b + j]
                                               : logits[static_cast<size_t>(j) * b + i]);
            T z = 0;
            for (int j = 0; j < b; ++j)
                if (allowed(i, j, v_anchor))
                    z += std::exp((v_anchor ? logits[static_cast<size_t>(i) * b + j]
                                            : logits[static_cast<size_t>(j) * b + i]) -
                                  mx);
            const T l_pos = logits[static_cast<size_t>(i) * b + i];
            total += wa * (std::log(z) + mx - l_pos);
            for (int j = 0; j < b; ++j) {
                if (!allowed(i, j, v_anchor)) continue;
                const T lij = v_anchor ? logits[static_cast<size_t>(i) * b + j]
                                       : logits[static_cast<size_t>(j) * b + i];
                const T p = std::exp(lij - mx) / z;
                const T gval = wa * (p - (j == i ? T(1) : T(0)));
                if (v_anchor)
                    (*dlogits)[static_cast<size_t>(i) * b + j] += gval;
                else
                    (*dlogits)[static_cast<size_t>(j) * b + i] += gval;
            }
        }
    }
    if (skipped_anchors) {
        int skipped = 0;
        for (uint8_t s : skipped_sample) skipped += s;
        *skipped_anchors = skipped;
    }

    Tensor<T> out = Tensor<T>::scalar(total, rec);
    if (rec)
        Tape<T>::current()->record([u, v, out, dlogits, b, d, inv_tau] {
            if (!out.has_grad()) return;
            const T g = out.grad_data()[0];
            std::vector<T> dl(static_cast<size_t>(b) * b);
            for (size_t i = 0; i < dl.size(); ++i) dl[i] = g * (*dlogits)[i] * inv_tau;
            if (u.requires_grad()) detail::gemm_nn(dl.data(), v.data(), u.grad_data(), b, b, d, true);
            if (v.requires_grad()) detail::gemm_tn(dl.data(), u.data(), v.grad_data(), b, b, d, true);
        });
    return out;
}

} // namespace sspl
