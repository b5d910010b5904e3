#pragma once

#include <cmath>
#include <vector>

#include "sspl/nn.hpp"

namespace sspl {

/// Adaptive-moment optimizer with decoupled weight decay: parameters first
/// shrink by lr*wd, then step along the bias-corrected moment estimate.
/// Parameters are grouped so heads and backbone can run at different rates;
/// moment buffers follow registration order, which makes them checkpointable.
template <class T>
class AdamW {
public:
    AdamW(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8), T weight_decay = T(1e-4))
        : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

    void add_group(const std::vector<Tensor<T>>& params, T lr) {
        for (const auto& p : params) {
            entries_.push_back({p, lr});
            m_.emplace_back(p.size(), T(0));
            v_.emplace_back(p.size(), T(0));
        }
    }

    void zero_grad() {
        for (auto& e : entries_) e.param.zero_grad();
    }

    void step() {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (size_t k = 0; k < entries_.size(); ++k) {
            auto& e = entries_[k];
            T* p = e.param.data();
            const int64_t n = e.param.size();
            std::vector<T> zero;
            const T* g;
            if (e.param.has_grad()) {
                g = e.param.grad_data();
            } else {
                zero.assign(static_cast<size_t>(n), T(0));
                g = zero.data();
            }
            T* m = m_[k].data();
            T* v = v_[k].data();
            const T decay = T(1) - e.lr * weight_decay_;
            for (int64_t i = 0; i < n; ++i) {
                p[i] *= decay;
                m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                p[i] -= e.lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    size_t param_count() const { return entries_.size(); }
    std::vector<T>& moment1(size_t k) { return m_[k]; }
    std::vector<T>& moment2(size_t k) { return v_[k]; }

private:
    struct Entry {
        Tensor<T> param;
        T lr;
    };
    T beta1_, beta2_, eps_, weight_decay_;
    int64_t t_ = 0;
    std::vector<Entry> entries_;
    std::vector<std::vector<T>> m_, v_;
};

} // namespace sspl
