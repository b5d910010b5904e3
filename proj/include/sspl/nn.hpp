#pragma once

#include <string>
#include <vector>

#include "sspl/ops.hpp"
#include "sspl/rng.hpp"
#include "sspl/tensor.hpp"

namespace sspl::nn {

/// One named piece of model state. Non-trainable entries (batch-norm running
/// statistics) are checkpointed but never touched by the optimizer.
template <class T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
};

template <class T>
using ParamList = std::vector<NamedTensor<T>>;

template <class T>
Tensor<T> uniform_init(std::vector<int> shape, double bound, Rng& rng) {
    auto t = Tensor<T>::zeros(std::move(shape), true);
    for (int64_t i = 0; i < t.size(); ++i)
        t.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <class T>
struct Linear {
    Tensor<T> weight; // [out,in]
    Tensor<T> bias;   // [out], absent when followed by a normalization layer

    static Linear create(int in, int out, Rng& rng, bool with_bias = true) {
        Linear l;
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        l.weight = uniform_init<T>({out, in}, bound, rng);
        if (with_bias) l.bias = uniform_init<T>({out}, bound, rng);
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return linear(x, weight, bias.defined() ? &bias : nullptr);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".weight", weight, true});
        if (bias.defined()) out.push_back({prefix + ".bias", bias, true});
    }
};

template <class T>
struct Conv2d {
    Tensor<T> weight; // [co,ci,k,k]
    Tensor<T> bias;   // [co] (optional)
    int stride = 1;
    int padding = 0;

    static Conv2d create(int ci, int co, int k, int stride, int padding, Rng& rng,
                         bool with_bias = false) {
        Conv2d c;
        c.stride = stride;
        c.padding = padding;
        const double bound = 1.0 / std::sqrt(static_cast<double>(ci) * k * k);
        c.weight = uniform_init<T>({co, ci, k, k}, bound, rng);
        if (with_bias) c.bias = uniform_init<T>({co}, bound, rng);
        return c;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        auto y = conv2d(x, weight, stride, padding);
        return bias.defined() ? add_channel_bias(y, bias) : y;
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".weight", weight, true});
        if (bias.defined()) out.push_back({prefix + ".bias", bias, true});
    }
};

/// Transposed convolution holding its kernel in conv layout [co,ci,k,k]; the
/// forward pass is the adjoint of conv2d, mapping co -> ci channels.
template <class T>
struct ConvTranspose2d {
    Tensor<T> weight;
    int stride = 1;
    int padding = 0;

    static ConvTranspose2d create(int c_in, int c_out, int k, int stride, int padding, Rng& rng) {
        ConvTranspose2d c;
        c.stride = stride;
        c.padding = padding;
        const double bound = 1.0 / std::sqrt(static_cast<double>(c_in) * k * k);
        c.weight = uniform_init<T>({c_in, c_out, k, k}, bound, rng);
        return c;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return conv_transpose2d(x, weight, stride, padding);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".weight", weight, true});
    }
};

/// Batch normalization with one shared affine and `slots` independent running
/// statistics. Slot 0 is the ordinary case; iterative modules index one slot
/// per time step so inference normalizes each step with its own statistics.
template <class T>
struct BatchNorm {
    Tensor<T> gamma, beta;
    std::vector<Tensor<T>> run_mean, run_var;

    static BatchNorm create(int c, int slots = 1) {
        BatchNorm bn;
        bn.gamma = Tensor<T>::full({c}, T(1), true);
        bn.beta = Tensor<T>::zeros({c}, true);
        for (int s = 0; s < slots; ++s) {
            bn.run_mean.push_back(Tensor<T>::zeros({c}));
            bn.run_var.push_back(Tensor<T>::full({c}, T(1)));
        }
        return bn;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training, int slot = 0) const {
        const int s = std::min<int>(slot, static_cast<int>(run_mean.size()) - 1);
        return batch_norm<T>(x, gamma, beta, const_cast<Tensor<T>*>(&run_mean[s]),
                             const_cast<Tensor<T>*>(&run_var[s]), training);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".gamma", gamma, true});
        out.push_back({prefix + ".beta", beta, true});
        for (size_t s = 0; s < run_mean.size(); ++s) {
            const std::string suffix = run_mean.size() > 1 ? "." + std::to_string(s) : "";
            out.push_back({prefix + ".running_mean" + suffix, run_mean[s], false});
            out.push_back({prefix + ".running_var" + suffix, run_var[s], false});
        }
    }
};

} // namespace sspl::nn
