#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sspl/rng.hpp"
#include "sspl/tensor.hpp"

namespace sspl {

/// Compares reverse-mode gradients against central finite differences
/// (f(x+he)-f(x-he))/2h. The returned error is the largest per-coordinate
/// deviation relative to the largest gradient magnitude seen across all
/// checked coordinates, so a structurally wrong adjoint registers as an error
/// comparable to 1 regardless of the gradient's scale.
///
/// `max_coords` bounds the number of coordinates probed per input (all when
/// <= 0); coordinates are drawn from `rng` when sampling is active.
template <class T>
double grad_check_multi(const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& f,
                        std::vector<Tensor<T>> inputs, T step, int max_coords = -1,
                        Rng* rng = nullptr) {
    for (auto& in : inputs) in.set_requires_grad(true);

    Tape<T> tape;
    {
        TapeScope<T> scope(tape);
        Tensor<T> loss = f(inputs);
        tape.backward(loss);
    }

    struct Probe {
        size_t input;
        int64_t coord;
        T analytic;
    };
    std::vector<Probe> probes;
    for (size_t k = 0; k < inputs.size(); ++k) {
        const auto g = inputs[k].grad();
        const int64_t n = inputs[k].size();
        if (max_coords <= 0 || n <= max_coords) {
            for (int64_t i = 0; i < n; ++i) probes.push_back({k, i, g[static_cast<size_t>(i)]});
        } else {
            for (int c = 0; c < max_coords; ++c) {
                int64_t i = rng ? static_cast<int64_t>(rng->uniform_int(static_cast<uint64_t>(n)))
                                : (c * n) / max_coords;
                probes.push_back({k, i, g[static_cast<size_t>(i)]});
            }
        }
    }

    NoGradScope<T> nograd;
    double scale = 0;
    std::vector<std::pair<double, double>> pairs;
    pairs.reserve(probes.size());
    for (const Probe& p : probes) {
        T* slot = inputs[p.input].data() + p.coord;
        const T saved = *slot;
        *slot = saved + step;
        const double fp = static_cast<double>(f(inputs).item());
        *slot = saved - step;
        const double fm = static_cast<double>(f(inputs).item());
        *slot = saved;
        const double numeric = (fp - fm) / (2.0 * static_cast<double>(step));
        const double analytic = static_cast<double>(p.analytic);
        pairs.emplace_back(analytic, numeric);
        scale = std::max({scale, std::fabs(analytic), std::fabs(numeric)});
    }
    const double denom = std::max(scale, 1e-8);
    double worst = 0;
    for (const auto& [analytic, numeric] : pairs)
        worst = std::max(worst, std::fabs(analytic - numeric) / denom);
    return worst;
}

/// Single-input convenience form.
template <class T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, T step,
                  int max_coords = -1, Rng* rng = nullptr) {
    return grad_check_multi<T>(
        [&f](const std::vector<Tensor<T>>& ins) { return f(ins[0]); }, {x.clone()}, step,
        max_coords, rng);
}

} // namespace sspl
