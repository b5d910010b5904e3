#include <doctest.h>

#include "sspl/grad_check.hpp"
#include "sspl/loss.hpp"
#include "sspl/optim.hpp"
#include "test_helpers.hpp"

using namespace sspl;
using testutil::gaussian_tensor;

namespace {
const std::function<Tensor<float>(const Tensor<float>&)> identity_pred =
    [](const Tensor<float>& z) { return z; };
}

TEST_CASE("ncs_loss: parallel, orthogonal, bounded") {
    auto e1 = Tensor<float>::from({1, 4}, {1, 0, 0, 0});
    CHECK(ncs_loss<float>(identity_pred, e1, e1).item() == doctest::Approx(-1.0).epsilon(1e-6));

    auto e2 = Tensor<float>::from({1, 4}, {0, 1, 0, 0});
    CHECK(ncs_loss<float>(identity_pred, e1, e2).item() == doctest::Approx(0.0));

    Rng rng(601);
    for (int i = 0; i < 1000; ++i) {
        auto a = gaussian_tensor<float>({1, 8}, rng);
        auto b = gaussian_tensor<float>({1, 8}, rng);
        float v = ncs_loss<float>(identity_pred, a, b).item();
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("sspl_loss: symmetry and report invariants") {
    Rng rng(603);
    auto z1 = gaussian_tensor<float>({4, 8}, rng);
    auto z2 = gaussian_tensor<float>({4, 8}, rng);

    auto rep = sspl_loss<float>(identity_pred, z1, z2);
    CHECK(rep.total.item() ==
          doctest::Approx(0.5 * (rep.term_12 + rep.term_21)).epsilon(1e-6));
    CHECK(rep.total.item() >= -1.0f);
    CHECK(rep.total.item() <= 1.0f);

    auto swapped = sspl_loss<float>(identity_pred, z2, z1);
    CHECK(swapped.total.item() == rep.total.item()); // exchanging views is exact symmetry

    auto same = sspl_loss<float>(identity_pred, z1, z1);
    CHECK(same.total.item() == doctest::Approx(-1.0).epsilon(1e-5));
}

TEST_CASE("sspl_loss: the stop-gradient branch blocks adjoints bitwise") {
    Rng rng(605);
    auto x = gaussian_tensor<float>({4, 6}, rng);
    auto w1 = gaussian_tensor<float>({8, 6}, rng);
    auto w2 = gaussian_tensor<float>({8, 6}, rng);
    w1.set_requires_grad(true);
    w2.set_requires_grad(true);

    // w2 feeds only z2; the directed term NCS(z1, SG(z2)) must leave it at
    // exactly zero.
    Tape<float> tape;
    {
        TapeScope<float> scope(tape);
        auto z1 = linear(x, w1);
        auto z2 = linear(x, w2);
        auto t12 = ncs_loss<float>(identity_pred, z1, stop_gradient(z2));
        tape.backward(t12);
    }
    CHECK_FALSE(w2.has_grad());
    for (float g : w2.grad()) CHECK(g == 0.0f);
    CHECK(w1.has_grad());

    // with the full symmetric loss both sides receive gradient, but only
    // through their prediction-side terms
    w1.zero_grad();
    w2.zero_grad();
    Tape<float> tape2;
    {
        TapeScope<float> scope(tape2);
        auto z1 = linear(x, w1);
        auto z2 = linear(x, w2);
        auto rep = sspl_loss<float>(identity_pred, z1, z2);
        tape2.backward(rep.total);
    }
    CHECK(w1.has_grad());
    CHECK(w2.has_grad());
}

TEST_CASE("collapse_metric: degenerate, closed-form, and Monte Carlo") {
    auto same = Tensor<float>::zeros({4, 8});
    for (int r = 0; r < 4; ++r)
        for (int i = 0; i < 8; ++i) same.data()[r * 8 + i] = (i == 2) ? 3.0f : -1.0f;
    CHECK(collapse_metric(same) == doctest::Approx(0.0));

    // orthonormal basis rows: per-dimension sample std is exactly 1/sqrt(d)
    const int d = 16;
    auto basis = Tensor<float>::zeros({d, d});
    for (int i = 0; i < d; ++i) basis.data()[i * d + i] = 1.0f;
    CHECK(collapse_metric(basis) == doctest::Approx(1.0 / std::sqrt(double(d))).epsilon(1e-5));

    Rng rng(607);
    auto z = gaussian_tensor<float>({256, 128}, rng);
    const float m = collapse_metric(z);
    const float want = 1.0f / std::sqrt(128.0f);
    CHECK(m > 0.8f * want);
    CHECK(m < 1.2f * want);
}

TEST_CASE("collapse_metric: invariant to row-wise positive rescaling") {
    Rng rng(609);
    auto z = gaussian_tensor<float>({16, 32}, rng);
    auto scaled = z.clone();
    Rng srng(610);
    for (int r = 0; r < 16; ++r) {
        const float s = static_cast<float>(srng.uniform(0.1, 5.0));
        for (int i = 0; i < 32; ++i) scaled.data()[r * 32 + i] *= s;
    }
    CHECK(collapse_metric(z) == doctest::Approx(collapse_metric(scaled)).epsilon(1e-4));
}

TEST_CASE("infonce_baseline: two orthogonal pairs by hand") {
    auto zv = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
    auto za = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
    int skipped = -1;
    auto loss = infonce_baseline<float>(zv, za, 1.0f, nullptr, &skipped);
    CHECK(skipped == 0);
    CHECK(loss.item() == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-5));
}

TEST_CASE("infonce_baseline: fully masked negatives skip all anchors") {
    auto zv = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
    auto za = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
    std::vector<uint8_t> mask = {0, 1, 1, 0}; // every non-matching pair excluded
    int skipped = -1;
    auto loss = infonce_baseline<float>(zv, za, 1.0f, &mask, &skipped);
    CHECK(skipped == 2); // = batch
    CHECK(loss.item() == 0.0f);
}

TEST_CASE("infonce_baseline: gradients match finite differences") {
    Rng rng(611);
    std::vector<uint8_t> mask(6 * 6, 0);
    mask[0 * 6 + 3] = mask[3 * 6 + 0] = 1; // one same-class pair excluded
    double err = grad_check_multi<double>(
        [&mask](const std::vector<Tensor<double>>& v) {
            return infonce_baseline<double>(v[0], v[1], 0.3, &mask, nullptr);
        },
        {gaussian_tensor<double>({6, 5}, rng), gaussian_tensor<double>({6, 5}, rng)}, 1e-6);
    CHECK(err < 1e-6);
}

TEST_CASE("infonce_baseline: 200 seeded optimization steps reduce the loss") {
    Rng rng(613);
    auto zv = gaussian_tensor<float>({8, 4}, rng, 0.5);
    auto za = gaussian_tensor<float>({8, 4}, rng, 0.5);
    zv.set_requires_grad(true);
    za.set_requires_grad(true);
    AdamW<float> opt(0.9f, 0.999f, 1e-8f, 0.0f);
    opt.add_group({zv, za}, 0.05f);

    float first = 0, last = 0;
    for (int step = 0; step < 200; ++step) {
        Tape<float> tape;
        TapeScope<float> scope(tape);
        auto loss = infonce_baseline<float>(zv, za, 0.07f);
        if (step == 0) first = loss.item();
        last = loss.item();
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
    }
    CHECK(last < first);
    CHECK(last < 0.1f); // matched pairs become separable
}
