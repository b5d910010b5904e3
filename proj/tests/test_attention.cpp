#include <doctest.h>

#include "sspl/attention.hpp"
#include "sspl/grad_check.hpp"
#include "test_helpers.hpp"

using namespace sspl;
using testutil::gaussian_tensor;
using testutil::random_tensor;

TEST_CASE("similarity_map: parallel and orthogonal columns") {
    // every spatial column equals the audio vector -> all-ones map
    auto a = Tensor<float>::from({1, 3}, {1, 2, 3});
    auto f = Tensor<float>::zeros({1, 3, 2, 2});
    for (int k = 0; k < 3; ++k)
        for (int ij = 0; ij < 4; ++ij) f.data()[k * 4 + ij] = a.data()[k];
    auto s = similarity_map(a, f);
    for (int i = 0; i < 4; ++i) CHECK(s.data()[i] == doctest::Approx(1.0).epsilon(1e-6));

    // orthogonal columns -> all-zeros map
    auto a2 = Tensor<float>::from({1, 2}, {1, 0});
    auto f2 = Tensor<float>::zeros({1, 2, 2, 2});
    for (int ij = 0; ij < 4; ++ij) f2.data()[4 + ij] = 1; // channel 1 only
    auto s2 = similarity_map(a2, f2);
    for (int i = 0; i < 4; ++i) CHECK(s2.data()[i] == doctest::Approx(0.0));
}

TEST_CASE("similarity_map: per-location cosine oracle") {
    Rng rng(301);
    auto a = gaussian_tensor<float>({2, 4}, rng);
    auto f = gaussian_tensor<float>({2, 4, 2, 2}, rng);
    auto s = similarity_map(a, f);
    for (int b = 0; b < 2; ++b)
        for (int ij = 0; ij < 4; ++ij) {
            double na = 0, nf = 0, d = 0;
            for (int k = 0; k < 4; ++k) {
                const double av = a.data()[b * 4 + k];
                const double fv = f.data()[(b * 4 + k) * 4 + ij];
                na += av * av;
                nf += fv * fv;
                d += av * fv;
            }
            const double expect = d / (std::sqrt(na) * std::sqrt(nf) + 1e-8);
            CHECK(s.data()[b * 4 + ij] == doctest::Approx(expect).epsilon(1e-6));
        }
}

TEST_CASE("similarity_map: channel mismatch throws") {
    auto a = Tensor<float>::zeros({1, 3});
    auto f = Tensor<float>::zeros({1, 4, 2, 2});
    CHECK_THROWS_AS((void)similarity_map(a, f), DimError);
}

TEST_CASE("scale_map: minmax by hand, constant guard, softmax uniform") {
    auto s = Tensor<float>::from({1, 2, 2}, {0.2f, 0.6f, 0.4f, 1.0f});
    auto m = scale_map(s, ScalingMethod::minmax);
    CHECK(m.data()[0] == doctest::Approx(0.0));
    CHECK(m.data()[1] == doctest::Approx(0.5));
    CHECK(m.data()[2] == doctest::Approx(0.25));
    CHECK(m.data()[3] == doctest::Approx(1.0));

    auto c = Tensor<float>::full({1, 2, 2}, 0.3f);
    auto mc = scale_map(c, ScalingMethod::minmax);
    for (int i = 0; i < 4; ++i) CHECK(mc.data()[i] == doctest::Approx(0.5));

    auto sm = scale_map(c, ScalingMethod::softmax);
    for (int i = 0; i < 4; ++i) CHECK(sm.data()[i] == doctest::Approx(0.25));
}

TEST_CASE("scale_map: minmax endpoints are exact and range is [0,1]") {
    Rng rng(303);
    auto s = random_tensor<float>({3, 4, 4}, rng, -1.0, 1.0);
    auto m = scale_map(s, ScalingMethod::minmax);
    for (int b = 0; b < 3; ++b) {
        float lo = 2, hi = -2;
        for (int i = 0; i < 16; ++i) {
            lo = std::min(lo, m.data()[b * 16 + i]);
            hi = std::max(hi, m.data()[b * 16 + i]);
        }
        CHECK(lo == 0.0f);
        CHECK(hi == 1.0f);
    }
}

TEST_CASE("attend_pool: selection, summation, oracle") {
    Rng rng(307);
    auto f = gaussian_tensor<float>({1, 3, 2, 2}, rng);

    auto onehot = Tensor<float>::zeros({1, 2, 2});
    onehot.data()[3] = 1; // location (1,1)
    auto sel = attend_pool(onehot, f);
    for (int k = 0; k < 3; ++k) CHECK(sel.data()[k] == doctest::Approx(f.data()[k * 4 + 3]));

    auto ones = Tensor<float>::full({1, 2, 2}, 1.0f);
    auto summed = attend_pool(ones, f);
    for (int k = 0; k < 3; ++k) {
        double want = 0;
        for (int ij = 0; ij < 4; ++ij) want += f.data()[k * 4 + ij];
        CHECK(summed.data()[k] == doctest::Approx(want).epsilon(1e-6));
    }

    auto w = gaussian_tensor<float>({2, 3, 3}, rng);
    auto f2 = gaussian_tensor<float>({2, 5, 3, 3}, rng);
    auto pooled = attend_pool(w, f2);
    for (int b = 0; b < 2; ++b)
        for (int k = 0; k < 5; ++k) {
            double want = 0;
            for (int ij = 0; ij < 9; ++ij)
                want += double(w.data()[b * 9 + ij]) * f2.data()[(b * 5 + k) * 9 + ij];
            CHECK(pooled.data()[b * 5 + k] == doctest::Approx(want).epsilon(1e-6));
        }
}

TEST_CASE("fuse_baseline: identities and delegation") {
    Rng rng(311);
    auto f = gaussian_tensor<float>({2, 4, 2, 2}, rng);

    // add with zero audio leaves the spatial-mean path untouched by audio
    auto zero_a = Tensor<float>::zeros({2, 4});
    auto added = fuse_baseline<float>(f, zero_a, FusionMode::add, ScalingMethod::minmax);
    auto gap = global_avg_pool(f);
    CHECK(testutil::max_abs_diff(added, gap) == 0.0);

    // multiply with all-ones audio equals the add-with-zero path
    auto ones_a = Tensor<float>::full({2, 4}, 1.0f);
    auto mult = fuse_baseline<float>(f, ones_a, FusionMode::multiply, ScalingMethod::minmax);
    CHECK(testutil::max_abs_diff(mult, added) == 0.0);

    // attention mode is exactly attend_pool(scale_map(similarity_map(...)))
    auto a = gaussian_tensor<float>({2, 4}, rng);
    auto fused = fuse_baseline<float>(f, a, FusionMode::attention, ScalingMethod::minmax);
    auto manual = attend_pool(scale_map(similarity_map(a, f), ScalingMethod::minmax), f);
    CHECK(testutil::max_abs_diff(fused, manual) == 0.0);

    // concat mode needs its learned projection
    CHECK_THROWS_AS((void)fuse_baseline<float>(f, a, FusionMode::concat, ScalingMethod::minmax),
                    ConfigError);
    auto proj = nn::Conv2d<float>::create(8, 4, 1, 1, 0, rng, true);
    auto cat = fuse_baseline<float>(f, a, FusionMode::concat, ScalingMethod::minmax, &proj);
    CHECK(cat.shape() == std::vector<int>{2, 4});

    CHECK_THROWS_AS((void)fusion_from_string("bogus"), ConfigError);
}

TEST_CASE("invariants: scaling-insensitivity and affine invariance") {
    Rng rng(313);
    auto a = gaussian_tensor<float>({2, 6}, rng);
    auto f = gaussian_tensor<float>({2, 6, 3, 3}, rng);

    // similarity_map(alpha * audio) == similarity_map(audio), alpha > 0
    auto a_scaled = scale(a, 3.7f);
    CHECK(testutil::max_abs_diff(similarity_map(a, f), similarity_map(a_scaled, f)) < 1e-6);

    // minmax(a*S + b) == minmax(S) for a > 0
    auto s = similarity_map(a, f);
    auto s_affine = add_scalar(scale(s, 2.5f), 0.3f);
    CHECK(testutil::max_abs_diff(minmax_map(s), minmax_map(s_affine)) < 1e-6);
}

TEST_CASE("invariants: attend_pool is bilinear") {
    Rng rng(317);
    auto w1 = gaussian_tensor<float>({1, 3, 3}, rng);
    auto w2 = gaussian_tensor<float>({1, 3, 3}, rng);
    auto f1 = gaussian_tensor<float>({1, 4, 3, 3}, rng);
    auto f2 = gaussian_tensor<float>({1, 4, 3, 3}, rng);

    auto lhs = attend_pool(add(w1, w2), f1);
    auto rhs = add(attend_pool(w1, f1), attend_pool(w2, f1));
    CHECK(testutil::max_abs_diff(lhs, rhs) < 1e-5);

    auto lhs2 = attend_pool(w1, add(f1, f2));
    auto rhs2 = add(attend_pool(w1, f1), attend_pool(w1, f2));
    CHECK(testutil::max_abs_diff(lhs2, rhs2) < 1e-5);
}

TEST_CASE("invariants: monotone scalers preserve the argmax location") {
    Rng rng(331);
    for (int trial = 0; trial < 10; ++trial) {
        auto s = random_tensor<float>({1, 4, 4}, rng, -0.9, 0.9);
        s.data()[5] = 0.95f; // ensure a strict positive max
        auto argmax_of = [](const Tensor<float>& t) {
            int best = 0;
            for (int i = 1; i < 16; ++i)
                if (t.data()[i] > t.data()[best]) best = i;
            return best;
        };
        const int base = argmax_of(s);
        for (auto m : {ScalingMethod::minmax, ScalingMethod::relu, ScalingMethod::sigmoid,
                       ScalingMethod::softmax})
            CHECK(argmax_of(scale_map(s, m)) == base);
    }
}

TEST_CASE("gradients: fused attention ops match finite differences") {
    Rng rng(337);
    auto a0 = gaussian_tensor<double>({2, 5}, rng);
    auto f0 = gaussian_tensor<double>({2, 5, 2, 2}, rng);
    auto probe_s = gaussian_tensor<double>({2, 2, 2}, rng);
    auto probe_v = gaussian_tensor<double>({2, 5}, rng);

    double e1 = grad_check_multi<double>(
        [&probe_s](const std::vector<Tensor<double>>& v) {
            return dot(similarity_map(v[0], v[1]), probe_s);
        },
        {a0.clone(), f0.clone()}, 1e-5);
    CHECK(e1 < 1e-6);

    double e2 = grad_check_multi<double>(
        [&probe_s](const std::vector<Tensor<double>>& v) {
            return dot(minmax_map(similarity_map(v[0], v[1])), probe_s);
        },
        {a0.clone(), f0.clone()}, 1e-5);
    CHECK(e2 < 1e-6);

    double e3 = grad_check_multi<double>(
        [&probe_v](const std::vector<Tensor<double>>& v) {
            return dot(attend_pool(v[0], v[1]), probe_v);
        },
        {gaussian_tensor<double>({2, 2, 2}, rng), f0.clone()}, 1e-5);
    CHECK(e3 < 1e-6);

    // the full attention fusion chain
    double e4 = grad_check_multi<double>(
        [&probe_v](const std::vector<Tensor<double>>& v) {
            return dot(fuse_attention(v[0], v[1], ScalingMethod::minmax), probe_v);
        },
        {a0.clone(), f0.clone()}, 1e-5);
    CHECK(e4 < 1e-6);
}
