#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sspl/synthdata.hpp"
#include "test_helpers.hpp"

using namespace sspl;

namespace {
std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
} // namespace

TEST_CASE("gen_scene: noiseless limit is exact") {
    auto cfg = GeneratorConfig::defaults(4, 7);
    cfg.sigma_image = 0;
    cfg.sigma_spec = 0;
    cfg.distractors_max = 0;
    auto p = gen_scene(cfg, 3);

    // image: class color inside the box region, black elsewhere
    const int S = cfg.image_size;
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const bool in_box = x >= p.gt_box.x_min && x < p.gt_box.x_max && y >= p.gt_box.y_min &&
                                y < p.gt_box.y_max;
            if (!in_box)
                for (int c = 0; c < 3; ++c) CHECK(p.image.data()[(c * S + y) * S + x] == 0.0f);
        }

    // spectrogram: exactly the class band indicator (0/1 values, only in band)
    const auto& cls = cfg.palette[p.class_id];
    for (int f = 0; f < cfg.spec_bins; ++f)
        for (int t = 0; t < cfg.spec_frames; ++t) {
            const float v = p.spectrogram.data()[f * cfg.spec_frames + t];
            if (f < cls.f_lo || f >= cls.f_hi) CHECK(v == 0.0f);
            else CHECK((v == 0.0f || v == 1.0f));
        }

    // >= 60% of columns carry the band
    int active = 0;
    for (int t = 0; t < cfg.spec_frames; ++t)
        if (p.spectrogram.data()[cls.f_lo * cfg.spec_frames + t] == 1.0f) ++active;
    CHECK(active >= (cfg.spec_frames * 6 + 9) / 10);
}

TEST_CASE("gen_scene: deterministic per (seed, index)") {
    auto cfg = GeneratorConfig::defaults(4, 99);
    auto a = gen_scene(cfg, 42);
    auto b = gen_scene(cfg, 42);
    CHECK(a.class_id == b.class_id);
    CHECK(a.gt_box.x_min == b.gt_box.x_min);
    CHECK(testutil::max_abs_diff(a.image, b.image) == 0.0);
    CHECK(testutil::max_abs_diff(a.spectrogram, b.spectrogram) == 0.0);

    auto c = gen_scene(cfg, 43);
    bool same = a.class_id == c.class_id && testutil::max_abs_diff(a.image, c.image) == 0.0;
    CHECK_FALSE(same);
}

TEST_CASE("gen_scene: class histogram is uniform within 5% over 10k samples") {
    auto cfg = GeneratorConfig::defaults(4, 11);
    std::vector<int> counts(4, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        Rng rng(cfg.seed, static_cast<uint64_t>(i));
        ++counts[rng.uniform_int(4)]; // class draw is the stream's first value
    }
    for (int k = 0; k < 4; ++k) {
        CHECK(counts[k] > n / 4 * 0.95);
        CHECK(counts[k] < n / 4 * 1.05);
    }
}

TEST_CASE("gen_scene: gt box is in bounds, non-degenerate, and tight") {
    auto cfg = GeneratorConfig::defaults(4, 5);
    for (uint64_t i = 0; i < 50; ++i) {
        auto p = gen_scene(cfg, i);
        CHECK(p.gt_box.x_min >= 0);
        CHECK(p.gt_box.y_min >= 0);
        CHECK(p.gt_box.x_max <= cfg.image_size);
        CHECK(p.gt_box.y_max <= cfg.image_size);
        CHECK(p.gt_box.area() >= 16);

        // all pixels of the sounding object's color that belong to the object
        // lie inside the box (the object is drawn last, within its box)
        const auto& col = cfg.palette[p.class_id].color;
        const int S = cfg.image_size;
        int inside = 0, total = 0;
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const bool is_col = p.image.data()[(0 * S + y) * S + x] == col[0] &&
                                    p.image.data()[(1 * S + y) * S + x] == col[1] &&
                                    p.image.data()[(2 * S + y) * S + x] == col[2];
                if (!is_col) continue;
                // distractors of other classes never share the color
                ++total;
                if (x >= p.gt_box.x_min && x < p.gt_box.x_max && y >= p.gt_box.y_min &&
                    y < p.gt_box.y_max)
                    ++inside;
            }
        CHECK(total > 0);
        CHECK(inside >= 0.9 * total);
    }
}

TEST_CASE("generator config: overlapping bands or duplicate colors rejected") {
    auto cfg = GeneratorConfig::defaults(2, 1);
    cfg.palette[1].f_lo = cfg.palette[0].f_lo; // collide
    cfg.palette[1].f_hi = cfg.palette[0].f_hi;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    auto cfg2 = GeneratorConfig::defaults(2, 1);
    for (int c = 0; c < 3; ++c) cfg2.palette[1].color[c] = cfg2.palette[0].color[c];
    CHECK_THROWS_AS(cfg2.validate(), ConfigError);
}

TEST_CASE("augment_view: flip involution and reflection formula") {
    auto cfg = GeneratorConfig::defaults(4, 21);
    auto p = gen_scene(cfg, 0);
    const int S = cfg.image_size;

    // flipping twice restores the image
    auto v = center_view(p);
    auto once = v.image.clone();
    {
        // reuse the library path by flipping via augment with forced flip:
        // manual double-flip on the raw buffer
        for (int rep = 0; rep < 2; ++rep)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < S; ++y) {
                    float* row = once.data() + (c * S + y) * S;
                    std::reverse(row, row + S);
                }
    }
    CHECK(testutil::max_abs_diff(once, v.image) == 0.0);

    // reflection formula on a hand-placed box
    Box b{10, 20, 30, 44};
    const float xm = b.x_min;
    Box flipped{S - b.x_max, b.y_min, S - xm, b.y_max};
    CHECK(flipped.x_min == 64 - 30);
    CHECK(flipped.x_max == 64 - 10);
    CHECK(flipped.area() == b.area());
}

TEST_CASE("center_view: box shifts by the crop offset exactly") {
    auto cfg = GeneratorConfig::defaults(4, 23);
    auto p = gen_scene(cfg, 1);
    auto v = center_view(p);
    const int rs = (cfg.image_size * 11) / 10;
    const float scale = static_cast<float>(rs) / cfg.image_size;
    const float off = static_cast<float>((rs - cfg.image_size) / 2);
    // unclipped coordinates must be exactly scaled-then-shifted
    if (p.gt_box.x_min * scale - off >= 0)
        CHECK(v.box.x_min == doctest::Approx(p.gt_box.x_min * scale - off));
    if (p.gt_box.y_max * scale - off <= cfg.image_size)
        CHECK(v.box.y_max == doctest::Approx(p.gt_box.y_max * scale - off));
}

TEST_CASE("augment_view: views keep enough of the box or fall back deterministically") {
    auto cfg = GeneratorConfig::defaults(4, 29);
    for (uint64_t i = 0; i < 30; ++i) {
        auto p = gen_scene(cfg, i);
        Rng rng(777, i);
        auto v = augment_view(p, AugmentConfig{}, rng);
        CHECK(v.image.shape() == std::vector<int>{3, 64, 64});
        CHECK(v.box.area() > 0);
    }
}

TEST_CASE("dataset: round trip is bit-exact") {
    auto cfg = GeneratorConfig::defaults(4, 31);
    Dataset ds;
    ds.image_size = cfg.image_size;
    ds.spec_bins = cfg.spec_bins;
    ds.spec_frames = cfg.spec_frames;
    ds.k = cfg.k;
    for (uint64_t i = 0; i < 100; ++i) ds.pairs.push_back(gen_scene(cfg, i));

    const std::string path = temp_path("sspl_roundtrip.bin");
    write_dataset(ds, path);
    auto back = load_dataset(path);
    REQUIRE(back.pairs.size() == 100);
    CHECK(back.image_size == 64);
    CHECK(back.k == 4);
    for (size_t i = 0; i < 100; ++i) {
        CHECK(back.pairs[i].class_id == ds.pairs[i].class_id);
        CHECK(back.pairs[i].gt_box.x_min == ds.pairs[i].gt_box.x_min);
        CHECK(testutil::max_abs_diff(back.pairs[i].image, ds.pairs[i].image) == 0.0);
        CHECK(testutil::max_abs_diff(back.pairs[i].spectrogram, ds.pairs[i].spectrogram) == 0.0);
    }
    std::filesystem::remove(path);
}

TEST_CASE("dataset: file size arithmetic and corruption errors") {
    auto cfg = GeneratorConfig::defaults(4, 37);
    Dataset ds;
    for (uint64_t i = 0; i < 3; ++i) ds.pairs.push_back(gen_scene(cfg, i));
    const std::string path = temp_path("sspl_format.bin");
    write_dataset(ds, path);

    const auto size = std::filesystem::file_size(path);
    const size_t record = 2 + 8 + 3 * 64 * 64 * 4 + 32 * 32 * 4;
    CHECK(size == 4 + 2 + 4 + 10 + 3 * record);

    // corrupt magic -> format error at offset 0
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    try {
        (void)load_dataset(path);
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(e.offset == 0);
    }

    // restore magic, truncate the last record -> format error past the header
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("SSPL", 4);
    }
    std::filesystem::resize_file(path, size - 100);
    try {
        (void)load_dataset(path);
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(e.offset > 20);
    }
    std::filesystem::remove(path);
}

TEST_CASE("write_dataset: empty list is a usage error") {
    Dataset ds;
    CHECK_THROWS_AS(write_dataset(ds, temp_path("sspl_empty.bin")), UsageError);
}
