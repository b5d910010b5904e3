#include "sspl/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sspl/errors.hpp"
#include "sspl/ops.hpp"

namespace sspl {

namespace {

constexpr float kPaletteColors[4][3] = {
    {0.95f, 0.20f, 0.15f}, // red circle
    {0.20f, 0.85f, 0.25f}, // green square
    {0.25f, 0.40f, 0.95f}, // blue triangle
    {0.95f, 0.85f, 0.20f}, // yellow cross
};

float box_iou(const Box& a, const Box& b) {
    const float ix = std::max(0.0f, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const float iy = std::max(0.0f, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const float inter = ix * iy;
    const float uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0f;
}

void render_shape(Tensor<float>& img, ShapeKind kind, const float color[3], int x0, int y0,
                  int side) {
    const int W = img.dim(2);
    auto put = [&](int x, int y) {
        for (int c = 0; c < 3; ++c) img.data()[(c * img.dim(1) + y) * W + x] = color[c];
    };
    const float cx = x0 + side / 2.0f, cy = y0 + side / 2.0f, r = side / 2.0f;
    for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x) {
            bool inside = false;
            switch (kind) {
                case ShapeKind::circle: {
                    const float dx = x + 0.5f - cx, dy = y + 0.5f - cy;
                    inside = dx * dx + dy * dy <= r * r;
                    break;
                }
                case ShapeKind::square:
                    inside = true;
                    break;
                case ShapeKind::triangle: {
                    // apex top-center, base along the bottom edge
                    const float fy = (y + 0.5f - y0) / side;       // 0 at top
                    const float fx = std::fabs(x + 0.5f - cx) / r; // 0 at center line
                    inside = fx <= fy;
                    break;
                }
                case ShapeKind::cross: {
                    const float bar = side / 3.0f;
                    const bool horiz = std::fabs(y + 0.5f - cy) <= bar / 2;
                    const bool vert = std::fabs(x + 0.5f - cx) <= bar / 2;
                    inside = horiz || vert;
                    break;
                }
            }
            if (inside) put(x, y);
        }
}

// little-endian scalar writers (byte-order independent)
void put_u16(std::ostream& out, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
    out.write(b, 2);
}
void put_u32(std::ostream& out, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 4);
}
void put_f32(std::ostream& out, float v) {
    put_u32(out, std::bit_cast<uint32_t>(v));
}

struct Reader {
    explicit Reader(const std::string& path) : in(path, std::ios::binary), path_(path) {
        if (!in) throw FormatError("dataset: cannot open " + path, 0);
    }
    uint64_t offset = 0;
    std::ifstream in;
    std::string path_;

    void bytes(char* dst, size_t n, const char* what) {
        in.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n)
            throw FormatError("dataset: truncated while reading " + std::string(what), offset);
        offset += n;
    }
    uint16_t u16(const char* what) {
        unsigned char b[2];
        bytes(reinterpret_cast<char*>(b), 2, what);
        return static_cast<uint16_t>(b[0] | (b[1] << 8));
    }
    uint32_t u32(const char* what) {
        unsigned char b[4];
        bytes(reinterpret_cast<char*>(b), 4, what);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
};

} // namespace

GeneratorConfig GeneratorConfig::defaults(int k, uint64_t seed) {
    GeneratorConfig cfg;
    cfg.k = k;
    cfg.seed = seed;
    cfg.palette.clear();
    // disjoint bands: class i occupies rows [2 + 7i, 7 + 7i)
    for (int i = 0; i < k; ++i) {
        ClassSpec c;
        c.shape = static_cast<ShapeKind>(i % 4);
        const auto& col = kPaletteColors[i % 4];
        c.color[0] = col[0];
        c.color[1] = col[1];
        c.color[2] = col[2];
        c.f_lo = 2 + 7 * i;
        c.f_hi = c.f_lo + 5;
        cfg.palette.push_back(c);
    }
    cfg.validate();
    return cfg;
}

void GeneratorConfig::validate() const {
    if (k < 1 || static_cast<int>(palette.size()) != k)
        throw ConfigError("generator: palette must define every class");
    if (side_min < 4 || side_max > image_size || side_min > side_max)
        throw ConfigError("generator: invalid object side range");
    for (int i = 0; i < k; ++i) {
        const auto& a = palette[i];
        if (a.f_lo < 0 || a.f_hi > spec_bins || a.f_lo >= a.f_hi)
            throw ConfigError("generator: class band out of range");
        for (int j = i + 1; j < k; ++j) {
            const auto& b = palette[j];
            if (std::max(a.f_lo, b.f_lo) < std::min(a.f_hi, b.f_hi))
                throw ConfigError("generator: class frequency bands must be disjoint");
            if (a.color[0] == b.color[0] && a.color[1] == b.color[1] && a.color[2] == b.color[2])
                throw ConfigError("generator: class colors must be distinct");
        }
    }
    if (sigma_spec >= 0.5f)
        throw ConfigError("generator: spectrogram noise too high for the unit-amplitude band");
}

ScenePair gen_scene(const GeneratorConfig& cfg, uint64_t index) {
    cfg.validate();
    Rng rng(cfg.seed, index);
    const int S = cfg.image_size;

    ScenePair out;
    out.class_id = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(cfg.k)));

    const int side = cfg.side_min + static_cast<int>(rng.uniform_int(
                                        static_cast<uint64_t>(cfg.side_max - cfg.side_min + 1)));
    const int x0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(S - side + 1)));
    const int y0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(S - side + 1)));
    out.gt_box = {static_cast<float>(x0), static_cast<float>(y0), static_cast<float>(x0 + side),
                  static_cast<float>(y0 + side)};

    struct Placed {
        int cls, x0, y0, side;
    };
    std::vector<Placed> distractors;
    std::vector<Box> occupied{out.gt_box};
    const int n_distr =
        cfg.k > 1 ? static_cast<int>(rng.uniform_int(static_cast<uint64_t>(cfg.distractors_max + 1)))
                  : 0;
    for (int d = 0; d < n_distr; ++d) {
        int cls = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(cfg.k - 1)));
        if (cls >= out.class_id) ++cls; // silent distractors come from other classes
        bool placed = false;
        for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
            const int ds = cfg.side_min + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(
                                              cfg.side_max - cfg.side_min + 1)));
            const int dx = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(S - ds + 1)));
            const int dy = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(S - ds + 1)));
            Box b{static_cast<float>(dx), static_cast<float>(dy), static_cast<float>(dx + ds),
                  static_cast<float>(dy + ds)};
            bool ok = true;
            for (const Box& o : occupied)
                if (box_iou(b, o) > 0.3f) ok = false;
            if (!ok) continue;
            occupied.push_back(b);
            distractors.push_back({cls, dx, dy, ds});
            placed = true;
        }
    }

    // spectrogram: the class band lights up a random >= 60% subset of columns
    const int Tm = cfg.spec_frames, F = cfg.spec_bins;
    const int min_cols = (Tm * 6 + 9) / 10;
    const int n_cols =
        min_cols + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(Tm - min_cols + 1)));
    std::vector<int> cols(Tm);
    for (int i = 0; i < Tm; ++i) cols[i] = i;
    for (int i = 0; i < n_cols; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(Tm - i)));
        std::swap(cols[i], cols[j]);
    }
    out.spectrogram = Tensor<float>::zeros({F, Tm});
    const auto& spec_cls = cfg.palette[out.class_id];
    for (int i = 0; i < n_cols; ++i)
        for (int f = spec_cls.f_lo; f < spec_cls.f_hi; ++f)
            out.spectrogram.data()[f * Tm + cols[i]] = 1.0f;

    // image: noise texture, distractors below, sounding object on top
    out.image = Tensor<float>::zeros({3, S, S});
    if (cfg.sigma_image > 0) {
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const float n = cfg.sigma_image * static_cast<float>(rng.normal());
                const float v = std::clamp(n, 0.0f, 1.0f);
                for (int c = 0; c < 3; ++c) out.image.data()[(c * S + y) * S + x] = v;
            }
    }
    for (const auto& d : distractors)
        render_shape(out.image, cfg.palette[d.cls].shape, cfg.palette[d.cls].color, d.x0, d.y0,
                     d.side);
    render_shape(out.image, spec_cls.shape, spec_cls.color, x0, y0, side);

    if (cfg.sigma_spec > 0) {
        for (int i = 0; i < F * Tm; ++i) {
            const float v =
                out.spectrogram.data()[i] + cfg.sigma_spec * static_cast<float>(rng.normal());
            out.spectrogram.data()[i] = std::max(0.0f, v);
        }
    }
    return out;
}

namespace {

struct Geometry {
    // box map under resize-then-crop: scaled by r, shifted by the crop origin
    float scale;
    float ox, oy;
};

Box apply_geometry(const Box& b, const Geometry& g) {
    return {b.x_min * g.scale - g.ox, b.y_min * g.scale - g.oy, b.x_max * g.scale - g.ox,
            b.y_max * g.scale - g.oy};
}

Box clip_box(const Box& b, int side) {
    return {std::clamp(b.x_min, 0.0f, static_cast<float>(side)),
            std::clamp(b.y_min, 0.0f, static_cast<float>(side)),
            std::clamp(b.x_max, 0.0f, static_cast<float>(side)),
            std::clamp(b.y_max, 0.0f, static_cast<float>(side))};
}

Tensor<float> crop(const Tensor<float>& img, int ox, int oy, int side) {
    auto out = Tensor<float>::zeros({3, side, side});
    const int W = img.dim(2);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < side; ++y)
            std::memcpy(out.data() + (c * side + y) * side,
                        img.data() + (c * img.dim(1) + y + oy) * W + ox,
                        sizeof(float) * static_cast<size_t>(side));
    return out;
}

void hflip_inplace(Tensor<float>& img) {
    const int S = img.dim(2);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.dim(1); ++y) {
            float* row = img.data() + (c * img.dim(1) + y) * S;
            std::reverse(row, row + S);
        }
}

void vflip_inplace(Tensor<float>& img) {
    const int S = img.dim(2), H = img.dim(1);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H / 2; ++y)
            for (int x = 0; x < S; ++x)
                std::swap(img.data()[(c * H + y) * S + x], img.data()[(c * H + H - 1 - y) * S + x]);
}

} // namespace

View augment_view(const ScenePair& pair, const AugmentConfig& aug, Rng& rng) {
    const int S = pair.image.dim(2);
    const int rs = (S * 11) / 10; // floor(1.1 * side)
    auto resized = bilinear_resize(pair.image, rs, rs);
    const float scale = static_cast<float>(rs) / static_cast<float>(S);
    const float min_keep = 0.25f * pair.gt_box.area() * scale * scale;

    int ox = (rs - S) / 2, oy = (rs - S) / 2; // fallback: center
    Box view_box;
    bool found = false;
    for (int attempt = 0; attempt < 10 && !found; ++attempt) {
        const int cx = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(rs - S + 1)));
        const int cy = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(rs - S + 1)));
        Box b = clip_box(apply_geometry(pair.gt_box, {scale, static_cast<float>(cx),
                                                      static_cast<float>(cy)}),
                         S);
        if (b.area() >= min_keep) {
            ox = cx;
            oy = cy;
            view_box = b;
            found = true;
        }
    }
    if (!found)
        view_box = clip_box(apply_geometry(pair.gt_box,
                                           {scale, static_cast<float>(ox), static_cast<float>(oy)}),
                            S);
    View v;
    v.image = crop(resized, ox, oy, S);
    v.box = view_box;

    if (aug.hflip && rng.bernoulli(0.5)) {
        hflip_inplace(v.image);
        const float xm = v.box.x_min;
        v.box.x_min = S - v.box.x_max;
        v.box.x_max = S - xm;
    }
    if (aug.vflip && rng.bernoulli(0.5)) {
        vflip_inplace(v.image);
        const float ym = v.box.y_min;
        v.box.y_min = S - v.box.y_max;
        v.box.y_max = S - ym;
    }
    if (aug.translation) {
        const int dx = static_cast<int>(std::lround(rng.uniform(-0.2, 0.2) * S));
        const int dy = static_cast<int>(std::lround(rng.uniform(-0.2, 0.2) * S));
        auto shifted = Tensor<float>::zeros(v.image.shape());
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const int sx = x - dx, sy = y - dy;
                    if (sx >= 0 && sx < S && sy >= 0 && sy < S)
                        shifted.data()[(c * S + y) * S + x] =
                            v.image.data()[(c * S + sy) * S + sx];
                }
        v.image = shifted;
        v.box = clip_box({v.box.x_min + dx, v.box.y_min + dy, v.box.x_max + dx, v.box.y_max + dy},
                         S);
    }
    if (aug.rotation) {
        const int q = static_cast<int>(rng.uniform_int(4));
        for (int t = 0; t < q; ++t) {
            auto rot = Tensor<float>::zeros(v.image.shape());
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < S; ++y)
                    for (int x = 0; x < S; ++x)
                        // 90 degrees clockwise: destination (x', y') = (S-1-y, x)
                        rot.data()[(c * S + x) * S + (S - 1 - y)] =
                            v.image.data()[(c * S + y) * S + x];
            v.image = rot;
            v.box = {static_cast<float>(S) - v.box.y_max, v.box.x_min,
                     static_cast<float>(S) - v.box.y_min, v.box.x_max};
        }
    }
    if (aug.grayscale && rng.bernoulli(0.2)) {
        const int HW = S * S;
        for (int i = 0; i < HW; ++i) {
            const float g = (v.image.data()[i] + v.image.data()[HW + i] +
                             v.image.data()[2 * HW + i]) /
                            3.0f;
            v.image.data()[i] = v.image.data()[HW + i] = v.image.data()[2 * HW + i] = g;
        }
    }
    if (aug.color_jitter && rng.bernoulli(0.8)) {
        const float brightness = 1.0f + static_cast<float>(rng.uniform(-0.4, 0.4));
        const float contrast = 1.0f + static_cast<float>(rng.uniform(-0.4, 0.4));
        const float saturation = 1.0f + static_cast<float>(rng.uniform(-0.4, 0.4));
        const float hue = static_cast<float>(rng.uniform(-0.1, 0.1));
        const int HW = S * S;
        float mean = 0;
        for (int64_t i = 0; i < v.image.size(); ++i) mean += v.image.data()[i];
        mean /= static_cast<float>(v.image.size());
        for (int i = 0; i < HW; ++i) {
            float r = v.image.data()[i], g = v.image.data()[HW + i], b = v.image.data()[2 * HW + i];
            r *= brightness;
            g *= brightness;
            b *= brightness;
            r = mean + contrast * (r - mean);
            g = mean + contrast * (g - mean);
            b = mean + contrast * (b - mean);
            const float gray = (r + g + b) / 3.0f;
            r = gray + saturation * (r - gray);
            g = gray + saturation * (g - gray);
            b = gray + saturation * (b - gray);
            // small hue shift approximated by rotating channels toward each other
            const float r2 = r + hue * (g - b);
            const float g2 = g + hue * (b - r);
            const float b2 = b + hue * (r - g);
            v.image.data()[i] = std::clamp(r2, 0.0f, 1.0f);
            v.image.data()[HW + i] = std::clamp(g2, 0.0f, 1.0f);
            v.image.data()[2 * HW + i] = std::clamp(b2, 0.0f, 1.0f);
        }
    }
    if (aug.gaussian_blur && rng.bernoulli(0.5)) {
        const float sigma = static_cast<float>(rng.uniform(0.1, 2.0));
        const int radius = std::min(4, std::max(1, static_cast<int>(std::ceil(2 * sigma))));
        std::vector<float> kern(2 * radius + 1);
        float norm = 0;
        for (int i = -radius; i <= radius; ++i) {
            kern[i + radius] = std::exp(-0.5f * i * i / (sigma * sigma));
            norm += kern[i + radius];
        }
        for (float& kv : kern) kv /= norm;
        auto tmp = Tensor<float>::zeros(v.image.shape());
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    float acc = 0;
                    for (int i = -radius; i <= radius; ++i)
                        acc += kern[i + radius] *
                               v.image.data()[(c * S + y) * S + std::clamp(x + i, 0, S - 1)];
                    tmp.data()[(c * S + y) * S + x] = acc;
                }
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    float acc = 0;
                    for (int i = -radius; i <= radius; ++i)
                        acc += kern[i + radius] *
                               tmp.data()[(c * S + std::clamp(y + i, 0, S - 1)) * S + x];
                    v.image.data()[(c * S + y) * S + x] = acc;
                }
    }
    return v;
}

View center_view(const ScenePair& pair) {
    const int S = pair.image.dim(2);
    const int rs = (S * 11) / 10;
    auto resized = bilinear_resize(pair.image, rs, rs);
    const int off = (rs - S) / 2;
    View v;
    v.image = crop(resized, off, off, S);
    const float scale = static_cast<float>(rs) / static_cast<float>(S);
    v.box = clip_box(apply_geometry(pair.gt_box,
                                    {scale, static_cast<float>(off), static_cast<float>(off)}),
                     S);
    return v;
}

void write_dataset(const Dataset& ds, const std::string& path) {
    if (ds.pairs.empty()) throw UsageError("write_dataset: empty sample list");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("write_dataset: cannot open " + path);
    out.write("SSPL", 4);
    put_u16(out, 1); // format version
    put_u32(out, static_cast<uint32_t>(ds.pairs.size()));
    put_u16(out, static_cast<uint16_t>(ds.image_size));
    put_u16(out, static_cast<uint16_t>(ds.image_size));
    put_u16(out, static_cast<uint16_t>(ds.spec_bins));
    put_u16(out, static_cast<uint16_t>(ds.spec_frames));
    put_u16(out, static_cast<uint16_t>(ds.k));
    for (const auto& p : ds.pairs) {
        put_u16(out, static_cast<uint16_t>(p.class_id));
        put_u16(out, static_cast<uint16_t>(std::lround(p.gt_box.x_min)));
        put_u16(out, static_cast<uint16_t>(std::lround(p.gt_box.y_min)));
        put_u16(out, static_cast<uint16_t>(std::lround(p.gt_box.x_max)));
        put_u16(out, static_cast<uint16_t>(std::lround(p.gt_box.y_max)));
        for (int64_t i = 0; i < p.image.size(); ++i) put_f32(out, p.image.data()[i]);
        for (int64_t i = 0; i < p.spectrogram.size(); ++i) put_f32(out, p.spectrogram.data()[i]);
    }
    if (!out) throw UsageError("write_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, "SSPL", 4) != 0) throw FormatError("dataset: bad magic", 0);
    const uint16_t version = r.u16("version");
    if (version != 1) throw FormatError("dataset: unsupported format version", 4);
    const uint32_t count = r.u32("record count");
    Dataset ds;
    const int H = r.u16("H_v");
    const int W = r.u16("W_v");
    ds.spec_bins = r.u16("F");
    ds.spec_frames = r.u16("Tm");
    ds.k = r.u16("K");
    if (H != W) throw FormatError("dataset: non-square images unsupported", 10);
    ds.image_size = H;
    ds.pairs.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        ScenePair p;
        p.class_id = r.u16("class_id");
        p.gt_box.x_min = r.u16("x_min");
        p.gt_box.y_min = r.u16("y_min");
        p.gt_box.x_max = r.u16("x_max");
        p.gt_box.y_max = r.u16("y_max");
        p.image = Tensor<float>::zeros({3, H, W});
        for (int64_t j = 0; j < p.image.size(); ++j) p.image.data()[j] = r.f32("image");
        p.spectrogram = Tensor<float>::zeros({ds.spec_bins, ds.spec_frames});
        for (int64_t j = 0; j < p.spectrogram.size(); ++j)
            p.spectrogram.data()[j] = r.f32("spectrogram");
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

std::vector<uint8_t> box_mask(const Box& box, int height, int width) {
    std::vector<uint8_t> m(static_cast<size_t>(height) * width, 0);
    const int x0 = std::clamp<int>(static_cast<int>(std::lround(box.x_min)), 0, width);
    const int x1 = std::clamp<int>(static_cast<int>(std::lround(box.x_max)), 0, width);
    const int y0 = std::clamp<int>(static_cast<int>(std::lround(box.y_min)), 0, height);
    const int y1 = std::clamp<int>(static_cast<int>(std::lround(box.y_max)), 0, height);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m[static_cast<size_t>(y) * width + x] = 1;
    return m;
}

} // namespace sspl
