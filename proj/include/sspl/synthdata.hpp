#pragma once

#include <string>
#include <vector>

#include "sspl/rng.hpp"
#include "sspl/tensor.hpp"

namespace sspl {

/// Axis-aligned box in pixels, half-open ([x_min, x_max) x [y_min, y_max)).
struct Box {
    float x_min = 0, y_min = 0, x_max = 0, y_max = 0;
    float area() const { return std::max(0.0f, x_max - x_min) * std::max(0.0f, y_max - y_min); }
};

enum class ShapeKind { circle, square, triangle, cross };

struct ClassSpec {
    ShapeKind shape;
    float color[3];
    int f_lo, f_hi; // active spectrogram rows, [f_lo, f_hi)
};

struct GeneratorConfig {
    int k = 4;
    int image_size = 64;
    int spec_bins = 32;
    int spec_frames = 32;
    float sigma_image = 0.05f;
    float sigma_spec = 0.05f;
    int distractors_max = 2;
    int side_min = 12, side_max = 28;
    uint64_t seed = 1;
    std::vector<ClassSpec> palette; // filled by defaults() when empty

    static GeneratorConfig defaults(int k = 4, uint64_t seed = 1);
    /// Pairwise-disjoint bands and pairwise-distinct colors, sane sizes.
    void validate() const;
};

/// One synthetic sample: the canonical image, its spectrogram, the sounding
/// class, and the tight ground-truth box around the sounding object.
struct ScenePair {
    Tensor<float> image;       // [3,H,W], values in [0,1]
    Tensor<float> spectrogram; // [F,Tm], values >= 0
    int class_id = 0;
    Box gt_box;
};

/// Deterministic per-sample generation: (seed, index) fully determines the
/// sample on every platform.
ScenePair gen_scene(const GeneratorConfig& cfg, uint64_t index);

struct AugmentConfig {
    // crop (resize to floor(1.1*side), random crop back) always applies;
    // horizontal flip at p = 0.5 is the default second spatial augmentation
    bool hflip = true;
    // optional extras, all off by default
    bool vflip = false;
    bool translation = false;
    bool rotation = false;
    bool grayscale = false;
    bool color_jitter = false;
    bool gaussian_blur = false;
};

struct View {
    Tensor<float> image; // [3,side,side]
    Box box;             // gt box mapped through the same geometry, clipped
};

/// Randomly augmented training view. The crop resamples (up to 10 tries, then
/// center) whenever clipping keeps less than 25% of the box.
View augment_view(const ScenePair& pair, const AugmentConfig& aug, Rng& rng);

/// Deterministic evaluation view: center crop of the 1.1x resize, no flip.
View center_view(const ScenePair& pair);

struct Dataset {
    int image_size = 64, spec_bins = 32, spec_frames = 32, k = 4;
    std::vector<ScenePair> pairs;
};

/// Binary dataset format: magic "SSPL", u16 version, u32 record count,
/// 5 x u16 dims (H_v, W_v, F, Tm, K), then fixed-size records of
/// (u16 class, 4 x u16 box, image floats, spectrogram floats), little-endian.
void write_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Rasterizes a box into a binary mask of an H x W image.
std::vector<uint8_t> box_mask(const Box& box, int height, int width);

} // namespace sspl
