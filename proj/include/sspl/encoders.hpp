#pragma once

#include "sspl/nn.hpp"

namespace sspl {

/// Channel/width plan for the feature extractors and heads. Defaults are the
/// trained configuration; tests shrink everything for cheap gradient checks.
struct EncoderConfig {
    int image_size = 64;
    int spec_bins = 32;   // frequency rows F
    int spec_frames = 32; // time columns Tm
    int c1 = 32, c2 = 64, c_v = 128;
    int a1 = 16, a2 = 32, c_a = 64;
    int g_hidden = 128;
    int d_z = 128;
    int proj_hidden = 128;
    int pred_hidden = 32;
};

/// Three conv blocks (conv3x3 -> BN -> GELU -> maxpool), spatial /8 overall.
/// A single instance serves both view streams, so weight sharing is exact.
template <class T>
struct VisualEncoder {
    nn::Conv2d<T> conv1, conv2, conv3;
    nn::BatchNorm<T> bn1, bn2, bn3;

    static VisualEncoder create(const EncoderConfig& cfg, Rng& rng) {
        VisualEncoder e;
        e.conv1 = nn::Conv2d<T>::create(3, cfg.c1, 3, 1, 1, rng);
        e.conv2 = nn::Conv2d<T>::create(cfg.c1, cfg.c2, 3, 1, 1, rng);
        e.conv3 = nn::Conv2d<T>::create(cfg.c2, cfg.c_v, 3, 1, 1, rng);
        e.bn1 = nn::BatchNorm<T>::create(cfg.c1);
        e.bn2 = nn::BatchNorm<T>::create(cfg.c2);
        e.bn3 = nn::BatchNorm<T>::create(cfg.c_v);
        return e;
    }

    /// [b,3,H,W] -> [b,c_v,H/8,W/8]; H and W must be divisible by 8.
    Tensor<T> forward(const Tensor<T>& x, bool training) const {
        const auto& s = x.shape();
        if (s[s.size() - 1] % 8 || s[s.size() - 2] % 8)
            throw DimError("VisualEncoder: spatial dims must be divisible by 8");
        auto h = max_pool2x2(gelu(bn1.forward(conv1.forward(x), training)));
        h = max_pool2x2(gelu(bn2.forward(conv2.forward(h), training)));
        return max_pool2x2(gelu(bn3.forward(conv3.forward(h), training)));
    }

    void collect(const std::string& p, nn::ParamList<T>& out) const {
        conv1.collect(p + ".conv1", out);
        bn1.collect(p + ".bn1", out);
        conv2.collect(p + ".conv2", out);
        bn2.collect(p + ".bn2", out);
        conv3.collect(p + ".conv3", out);
        bn3.collect(p + ".bn3", out);
    }
};

/// Two conv blocks over the spectrogram, then global average pooling and one
/// fully connected layer down to the audio feature vector.
template <class T>
struct AudioEncoder {
    nn::Conv2d<T> conv1, conv2;
    nn::BatchNorm<T> bn1, bn2;
    nn::Linear<T> fc;
    int spec_bins = 0, spec_frames = 0;

    static AudioEncoder create(const EncoderConfig& cfg, Rng& rng) {
        AudioEncoder e;
        e.conv1 = nn::Conv2d<T>::create(1, cfg.a1, 3, 1, 1, rng);
        e.conv2 = nn::Conv2d<T>::create(cfg.a1, cfg.a2, 3, 1, 1, rng);
        e.bn1 = nn::BatchNorm<T>::create(cfg.a1);
        e.bn2 = nn::BatchNorm<T>::create(cfg.a2);
        e.fc = nn::Linear<T>::create(cfg.a2, cfg.c_a, rng);
        e.spec_bins = cfg.spec_bins;
        e.spec_frames = cfg.spec_frames;
        return e;
    }

    /// [b,F,Tm] -> [b,c_a].
    Tensor<T> forward(const Tensor<T>& spec, bool training) const {
        if (spec.ndim() != 3 || spec.dim(1) != spec_bins || spec.dim(2) != spec_frames)
            throw DimError("AudioEncoder: spectrogram dims do not match configuration");
        auto x = reshape(spec, {spec.dim(0), 1, spec_bins, spec_frames});
        auto h = max_pool2x2(gelu(bn1.forward(conv1.forward(x), training)));
        h = max_pool2x2(gelu(bn2.forward(conv2.forward(h), training)));
        return fc.forward(global_avg_pool(h));
    }

    void collect(const std::string& p, nn::ParamList<T>& out) const {
        conv1.collect(p + ".conv1", out);
        bn1.collect(p + ".bn1", out);
        conv2.collect(p + ".conv2", out);
        bn2.collect(p + ".bn2", out);
        fc.collect(p + ".fc", out);
    }
};

/// The audio transform g, the projection MLP, and the prediction head. One
/// instance is shared by both streams.
template <class T>
struct HeadStack {
    nn::Linear<T> g1, g2;                 // g: FC -> ReLU -> FC
    nn::Linear<T> proj1, proj2;           // projection MLP with batch norm
    nn::BatchNorm<T> proj_bn1, proj_bn2;
    nn::Linear<T> pred1, pred2;           // bottleneck predictor
    nn::BatchNorm<T> pred_bn;

    static HeadStack create(const EncoderConfig& cfg, Rng& rng) {
        HeadStack h;
        h.g1 = nn::Linear<T>::create(cfg.c_a, cfg.g_hidden, rng);
        h.g2 = nn::Linear<T>::create(cfg.g_hidden, cfg.c_v, rng);
        h.proj1 = nn::Linear<T>::create(cfg.c_v, cfg.proj_hidden, rng, false);
        h.proj_bn1 = nn::BatchNorm<T>::create(cfg.proj_hidden);
        h.proj2 = nn::Linear<T>::create(cfg.proj_hidden, cfg.d_z, rng, false);
        h.proj_bn2 = nn::BatchNorm<T>::create(cfg.d_z);
        h.pred1 = nn::Linear<T>::create(cfg.d_z, cfg.pred_hidden, rng, false);
        h.pred_bn = nn::BatchNorm<T>::create(cfg.pred_hidden);
        h.pred2 = nn::Linear<T>::create(cfg.pred_hidden, cfg.d_z, rng);
        return h;
    }

    /// f_a [b,c_a] -> comparable-with-visual f~_a [b,c_v].
    Tensor<T> transform_audio(const Tensor<T>& f_a) const {
        return g2.forward(relu(g1.forward(f_a)));
    }

    /// f_av [b,c_v] -> projection z [b,d_z].
    Tensor<T> project(const Tensor<T>& f_av, bool training) const {
        auto h = relu(proj_bn1.forward(proj1.forward(f_av), training));
        return proj_bn2.forward(proj2.forward(h), training);
    }

    /// z [b,d_z] -> prediction of the other view's projection, same width.
    Tensor<T> predict(const Tensor<T>& z, bool training) const {
        auto h = relu(pred_bn.forward(pred1.forward(z), training));
        return pred2.forward(h);
    }

    void collect(const std::string& p, nn::ParamList<T>& out) const {
        g1.collect(p + ".g1", out);
        g2.collect(p + ".g2", out);
        proj1.collect(p + ".proj1", out);
        proj_bn1.collect(p + ".proj_bn1", out);
        proj2.collect(p + ".proj2", out);
        proj_bn2.collect(p + ".proj_bn2", out);
        pred1.collect(p + ".pred1", out);
        pred_bn.collect(p + ".pred_bn", out);
        pred2.collect(p + ".pred2", out);
    }

    /// Projection + prediction parameters: the optimizer's fast group.
    void collect_head_group(const std::string& p, nn::ParamList<T>& out) const {
        proj1.collect(p + ".proj1", out);
        proj_bn1.collect(p + ".proj_bn1", out);
        proj2.collect(p + ".proj2", out);
        proj_bn2.collect(p + ".proj_bn2", out);
        pred1.collect(p + ".pred1", out);
        pred_bn.collect(p + ".pred_bn", out);
        pred2.collect(p + ".pred2", out);
    }
};

} // namespace sspl
