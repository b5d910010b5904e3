#pragma once

#include "sspl/attention.hpp"
#include "sspl/encoders.hpp"
#include "sspl/loss.hpp"
#include "sspl/pcm.hpp"

namespace sspl {

enum class Objective { sspl, infonce };

inline Objective objective_from_string(const std::string& s) {
    if (s == "sspl") return Objective::sspl;
    if (s == "infonce") return Objective::infonce;
    throw ConfigError("unknown objective: " + s);
}

struct ModelConfig {
    EncoderConfig enc;
    int pcm_layers = 3;
    int pcm_cycles = 5;
    bool use_pcm = true;
    ScalingMethod scaling = ScalingMethod::minmax;
    FusionMode fusion = FusionMode::attention;
    bool use_stop_gradient = true;
    Objective objective = Objective::sspl;
    float temperature = 0.07f;
    bool infonce_class_mask = false;
    uint64_t init_seed = 1;
};

/// The three-stream model: a shared visual encoder over two augmented views,
/// the audio stream, attention-based fusion, and the projection/prediction
/// heads, optionally with the predictive coding module aligning visual
/// features to audio before fusion.
template <class T>
struct Model {
    ModelConfig cfg;
    VisualEncoder<T> enc_v;
    AudioEncoder<T> enc_a;
    HeadStack<T> heads;
    PCM<T> pcm;               // constructed only when cfg.use_pcm
    nn::Conv2d<T> concat_proj; // constructed only for concat fusion

    static Model create(const ModelConfig& cfg) {
        Model m;
        m.cfg = cfg;
        Rng rng(cfg.init_seed, 0xC0DE);
        m.enc_v = VisualEncoder<T>::create(cfg.enc, rng);
        m.enc_a = AudioEncoder<T>::create(cfg.enc, rng);
        m.heads = HeadStack<T>::create(cfg.enc, rng);
        if (cfg.use_pcm) {
            PCMConfig pc;
            pc.layers = cfg.pcm_layers;
            pc.cycles = cfg.pcm_cycles;
            pc.c_v = cfg.enc.c_v;
            pc.c_a = cfg.enc.c_a;
            pc.top_h = cfg.enc.image_size / 8;
            pc.top_w = cfg.enc.image_size / 8;
            m.pcm = PCM<T>::create(pc, rng);
        }
        if (cfg.fusion == FusionMode::concat)
            m.concat_proj =
                nn::Conv2d<T>::create(2 * cfg.enc.c_v, cfg.enc.c_v, 1, 1, 0, rng, true);
        return m;
    }

    /// Audio-visual representation of one view stream.
    Tensor<T> view_representation(const Tensor<T>& view, const Tensor<T>& f_a,
                                  const Tensor<T>& f_a_t, bool training) const {
        auto f_v = enc_v.forward(view, training);
        if (cfg.use_pcm) f_v = pcm.run(f_v, f_a, training);
        return fuse_baseline<T>(f_v, f_a_t, cfg.fusion, cfg.scaling,
                                cfg.fusion == FusionMode::concat ? &concat_proj : nullptr);
    }

    struct TrainOutput {
        Tensor<T> loss;
        T term_12 = 0, term_21 = 0;
        T collapse = 0;
        int infonce_skipped = 0;
    };

    /// Projections of both view streams (z^1, z^2) for the symmetric loss.
    std::pair<Tensor<T>, Tensor<T>> project_views(const Tensor<T>& views1,
                                                  const Tensor<T>& views2, const Tensor<T>& specs,
                                                  bool training) const {
        auto f_a = enc_a.forward(specs, training);
        auto f_a_t = heads.transform_audio(f_a);
        auto z1 = heads.project(view_representation(views1, f_a, f_a_t, training), training);
        auto z2 = heads.project(view_representation(views2, f_a, f_a_t, training), training);
        return {z1, z2};
    }

    /// One training forward pass over a batch of paired views.
    TrainOutput train_forward(const Tensor<T>& views1, const Tensor<T>& views2,
                              const Tensor<T>& specs, const std::vector<int>& class_ids) const {
        TrainOutput out;
        if (cfg.objective == Objective::sspl) {
            auto [z1, z2] = project_views(views1, views2, specs, true);
            auto pred = [this](const Tensor<T>& z) { return heads.predict(z, true); };
            auto rep = sspl_loss<T>(pred, z1, z2, cfg.use_stop_gradient);
            out.loss = rep.total;
            out.term_12 = rep.term_12;
            out.term_21 = rep.term_21;
            out.collapse = rep.collapse;
        } else {
            auto f_a = enc_a.forward(specs, true);
            auto f_a_t = heads.transform_audio(f_a);
            auto f_av = view_representation(views1, f_a, f_a_t, true);
            std::vector<uint8_t> mask;
            const std::vector<uint8_t>* mask_ptr = nullptr;
            if (cfg.infonce_class_mask) {
                const int b = static_cast<int>(class_ids.size());
                mask.assign(static_cast<size_t>(b) * b, 0);
                for (int i = 0; i < b; ++i)
                    for (int j = 0; j < b; ++j)
                        if (i != j && class_ids[i] == class_ids[j])
                            mask[static_cast<size_t>(i) * b + j] = 1;
                mask_ptr = &mask;
            }
            out.loss = infonce_baseline<T>(f_av, f_a_t, static_cast<T>(cfg.temperature), mask_ptr,
                                           &out.infonce_skipped);
            out.term_12 = out.term_21 = out.loss.item();
            out.collapse = collapse_metric(f_av.detach());
        }
        return out;
    }

    /// Image-scale localization maps for a batch of deterministic views:
    /// the minmax-scaled similarity map of each sample, bilinearly resized.
    /// Returns [b, H, W]; optionally also one map per PCM cycle.
    Tensor<T> localization_maps(const Tensor<T>& views, const Tensor<T>& specs,
                                int pcm_cycles_override = -1,
                                std::vector<Tensor<T>>* per_cycle_maps = nullptr) const {
        NoGradScope<T> ng;
        const int b = views.dim(0), S = views.dim(2);
        auto f_a = enc_a.forward(specs, false);
        auto f_a_t = heads.transform_audio(f_a);
        auto f_v = enc_v.forward(views, false);
        std::vector<Tensor<T>> per_cycle_feats;
        if (cfg.use_pcm)
            f_v = pcm.run(f_v, f_a, false, pcm_cycles_override,
                          per_cycle_maps ? &per_cycle_feats : nullptr);
        auto to_image_scale = [&](const Tensor<T>& feat) {
            auto s = minmax_map(similarity_map(f_a_t, feat));
            auto up = bilinear_resize(reshape(s, {b, 1, s.dim(1), s.dim(2)}), S, S);
            return reshape(up, {b, S, S});
        };
        if (per_cycle_maps)
            for (auto& feat : per_cycle_feats) per_cycle_maps->push_back(to_image_scale(feat));
        return to_image_scale(f_v);
    }

    void collect(nn::ParamList<T>& out) const {
        enc_v.collect("enc_v", out);
        enc_a.collect("enc_a", out);
        heads.collect("heads", out);
        if (cfg.use_pcm) pcm.collect("pcm", out);
        if (cfg.fusion == FusionMode::concat) concat_proj.collect("concat_proj", out);
    }

    /// Projection + prediction parameters (the fast learning-rate group).
    std::vector<Tensor<T>> head_group() const {
        nn::ParamList<T> list;
        heads.collect_head_group("heads", list);
        std::vector<Tensor<T>> out;
        for (auto& p : list)
            if (p.trainable) out.push_back(p.tensor);
        return out;
    }

    /// Everything trainable outside the head group.
    std::vector<Tensor<T>> rest_group() const {
        nn::ParamList<T> all, headsl;
        collect(all);
        heads.collect_head_group("heads", headsl);
        auto in_heads = [&](const std::string& name) {
            for (auto& h : headsl)
                if (h.name == name) return true;
            return false;
        };
        std::vector<Tensor<T>> out;
        for (auto& p : all)
            if (p.trainable && !in_heads(p.name)) out.push_back(p.tensor);
        return out;
    }
};

} // namespace sspl
