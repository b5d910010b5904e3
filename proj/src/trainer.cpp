#include "sspl/trainer.hpp"

#include <algorithm>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sspl/optim.hpp"
#include "sspl/ppm.hpp"

namespace sspl {

namespace {

// Stream-id bases keep the per-purpose random streams of one seed apart.
constexpr uint64_t kShuffleStream = 0xE9000000ULL;
constexpr uint64_t kAugmentStream = 0x10000000ULL;

std::string fmt(const char* f, ...) {
    char buf[256];
    va_list args;
    va_start(args, f);
    vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

struct Batch {
    Tensor<float> views1, views2, specs;
    std::vector<int> class_ids;
};

Batch assemble_batch(const Dataset& data, const std::vector<int>& indices, size_t begin,
                     size_t count, const TrainSettings& s, int epoch) {
    const int S = data.image_size;
    Batch b;
    b.views1 = Tensor<float>::zeros({static_cast<int>(count), 3, S, S});
    b.views2 = Tensor<float>::zeros({static_cast<int>(count), 3, S, S});
    b.specs = Tensor<float>::zeros({static_cast<int>(count), data.spec_bins, data.spec_frames});
    const int64_t img_n = static_cast<int64_t>(3) * S * S;
    const int64_t spec_n = static_cast<int64_t>(data.spec_bins) * data.spec_frames;
    for (size_t i = 0; i < count; ++i) {
        const int idx = indices[begin + i];
        const ScenePair& p = data.pairs[static_cast<size_t>(idx)];
        Rng rng(s.seed,
                kAugmentStream + static_cast<uint64_t>(epoch) * data.pairs.size() +
                    static_cast<uint64_t>(idx));
        auto v1 = augment_view(p, s.augment, rng);
        auto v2 = augment_view(p, s.augment, rng);
        std::copy_n(v1.image.data(), img_n, b.views1.data() + static_cast<int64_t>(i) * img_n);
        std::copy_n(v2.image.data(), img_n, b.views2.data() + static_cast<int64_t>(i) * img_n);
        std::copy_n(p.spectrogram.data(), spec_n, b.specs.data() + static_cast<int64_t>(i) * spec_n);
        b.class_ids.push_back(p.class_id);
    }
    return b;
}

EvalReport evaluate_indices(const Model<float>& model, const Dataset& data,
                            const std::vector<int>& indices, int pcm_cycles_override) {
    if (indices.empty()) throw UsageError("evaluate: empty sample list");
    const int S = data.image_size;
    std::vector<float> cious;
    cious.reserve(indices.size());
    const size_t chunk = 64;
    for (size_t at = 0; at < indices.size(); at += chunk) {
        const size_t n = std::min(chunk, indices.size() - at);
        auto views = Tensor<float>::zeros({static_cast<int>(n), 3, S, S});
        auto specs =
            Tensor<float>::zeros({static_cast<int>(n), data.spec_bins, data.spec_frames});
        std::vector<Box> boxes(n);
        const int64_t img_n = static_cast<int64_t>(3) * S * S;
        const int64_t spec_n = static_cast<int64_t>(data.spec_bins) * data.spec_frames;
        for (size_t i = 0; i < n; ++i) {
            const ScenePair& p = data.pairs[static_cast<size_t>(indices[at + i])];
            auto v = center_view(p);
            std::copy_n(v.image.data(), img_n, views.data() + static_cast<int64_t>(i) * img_n);
            std::copy_n(p.spectrogram.data(), spec_n,
                        specs.data() + static_cast<int64_t>(i) * spec_n);
            boxes[i] = v.box;
        }
        auto maps = model.localization_maps(views, specs, pcm_cycles_override);
        for (size_t i = 0; i < n; ++i) {
            auto one = Tensor<float>::zeros({S, S});
            std::copy_n(maps.data() + static_cast<int64_t>(i) * S * S,
                        static_cast<int64_t>(S) * S, one.data());
            cious.push_back(per_sample_ciou(binarize_map(one), box_mask(boxes[i], S, S)));
        }
    }
    return build_report(std::move(cious));
}

struct Snapshot {
    std::vector<std::vector<float>> buffers;
    std::vector<MomentPair> moments;
    uint64_t opt_step = 0;
};

Snapshot take_snapshot(const nn::ParamList<float>& params, AdamW<float>& opt) {
    Snapshot s;
    for (const auto& p : params) s.buffers.push_back(p.tensor.vec());
    for (size_t k = 0; k < opt.param_count(); ++k)
        s.moments.push_back({opt.moment1(k), opt.moment2(k)});
    s.opt_step = static_cast<uint64_t>(opt.step_count());
    return s;
}

void restore_snapshot(const Snapshot& s, const nn::ParamList<float>& params) {
    for (size_t i = 0; i < params.size(); ++i)
        std::copy(s.buffers[i].begin(), s.buffers[i].end(),
                  const_cast<float*>(params[i].tensor.data()));
}

} // namespace

TrainSettings settings_from_config(const KeyValueConfig& cfg) {
    TrainSettings s;
    s.dataset = cfg.get_str("dataset", s.dataset);
    s.checkpoint_out = cfg.get_str("checkpoint", s.checkpoint_out);
    s.log_out = cfg.get_str("log", s.log_out);
    s.epochs = static_cast<int>(cfg.get_int("epochs", s.epochs));
    s.batch_size = static_cast<int>(cfg.get_int("batch_size", s.batch_size));
    s.lr_heads = static_cast<float>(cfg.get_double("lr_heads", s.lr_heads));
    s.lr_rest = static_cast<float>(cfg.get_double("lr_rest", s.lr_rest));
    s.weight_decay = static_cast<float>(cfg.get_double("weight_decay", s.weight_decay));
    s.beta1 = static_cast<float>(cfg.get_double("beta1", s.beta1));
    s.beta2 = static_cast<float>(cfg.get_double("beta2", s.beta2));
    s.seed = static_cast<uint64_t>(cfg.get_int("seed", static_cast<int64_t>(s.seed)));
    s.use_pcm = cfg.get_bool("use_pcm", s.use_pcm);
    s.pcm_cycles = static_cast<int>(cfg.get_int("pcm_cycles", s.pcm_cycles));
    s.scaling = cfg.get_str("scaling", s.scaling);
    s.fusion = cfg.get_str("fusion", s.fusion);
    s.stop_gradient = cfg.get_bool("stop_gradient", s.stop_gradient);
    s.objective = cfg.get_str("objective", s.objective);
    s.infonce_mask = cfg.get_bool("infonce_mask", s.infonce_mask);
    s.temperature = static_cast<float>(cfg.get_double("temperature", s.temperature));
    s.patience = static_cast<int>(cfg.get_int("patience", s.patience));
    s.val_fraction = static_cast<float>(cfg.get_double("val_fraction", s.val_fraction));
    s.augment.hflip = cfg.get_bool("aug_hflip", s.augment.hflip);
    s.augment.vflip = cfg.get_bool("aug_vflip", s.augment.vflip);
    s.augment.translation = cfg.get_bool("aug_translation", s.augment.translation);
    s.augment.rotation = cfg.get_bool("aug_rotation", s.augment.rotation);
    s.augment.grayscale = cfg.get_bool("aug_grayscale", s.augment.grayscale);
    s.augment.color_jitter = cfg.get_bool("aug_color_jitter", s.augment.color_jitter);
    s.augment.gaussian_blur = cfg.get_bool("aug_gaussian_blur", s.augment.gaussian_blur);
    if (s.epochs < 1 || s.batch_size < 2) throw ConfigError("train: epochs >= 1, batch >= 2");
    if (s.lr_heads <= 0 || s.lr_rest <= 0) throw ConfigError("train: learning rates must be > 0");
    return s;
}

KeyValueConfig settings_to_config(const TrainSettings& s) {
    KeyValueConfig c;
    c.set("dataset", s.dataset);
    c.set("checkpoint", s.checkpoint_out);
    if (!s.log_out.empty()) c.set("log", s.log_out);
    c.set("epochs", std::to_string(s.epochs));
    c.set("batch_size", std::to_string(s.batch_size));
    c.set("lr_heads", fmt("%g", s.lr_heads));
    c.set("lr_rest", fmt("%g", s.lr_rest));
    c.set("weight_decay", fmt("%g", s.weight_decay));
    c.set("beta1", fmt("%g", s.beta1));
    c.set("beta2", fmt("%g", s.beta2));
    c.set("seed", std::to_string(s.seed));
    c.set("use_pcm", s.use_pcm ? "true" : "false");
    c.set("pcm_cycles", std::to_string(s.pcm_cycles));
    c.set("scaling", s.scaling);
    c.set("fusion", s.fusion);
    c.set("stop_gradient", s.stop_gradient ? "true" : "false");
    c.set("objective", s.objective);
    c.set("infonce_mask", s.infonce_mask ? "true" : "false");
    c.set("temperature", fmt("%g", s.temperature));
    c.set("patience", std::to_string(s.patience));
    c.set("val_fraction", fmt("%g", s.val_fraction));
    c.set("aug_hflip", s.augment.hflip ? "true" : "false");
    c.set("aug_vflip", s.augment.vflip ? "true" : "false");
    c.set("aug_translation", s.augment.translation ? "true" : "false");
    c.set("aug_rotation", s.augment.rotation ? "true" : "false");
    c.set("aug_grayscale", s.augment.grayscale ? "true" : "false");
    c.set("aug_color_jitter", s.augment.color_jitter ? "true" : "false");
    c.set("aug_gaussian_blur", s.augment.gaussian_blur ? "true" : "false");
    return c;
}

ModelConfig model_config_from_settings(const TrainSettings& s, const Dataset& ds) {
    ModelConfig mc;
    mc.enc.image_size = ds.image_size;
    mc.enc.spec_bins = ds.spec_bins;
    mc.enc.spec_frames = ds.spec_frames;
    if (ds.image_size % 8) throw ConfigError("model: image size must be divisible by 8");
    mc.use_pcm = s.use_pcm;
    mc.pcm_cycles = s.pcm_cycles;
    mc.scaling = scaling_from_string(s.scaling);
    mc.fusion = fusion_from_string(s.fusion);
    mc.use_stop_gradient = s.stop_gradient;
    mc.objective = objective_from_string(s.objective);
    mc.temperature = s.temperature;
    mc.infonce_class_mask = s.infonce_mask;
    mc.init_seed = s.seed;
    return mc;
}

TrainResult train_model(Model<float>& model, const Dataset& data, const TrainSettings& s,
                        std::ostream* echo) {
    if (data.pairs.empty()) throw UsageError("train: empty dataset");

    // deterministic validation split by index
    std::vector<int> train_idx, val_idx;
    const int stride =
        s.val_fraction > 0 ? std::max(2, static_cast<int>(std::lround(1.0 / s.val_fraction))) : 0;
    for (int i = 0; i < static_cast<int>(data.pairs.size()); ++i) {
        if (stride > 0 && i % stride == 0)
            val_idx.push_back(i);
        else
            train_idx.push_back(i);
    }
    if (train_idx.empty()) throw ConfigError("train: validation split leaves no training data");

    AdamW<float> opt(s.beta1, s.beta2, 1e-8f, s.weight_decay);
    opt.add_group(model.head_group(), s.lr_heads);
    opt.add_group(model.rest_group(), s.lr_rest);

    nn::ParamList<float> state;
    model.collect(state);

    TrainResult result;
    Snapshot best;
    int since_best = 0;

    for (int epoch = 0; epoch < s.epochs; ++epoch) {
        // deterministic shuffle per epoch
        std::vector<int> order = train_idx;
        Rng shuffle_rng(s.seed, kShuffleStream + static_cast<uint64_t>(epoch));
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = shuffle_rng.uniform_int(i);
            std::swap(order[i - 1], order[j]);
        }

        double loss_sum = 0, collapse_sum = 0;
        int batches = 0;
        for (size_t at = 0; at + 2 <= order.size(); at += static_cast<size_t>(s.batch_size)) {
            const size_t n =
                std::min(static_cast<size_t>(s.batch_size), order.size() - at);
            if (n < 2) break; // batch norm requires at least two samples
            Batch batch = assemble_batch(data, order, at, n, s, epoch);

            Tape<float> tape;
            TapeScope<float> scope(tape);
            auto out = model.train_forward(batch.views1, batch.views2, batch.specs,
                                           batch.class_ids);
            const float loss = out.loss.item();
            if (!std::isfinite(loss))
                throw NumericError(fmt(
                    "train: non-finite loss at epoch %d batch %d (seed %llu); aborting",
                    epoch, batches, static_cast<unsigned long long>(s.seed)));
            opt.zero_grad();
            tape.backward(out.loss);
            opt.step();
            loss_sum += loss;
            collapse_sum += out.collapse;
            ++batches;
        }

        result.final_loss = static_cast<float>(loss_sum / std::max(1, batches));
        result.final_collapse = static_cast<float>(collapse_sum / std::max(1, batches));
        result.epochs_run = epoch + 1;

        float val_success = 0;
        if (!val_idx.empty()) {
            auto val_report = evaluate_indices(model, data, val_idx, -1);
            val_success = val_report.ciou_at_half;
        }
        const std::string line =
            fmt("epoch=%03d loss=%+.6f collapse=%.6f val_success=%.4f\n", epoch,
                result.final_loss, result.final_collapse, val_success);
        result.metrics_log += line;
        if (echo) (*echo) << line << std::flush;

        if (val_idx.empty()) continue;
        if (result.best_epoch < 0 || val_success > result.best_val_success) {
            result.best_val_success = val_success;
            result.best_epoch = epoch;
            best = take_snapshot(state, opt);
            since_best = 0;
        } else if (++since_best >= s.patience) {
            const std::string stop =
                fmt("early_stop epoch=%03d best=%.4f\n", epoch, result.best_val_success);
            result.metrics_log += stop;
            if (echo) (*echo) << stop << std::flush;
            break;
        }
    }

    if (result.best_epoch >= 0) {
        restore_snapshot(best, state);
        result.moments = std::move(best.moments);
        result.optimizer_steps = best.opt_step;
    } else {
        for (size_t k = 0; k < opt.param_count(); ++k)
            result.moments.push_back({opt.moment1(k), opt.moment2(k)});
        result.optimizer_steps = static_cast<uint64_t>(opt.step_count());
    }
    return result;
}

EvalReport evaluate_model(const Model<float>& model, const Dataset& data,
                          int pcm_cycles_override) {
    std::vector<int> all(data.pairs.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return evaluate_indices(model, data, all, pcm_cycles_override);
}

std::string run_ablation(const std::string& axis, const TrainSettings& base, const Dataset& train,
                         const Dataset& test, std::ostream* echo) {
    struct Variant {
        std::string label;
        TrainSettings s;
    };
    std::vector<Variant> variants;
    auto with = [&](const std::string& label, auto&& tweak) {
        TrainSettings s = base;
        tweak(s);
        variants.push_back({label, s});
    };

    if (axis == "scaling") {
        for (const char* m : {"relu", "sigmoid", "softmax", "relu_softmax", "minmax"})
            with(m, [m](TrainSettings& s) { s.scaling = m; });
    } else if (axis == "stop_gradient") {
        with("on", [](TrainSettings& s) { s.stop_gradient = true; });
        with("off", [](TrainSettings& s) { s.stop_gradient = false; });
    } else if (axis == "pcm_T") {
        for (int t : {1, 3, 5, 6, 7, 8})
            with(std::to_string(t), [t](TrainSettings& s) {
                s.use_pcm = true;
                s.pcm_cycles = t;
            });
    } else if (axis == "fusion") {
        for (const char* m : {"concat", "multiply", "add", "attention"})
            with(m, [m](TrainSettings& s) { s.fusion = m; });
    } else if (axis == "augmentation") {
        with("crop", [](TrainSettings& s) { s.augment = AugmentConfig{}; s.augment.hflip = false; });
        with("crop+hflip", [](TrainSettings& s) { s.augment = AugmentConfig{}; });
        with("+vflip", [](TrainSettings& s) { s.augment = AugmentConfig{}; s.augment.vflip = true; });
        with("+translation",
             [](TrainSettings& s) { s.augment = AugmentConfig{}; s.augment.translation = true; });
        with("+rotation",
             [](TrainSettings& s) { s.augment = AugmentConfig{}; s.augment.rotation = true; });
        with("+grayscale",
             [](TrainSettings& s) { s.augment = AugmentConfig{}; s.augment.grayscale = true; });
        with("+color_jitter",
             [](TrainSettings& s) { s.augment = AugmentConfig{}; s.augment.color_jitter = true; });
        with("+gaussian_blur",
             [](TrainSettings& s) { s.augment = AugmentConfig{}; s.augment.gaussian_blur = true; });
    } else if (axis == "negatives") {
        with("infonce_with_false_negatives", [](TrainSettings& s) {
            s.objective = "infonce";
            s.infonce_mask = false;
        });
        with("infonce_class_masked", [](TrainSettings& s) {
            s.objective = "infonce";
            s.infonce_mask = true;
        });
    } else {
        throw UsageError("ablate: unknown axis '" + axis + "'");
    }

    std::string table = "axis_value,success_at_0.5,auc,final_collapse\n";
    if (echo) (*echo) << table << std::flush;
    for (const auto& v : variants) {
        auto model = Model<float>::create(model_config_from_settings(v.s, train));
        auto tr = train_model(model, train, v.s, nullptr);
        auto report = evaluate_model(model, test, -1);
        const std::string row = fmt("%s,%.4f,%.4f,%.6f\n", v.label.c_str(),
                                    report.ciou_at_half, report.auc, tr.final_collapse);
        table += row;
        if (echo) (*echo) << row << std::flush;
    }
    return table;
}

void visualize_samples(const Model<float>& model, const Dataset& data,
                       const std::vector<int>& sample_indices, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const int S = data.image_size;
    for (int idx : sample_indices) {
        if (idx < 0 || idx >= static_cast<int>(data.pairs.size()))
            throw UsageError("visualize: sample index out of range: " + std::to_string(idx));
        const ScenePair& p = data.pairs[static_cast<size_t>(idx)];
        auto view = center_view(p);

        auto views = reshape(view.image, {1, 3, S, S});
        auto specs = reshape(p.spectrogram.clone(), {1, data.spec_bins, data.spec_frames});
        std::vector<Tensor<float>> per_cycle;
        auto final_map = model.localization_maps(views, specs, -1, &per_cycle);
        if (per_cycle.empty()) per_cycle.push_back(final_map);

        // input image with the ground-truth outline in red
        std::vector<uint8_t> rgb(static_cast<size_t>(S) * S * 3);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                for (int c = 0; c < 3; ++c)
                    rgb[(static_cast<size_t>(y) * S + x) * 3 + c] = static_cast<uint8_t>(
                        std::lround(255 * std::clamp(view.image.data()[(c * S + y) * S + x], 0.0f,
                                                     1.0f)));
        const int x0 = std::clamp(static_cast<int>(std::lround(view.box.x_min)), 0, S - 1);
        const int x1 = std::clamp(static_cast<int>(std::lround(view.box.x_max)) - 1, 0, S - 1);
        const int y0 = std::clamp(static_cast<int>(std::lround(view.box.y_min)), 0, S - 1);
        const int y1 = std::clamp(static_cast<int>(std::lround(view.box.y_max)) - 1, 0, S - 1);
        auto mark = [&](int x, int y) {
            uint8_t* px = &rgb[(static_cast<size_t>(y) * S + x) * 3];
            px[0] = 255;
            px[1] = 0;
            px[2] = 0;
        };
        for (int x = x0; x <= x1; ++x) {
            mark(x, y0);
            mark(x, y1);
        }
        for (int y = y0; y <= y1; ++y) {
            mark(x0, y);
            mark(x1, y);
        }
        write_rgb_pixmap(out_dir + "/" + std::to_string(idx) + "_input.ppm", S, S, rgb);

        for (size_t t = 0; t < per_cycle.size(); ++t) {
            // bilinear resizing interpolates strictly inside the extremes, so
            // the exported bytes are min-max rescaled once more per map
            float lo = per_cycle[t].data()[0], hi = lo;
            for (int i = 1; i < S * S; ++i) {
                lo = std::min(lo, per_cycle[t].data()[i]);
                hi = std::max(hi, per_cycle[t].data()[i]);
            }
            const float range = hi - lo;
            std::vector<uint8_t> gray(static_cast<size_t>(S) * S);
            for (int i = 0; i < S * S; ++i) {
                const float v = range < 1e-8f ? 0.5f : (per_cycle[t].data()[i] - lo) / range;
                gray[static_cast<size_t>(i)] =
                    static_cast<uint8_t>(std::lround(255 * std::clamp(v, 0.0f, 1.0f)));
            }
            write_gray_pixmap(
                out_dir + "/" + std::to_string(idx) + "_t" + std::to_string(t + 1) + ".ppm", S, S,
                gray);
        }
    }
}

void save_model_checkpoint(const Model<float>& model, const TrainSettings& s, uint32_t epoch,
                           uint64_t opt_step, const std::vector<MomentPair>& moments,
                           const std::string& path) {
    nn::ParamList<float> params;
    model.collect(params);
    CheckpointMeta meta;
    auto echo = settings_to_config(s);
    echo.set("trained_image_size", std::to_string(model.cfg.enc.image_size));
    echo.set("trained_spec_bins", std::to_string(model.cfg.enc.spec_bins));
    echo.set("trained_spec_frames", std::to_string(model.cfg.enc.spec_frames));
    meta.config_text = echo.to_text();
    meta.epoch = epoch;
    meta.seed = s.seed;
    meta.optimizer_step = opt_step;
    checkpoint_save(path, meta, params, moments);
}

LoadedModel load_model_checkpoint(const std::string& path, const Dataset& dims_reference) {
    auto raw = checkpoint_read(path);
    KeyValueConfig cfg;
    {
        // the config echo is `key = value` text; parse it line by line
        std::istringstream in(raw.meta.config_text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            cfg.set_assignment(line);
        }
    }
    const int t_img = static_cast<int>(cfg.get_int("trained_image_size", dims_reference.image_size));
    const int t_bins = static_cast<int>(cfg.get_int("trained_spec_bins", dims_reference.spec_bins));
    const int t_frames =
        static_cast<int>(cfg.get_int("trained_spec_frames", dims_reference.spec_frames));
    if (t_img != dims_reference.image_size || t_bins != dims_reference.spec_bins ||
        t_frames != dims_reference.spec_frames)
        throw FormatError("checkpoint: trained dims " + std::to_string(t_img) + "x" +
                              std::to_string(t_bins) + "x" + std::to_string(t_frames) +
                              " do not match the dataset",
                          0);
    TrainSettings settings = settings_from_config(cfg);
    LoadedModel lm{Model<float>::create(model_config_from_settings(settings, dims_reference)),
                   std::move(settings), raw.meta};
    nn::ParamList<float> params;
    lm.model.collect(params);
    checkpoint_apply(raw, params);
    return lm;
}

} // namespace sspl
