#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "sspl/checkpoint.hpp"
#include "sspl/config.hpp"
#include "sspl/evalmetrics.hpp"
#include "sspl/model.hpp"
#include "sspl/synthdata.hpp"

namespace sspl {

/// Resolved training configuration (defaults overridable via key=value config
/// files and --set flags; see settings_from_config for the key names).
struct TrainSettings {
    std::string dataset;
    std::string checkpoint_out = "model.ckpt";
    std::string log_out;
    int epochs = 30;
    int batch_size = 64;
    float lr_heads = 2e-3f;
    float lr_rest = 5e-4f;
    float weight_decay = 1e-4f;
    float beta1 = 0.9f, beta2 = 0.999f;
    uint64_t seed = 1;
    bool use_pcm = true;
    int pcm_cycles = 5;
    std::string scaling = "minmax";
    std::string fusion = "attention";
    bool stop_gradient = true;
    std::string objective = "sspl";
    bool infonce_mask = false;
    float temperature = 0.07f;
    int patience = 5;
    float val_fraction = 0.1f;
    AugmentConfig augment;
};

TrainSettings settings_from_config(const KeyValueConfig& cfg);
KeyValueConfig settings_to_config(const TrainSettings& s);

ModelConfig model_config_from_settings(const TrainSettings& s, const Dataset& ds);

struct TrainResult {
    int epochs_run = 0;
    float final_loss = 0;
    float final_collapse = 0;
    float best_val_success = 0;
    int best_epoch = -1;
    uint64_t optimizer_steps = 0;
    std::vector<MomentPair> moments; // aligned with the best-epoch weights
    std::string metrics_log;         // one line per epoch, deterministic formatting
};

/// Trains in place and leaves the model at its best-validation state. Lines of
/// the metrics log go to `echo` as they are produced when non-null.
TrainResult train_model(Model<float>& model, const Dataset& data, const TrainSettings& s,
                        std::ostream* echo = nullptr);

/// Deterministic evaluation: center views, minmax similarity maps at image
/// scale, cIoU against the view-space ground-truth boxes.
EvalReport evaluate_model(const Model<float>& model, const Dataset& data,
                          int pcm_cycles_override = -1);

/// Trains + evaluates one run per axis value with a shared seed and dataset;
/// returns the table as text (one row per value).
std::string run_ablation(const std::string& axis, const TrainSettings& base, const Dataset& train,
                         const Dataset& test, std::ostream* echo = nullptr);

/// Writes `<index>_input.ppm` (canonical view + ground-truth outline) and
/// `<index>_t<t>.ppm` heatmaps for each requested sample.
void visualize_samples(const Model<float>& model, const Dataset& data,
                       const std::vector<int>& sample_indices, const std::string& out_dir);

/// Full checkpoint round trip for a model + optional optimizer state.
void save_model_checkpoint(const Model<float>& model, const TrainSettings& s, uint32_t epoch,
                           uint64_t opt_step, const std::vector<MomentPair>& moments,
                           const std::string& path);

struct LoadedModel {
    Model<float> model;
    TrainSettings settings;
    CheckpointMeta meta;
};
LoadedModel load_model_checkpoint(const std::string& path, const Dataset& dims_reference);

} // namespace sspl
