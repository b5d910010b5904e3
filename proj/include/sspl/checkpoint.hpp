#pragma once

#include <string>
#include <vector>

#include "sspl/nn.hpp"

namespace sspl {

/// Serialized training state: every named tensor of the model (weights and
/// batch-norm statistics), the optimizer's moment buffers for the trainable
/// subset, a config echo, the epoch, and the PRNG cursor (seed + next epoch).
struct CheckpointMeta {
    std::string config_text;
    uint32_t epoch = 0;
    uint64_t seed = 0;
    uint64_t optimizer_step = 0;
};

struct MomentPair {
    std::vector<float> m, v;
};

/// Writes the checkpoint; `moments` lines up with the trainable entries of
/// `params` in order (may be empty when no optimizer state exists).
void checkpoint_save(const std::string& path, const CheckpointMeta& meta,
                     const nn::ParamList<float>& params, const std::vector<MomentPair>& moments);

/// Reads a checkpoint's metadata and raw named buffers.
struct RawCheckpoint {
    CheckpointMeta meta;
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::vector<float> data;
    };
    std::vector<Entry> entries;
    std::vector<MomentPair> moments;
};
RawCheckpoint checkpoint_read(const std::string& path);

/// Copies raw entries into the model's named tensors. Every model tensor must
/// be present with a matching shape; unknown or missing names are format
/// errors naming the parameter.
void checkpoint_apply(const RawCheckpoint& raw, const nn::ParamList<float>& params);

} // namespace sspl
