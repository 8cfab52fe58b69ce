#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace edmae {

// Flat hyperparameter set shared by pretraining and both fine-tuning tasks.
// Every field maps to one config-file key and one CLI flag; flags win.
struct TrainConfig {
    std::uint64_t seed = 42;
    int epochs = 20;
    int batch = 16;

    // AdamW
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;

    // ReduceLROnPlateau
    float sched_factor = 0.1f;
    int sched_patience = 10;
    float sched_threshold = 1e-4f;
    float sched_min_lr = 1e-6f;

    // masked pretraining
    double mask_ratio = 0.75;
    float momentum = 0.99f;      // EMA momentum m
    float align_weight = 1.0f;   // lambda
    std::string recon_scope = "masked";  // masked | full
    int patch = 8;
    int checkpoint_every = 0;    // epochs between periodic checkpoints; 0 = final only

    // downstream tasks
    int classes = 4;
    std::string loss = "focal";  // segmentation loss: focal | ce
    float focal_gamma = 2.0f;
    float focal_alpha = 0.25f;
    bool freeze_encoder = false;

    void validate() const;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// `key=value` lines; '#' starts a comment; blank lines ignored.
KeyValues parse_config_file(const std::filesystem::path& path);

// Applies keys in order; unknown keys are rejected, not ignored.
void apply_config(TrainConfig& cfg, const KeyValues& kv);

}  // namespace edmae
