#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "edmae/config.hpp"
#include "edmae/metrics.hpp"
#include "edmae/train.hpp"

namespace edmae {

struct AblationDatasets {
    const ImageDataset* pretrain = nullptr;
    const ImageDataset* cls_train = nullptr;
    const ImageDataset* cls_val = nullptr;
    const ImageDataset* cls_test = nullptr;
};

struct AblationArm {
    std::string name;
    double value = 0.0;               // mask ratio or align weight
    double mean_oa = 0.0;             // means over seeds
    double mean_precision = 0.0;
    double mean_recall = 0.0;
    double mean_specificity = 0.0;
    double mean_f1 = 0.0;
};

struct AblationResult {
    std::vector<AblationArm> arms;
    std::string csv;
    std::string table;
};

// Pretrain + classification fine-tune per arm with paired seeds (the same
// root seeds across arms). Metrics are macro means over classes, averaged
// over seeds.

// mask-ratio sweep over {0.25, 0.50, 0.60, 0.75, 0.90}
AblationResult run_mask_sweep(const TrainConfig& base, const AblationDatasets& data,
                              const std::vector<std::uint64_t>& seeds,
                              const std::filesystem::path& out_dir, std::ostream* log = nullptr);

// feature alignment on/off: align_weight 0 vs the base value (2 rows)
AblationResult run_alignment_ablation(const TrainConfig& base, const AblationDatasets& data,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::filesystem::path& out_dir,
                                      std::ostream* log = nullptr);

}  // namespace edmae
