#pragma once

#include <atomic>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "edmae/config.hpp"
#include "edmae/metrics.hpp"
#include "edmae/model.hpp"
#include "edmae/synth.hpp"

namespace edmae {

struct FocalParams {
    float gamma = 2.0f;
    float alpha = 0.25f;
};

// In-memory dataset view of a manifest; images are [1,H,W] tensors.
struct ImageDataset {
    std::vector<Tensor> images;
    std::vector<int> labels;   // -1 where unlabeled
    std::vector<Tensor> masks; // empty tensors where absent
    int height = 0;
    int width = 0;

    static ImageDataset load(const DatasetManifest& manifest);
    std::size_t size() const { return images.size(); }

    Tensor batch_images(const std::vector<int>& order, std::size_t first, std::size_t count) const;
    std::vector<int> batch_labels(const std::vector<int>& order, std::size_t first,
                                  std::size_t count) const;
    // per-pixel labels (0 background / 1 foreground), row-major over the batch
    std::vector<int> batch_mask_labels(const std::vector<int>& order, std::size_t first,
                                       std::size_t count) const;
};

// Set by the CLI's signal handler; training loops poll it between steps and
// stop cleanly after writing a checkpoint.
std::atomic<bool>& train_interrupt_flag();

DenseEncoderConfig default_encoder_config();

struct EpochRow {
    int epoch = 0;
    long step = 0;
    double align_loss = 0.0;
    double recon_loss = 0.0;
    double total_loss = 0.0;
    float lr = 0.0f;
};

struct PretrainResult {
    EdmaeModel model;
    std::vector<EpochRow> curve;
    std::filesystem::path checkpoint_path;  // empty when out_dir was empty
    bool interrupted = false;
};

// Self-supervised pretraining. Per step: batched forward, backward, AdamW on
// teacher+decoder, then the EMA update of the student. Writes
// `pretrain_curve.csv` (epoch,step,align_loss,recon_loss,total_loss,lr) and
// `checkpoint_final.edmk` under out_dir (pass an empty path to skip files).
// A non-finite loss aborts with the last epoch-start state saved as
// `checkpoint_abort.edmk`.
PretrainResult pretrain(const TrainConfig& cfg, const ImageDataset& data,
                        const std::filesystem::path& out_dir, std::ostream* log = nullptr);

// ---- classification ---------------------------------------------------------

struct ClassifierModel {
    DenseEncoder encoder;
    Tensor head_w;  // [C,K]
    Tensor head_b;  // [K]
    int classes = 0;

    Tensor forward(const Tensor& images) const;  // [N,K] logits
    std::vector<Tensor> parameters() const;

    Checkpoint to_checkpoint() const;
    static ClassifierModel from_checkpoint(const Checkpoint& ckpt);
};

struct FinetuneCurveRow {
    int epoch = 0;
    long step = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    float lr = 0.0f;
};

struct ClassifyResult {
    ClassifierModel model;
    MetricsReport test_report;
    std::vector<FinetuneCurveRow> curve;
    std::filesystem::path model_path;  // empty when out_dir was empty
};

// Fine-tunes encoder (from a pretraining checkpoint's teacher weights, or
// random init when `init` is empty) + global-average-pool + linear head with
// cross-entropy, end to end. cfg.freeze_encoder turns it into a linear probe.
ClassifyResult finetune_classify(const std::optional<Checkpoint>& init, const ImageDataset& train,
                                 const ImageDataset& val, const ImageDataset& test,
                                 const TrainConfig& cfg, const std::filesystem::path& out_dir,
                                 std::ostream* log = nullptr);

MetricsReport evaluate_classifier(const ClassifierModel& model, const ImageDataset& data,
                                  int batch = 16);

// ---- segmentation -------------------------------------------------------------

// Encoder plus a U-Net style upsampling head with skip connections from the
// stem and first dense block; two-class per-pixel output.
struct SegmenterModel {
    DenseEncoder encoder;
    ConvParams reduce;  // 1x1 on the encoder output
    ConvParams fuse1;   // 3x3 after x2 upsample + block-1 skip
    ConvParams fuse2;   // 3x3 after x2 upsample + stem skip
    ConvParams out;     // 1x1 to 2 classes

    Tensor forward(const Tensor& images) const;  // [N,2,H,W] logits
    std::vector<Tensor> parameters() const;

    Checkpoint to_checkpoint() const;
    static SegmenterModel from_checkpoint(const Checkpoint& ckpt);
};

struct SegmentResult {
    SegmenterModel model;
    MetricsReport test_report;
    std::vector<FinetuneCurveRow> curve;
    std::filesystem::path model_path;
};

// Fine-tunes for binary segmentation with focal loss (cfg.loss == "focal",
// gamma/alpha from cfg) or per-pixel cross-entropy (cfg.loss == "ce").
SegmentResult finetune_segment(const std::optional<Checkpoint>& init, const ImageDataset& train,
                               const ImageDataset& val, const ImageDataset& test,
                               const TrainConfig& cfg, const std::filesystem::path& out_dir,
                               std::ostream* log = nullptr);

// Mean per-image Dice / Hausdorff / AUC over the dataset. Images whose metric
// is undefined (empty mask for Hausdorff, single-class truth for AUC) are
// excluded from that metric's mean with a warning on `log`; when no image has
// foreground truth at all, Dice is reported as 0 with a warning.
MetricsReport evaluate_segmenter(const SegmenterModel& model, const ImageDataset& data,
                                 int batch = 16, std::ostream* log = nullptr);

void write_pretrain_curve_csv(const std::filesystem::path& path, const std::vector<EpochRow>& rows);
void write_finetune_curve_csv(const std::filesystem::path& path,
                              const std::vector<FinetuneCurveRow>& rows);

}  // namespace edmae
