#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "edmae/encoder.hpp"
#include "edmae/masking.hpp"
#include "edmae/serialize.hpp"
#include "edmae/tensor.hpp"

namespace edmae {

enum class ReconScope { MaskedOnly, Full };

ReconScope recon_scope_from_string(const std::string& s);
std::string to_string(ReconScope scope);

// Lightweight convolutional decoder: 1x1 channel reduction, two x2
// nearest-upsample + 3x3 conv + ReLU stages, and a 1x1 projection back to one
// channel. Parameter count stays well below the encoder's.
struct Decoder {
    ConvParams reduce;  // 1x1, enc_channels -> 16
    ConvParams up1;     // 3x3 after first x2 upsample, 16 -> 8
    ConvParams up2;     // 3x3 after second x2 upsample, 8 -> 6
    ConvParams out;     // 1x1, 6 -> 1

    static Decoder create(int enc_channels, Rng& rng);
    Tensor forward(const Tensor& features) const;
    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;
};

struct PretrainStepOutput {
    Tensor align_loss;
    Tensor recon_loss;
    Tensor total_loss;
    Tensor reconstruction;
};

// Dual-encoder masked autoencoder: a backpropagated teacher encoder fed the
// visible patches, a gradient-blocked student encoder fed the hidden patches
// and updated only by EMA from the teacher, a feature-alignment MSE between
// the two feature maps, and a light decoder reconstructing the image from the
// teacher features.
struct EdmaeModel {
    DenseEncoder teacher;  // trainable
    DenseEncoder student;  // gradient-blocked, EMA copy of the teacher
    Decoder decoder;       // trainable
    float momentum = 0.99f;     // EMA momentum m in [0,1]
    float align_weight = 1.0f;  // lambda >= 0
    ReconScope recon_scope = ReconScope::MaskedOnly;

    static EdmaeModel create(const DenseEncoderConfig& cfg, std::uint64_t seed, float momentum,
                             float align_weight);

    // student <- student*m + teacher*(1-m), elementwise; teacher unchanged
    void ema_update();

    Tensor encode_teacher(const Tensor& image) const { return teacher.forward(image); }
    Tensor encode_student(const Tensor& image) const { return student.forward(image); }

    // MSE between teacher(visible) and stop-gradient(student(hidden));
    // gradient flows only into the teacher
    Tensor feature_alignment_loss(const Tensor& visible, const Tensor& hidden) const;

    Tensor decode_reconstruct(const Tensor& features) const { return decoder.forward(features); }

    // One pretraining forward pass: splits the image with the mask spec,
    // aligns the two encoders' features, reconstructs from the teacher
    // features, and combines recon + lambda * align.
    PretrainStepOutput pretrain_step_forward(const Tensor& image, const MaskSpec& spec) const;

    // Same computation with a fresh mask per sample in the batch.
    PretrainStepOutput pretrain_batch_forward(const Tensor& images,
                                              const std::vector<MaskSpec>& specs) const;

    std::vector<Tensor> trainable_parameters() const;  // teacher + decoder
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;  // t/, s/, d/

    Checkpoint to_checkpoint() const;
    static EdmaeModel from_checkpoint(const Checkpoint& ckpt);
};

}  // namespace edmae
