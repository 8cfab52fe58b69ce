#pragma once

#include <string>
#include <utility>
#include <vector>

#include "edmae/rng.hpp"
#include "edmae/tensor.hpp"

namespace edmae {

// 3x3 (or 1x1) convolution parameters.
struct ConvParams {
    Tensor weight;  // [F,C,kh,kw]
    Tensor bias;    // [F]
};

// seeded uniform init in +/- sqrt(1/fan_in)
ConvParams make_conv(int out_ch, int in_ch, int k, Rng& rng, bool trainable);

struct DenseEncoderConfig {
    int in_channels = 1;
    int stem_channels = 16;
    std::vector<int> blocks = {2, 2};  // layers per dense block
    int growth = 8;                    // channels added per dense layer

    int out_channels() const;
    // total spatial downscale: stem pool (x2) plus one transition per
    // block boundary (x2 each)
    int spatial_divisor() const;
    void validate() const;
};

// DenseNet-style encoder: 3x3 stem conv + ReLU, then dense blocks where every
// layer's output is concatenated onto its input, with 2x2 average-pool
// transitions (one after the stem, one between consecutive blocks).
// Normalization-free: conv bias + ReLU only, which keeps the forward pass
// deterministic and batch-independent.
struct DenseEncoder {
    DenseEncoderConfig cfg;
    ConvParams stem;
    std::vector<std::vector<ConvParams>> blocks;

    static DenseEncoder create(const DenseEncoderConfig& cfg, Rng& rng, bool trainable);
    // fresh encoder with identical config and tensor shapes, zero-initialized
    static DenseEncoder like(const DenseEncoder& other, bool trainable);

    // intermediate activations needed by U-Net style heads
    struct Taps {
        Tensor stem_out;                // after stem conv+ReLU, full resolution
        std::vector<Tensor> block_out;  // per block, before its transition
        Tensor out;                     // final feature map
    };

    Tensor forward(const Tensor& image) const;
    Taps forward_taps(const Tensor& image) const;

    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;

    // elementwise copy of values from an architecture-identical encoder
    void copy_values_from(const DenseEncoder& other);
};

}  // namespace edmae
