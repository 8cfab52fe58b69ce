#include "edmae/encoder.hpp"

#include <cmath>

#include "edmae/error.hpp"

namespace edmae {

ConvParams make_conv(int out_ch, int in_ch, int k, Rng& rng, bool trainable) {
    const float bound = std::sqrt(1.0f / static_cast<float>(in_ch * k * k));
    ConvParams p;
    p.weight = Tensor::randu({out_ch, in_ch, k, k}, rng, -bound, bound, trainable);
    p.bias = Tensor::randu({out_ch}, rng, -bound, bound, trainable);
    return p;
}

int DenseEncoderConfig::out_channels() const {
    int c = stem_channels;
    for (int layers : blocks) c += layers * growth;
    return c;
}

int DenseEncoderConfig::spatial_divisor() const {
    return 2 << (static_cast<int>(blocks.size()) - 1);
}

void DenseEncoderConfig::validate() const {
    if (blocks.empty()) throw ConfigError("encoder: blocks must be non-empty");
    if (growth < 1) throw ConfigError("encoder: growth must be >= 1");
    if (in_channels < 1 || stem_channels < 1) throw ConfigError("encoder: channel counts must be >= 1");
    for (int layers : blocks) {
        if (layers < 1) throw ConfigError("encoder: layers per block must be >= 1");
    }
}

DenseEncoder DenseEncoder::create(const DenseEncoderConfig& cfg, Rng& rng, bool trainable) {
    cfg.validate();
    DenseEncoder enc;
    enc.cfg = cfg;
    enc.stem = make_conv(cfg.stem_channels, cfg.in_channels, 3, rng, trainable);
    int channels = cfg.stem_channels;
    for (int layers : cfg.blocks) {
        std::vector<ConvParams> block;
        for (int l = 0; l < layers; ++l) {
            block.push_back(make_conv(cfg.growth, channels, 3, rng, trainable));
            channels += cfg.growth;
        }
        enc.blocks.push_back(std::move(block));
    }
    return enc;
}

DenseEncoder DenseEncoder::like(const DenseEncoder& other, bool trainable) {
    Rng dummy(0);
    DenseEncoder enc = create(other.cfg, dummy, trainable);
    enc.copy_values_from(other);
    return enc;
}

namespace {

Tensor run_encoder(const DenseEncoder& enc, const Tensor& image, DenseEncoder::Taps* taps) {
    if (image.rank() != 4) {
        throw DimensionError("encode: expected NCHW image, got " + shape_str(image.shape()));
    }
    const int div = enc.cfg.spatial_divisor();
    if (image.dim(2) % div != 0 || image.dim(3) % div != 0) {
        throw DimensionError("encode: spatial dims of " + shape_str(image.shape()) +
                             " not divisible by " + std::to_string(div));
    }
    if (image.dim(1) != enc.cfg.in_channels) {
        throw DimensionError("encode: expected " + std::to_string(enc.cfg.in_channels) +
                             " input channels, got " + std::to_string(image.dim(1)));
    }
    Tensor h = relu(conv2d(image, enc.stem.weight, enc.stem.bias, 1, 1));
    if (taps) taps->stem_out = h;
    h = avg_pool2(h);
    for (std::size_t b = 0; b < enc.blocks.size(); ++b) {
        for (const ConvParams& layer : enc.blocks[b]) {
            Tensor y = relu(conv2d(h, layer.weight, layer.bias, 1, 1));
            h = concat_channels(h, y);
        }
        if (taps) taps->block_out.push_back(h);
        if (b + 1 < enc.blocks.size()) h = avg_pool2(h);
    }
    if (taps) taps->out = h;
    return h;
}

}  // namespace

Tensor DenseEncoder::forward(const Tensor& image) const { return run_encoder(*this, image, nullptr); }

DenseEncoder::Taps DenseEncoder::forward_taps(const Tensor& image) const {
    Taps taps;
    run_encoder(*this, image, &taps);
    return taps;
}

std::vector<Tensor> DenseEncoder::parameters() const {
    std::vector<Tensor> out;
    out.push_back(stem.weight);
    out.push_back(stem.bias);
    for (const auto& block : blocks) {
        for (const auto& layer : block) {
            out.push_back(layer.weight);
            out.push_back(layer.bias);
        }
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> DenseEncoder::named_parameters(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back(prefix + "stem.w", stem.weight);
    out.emplace_back(prefix + "stem.b", stem.bias);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t l = 0; l < blocks[b].size(); ++l) {
            const std::string base = prefix + "b" + std::to_string(b) + ".l" + std::to_string(l);
            out.emplace_back(base + ".w", blocks[b][l].weight);
            out.emplace_back(base + ".b", blocks[b][l].bias);
        }
    }
    return out;
}

void DenseEncoder::copy_values_from(const DenseEncoder& other) {
    auto dst = parameters();
    auto src = other.parameters();
    if (dst.size() != src.size()) throw DimensionError("encoder copy: parameter count mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].shape() != src[i].shape()) {
            throw DimensionError("encoder copy: shape mismatch at parameter " + std::to_string(i));
        }
        dst[i].vec() = src[i].vec();
    }
}

}  // namespace edmae
