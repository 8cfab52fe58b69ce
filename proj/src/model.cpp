#include "edmae/model.hpp"

#include <cmath>

#include "edmae/error.hpp"

namespace edmae {

ReconScope recon_scope_from_string(const std::string& s) {
    if (s == "masked") return ReconScope::MaskedOnly;
    if (s == "full") return ReconScope::Full;
    throw ConfigError("recon_scope must be 'masked' or 'full', got '" + s + "'");
}

std::string to_string(ReconScope scope) {
    return scope == ReconScope::MaskedOnly ? "masked" : "full";
}

Decoder Decoder::create(int enc_channels, Rng& rng) {
    Decoder d;
    d.reduce = make_conv(16, enc_channels, 1, rng, true);
    d.up1 = make_conv(8, 16, 3, rng, true);
    d.up2 = make_conv(6, 8, 3, rng, true);
    d.out = make_conv(1, 6, 1, rng, true);
    return d;
}

Tensor Decoder::forward(const Tensor& features) const {
    Tensor h = relu(conv2d(features, reduce.weight, reduce.bias, 1, 0));
    h = relu(transposed_upsample(h, 2, up1.weight, up1.bias));
    h = relu(transposed_upsample(h, 2, up2.weight, up2.bias));
    return conv2d(h, out.weight, out.bias, 1, 0);
}

std::vector<Tensor> Decoder::parameters() const {
    return {reduce.weight, reduce.bias, up1.weight, up1.bias,
            up2.weight,    up2.bias,    out.weight, out.bias};
}

std::vector<std::pair<std::string, Tensor>> Decoder::named_parameters(
    const std::string& prefix) const {
    return {{prefix + "reduce.w", reduce.weight}, {prefix + "reduce.b", reduce.bias},
            {prefix + "up1.w", up1.weight},       {prefix + "up1.b", up1.bias},
            {prefix + "up2.w", up2.weight},       {prefix + "up2.b", up2.bias},
            {prefix + "out.w", out.weight},       {prefix + "out.b", out.bias}};
}

EdmaeModel EdmaeModel::create(const DenseEncoderConfig& cfg, std::uint64_t seed, float momentum,
                              float align_weight) {
    if (!(momentum >= 0.0f && momentum <= 1.0f)) {
        throw ConfigError("momentum must be in [0,1], got " + std::to_string(momentum));
    }
    if (align_weight < 0.0f) {
        throw ConfigError("align_weight must be >= 0, got " + std::to_string(align_weight));
    }
    EdmaeModel m;
    Rng rng(substream(seed, "init"));
    m.teacher = DenseEncoder::create(cfg, rng, /*trainable=*/true);
    // student starts as an exact copy of the teacher, gradient-blocked
    m.student = DenseEncoder::like(m.teacher, /*trainable=*/false);
    m.decoder = Decoder::create(cfg.out_channels(), rng);
    m.momentum = momentum;
    m.align_weight = align_weight;
    return m;
}

void EdmaeModel::ema_update() {
    auto ps = student.parameters();
    auto pt = teacher.parameters();
    if (ps.size() != pt.size()) throw DimensionError("ema_update: parameter list drift");
    const float m = momentum;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps[i].shape() != pt[i].shape()) {
            throw DimensionError("ema_update: teacher/student shape drift at parameter " +
                                 std::to_string(i));
        }
        float* s = ps[i].data();
        const float* t = pt[i].data();
        const std::int64_t n = ps[i].numel();
        for (std::int64_t k = 0; k < n; ++k) s[k] = s[k] * m + t[k] * (1.0f - m);
    }
}

Tensor EdmaeModel::feature_alignment_loss(const Tensor& visible, const Tensor& hidden) const {
    Tensor prediction = teacher.forward(visible);
    Tensor target = detach(student.forward(hidden));
    if (prediction.shape() != target.shape()) {
        throw Error("feature_alignment_loss: teacher/student feature shape mismatch " +
                    shape_str(prediction.shape()) + " vs " + shape_str(target.shape()));
    }
    return mse_loss(prediction, target);
}

namespace {

PretrainStepOutput pretrain_forward_impl(const EdmaeModel& model, const Tensor& images,
                                         const Tensor& visible, const Tensor& hidden,
                                         const Tensor& selector) {
    Tensor teacher_feat = model.teacher.forward(visible);
    Tensor student_feat = detach(model.student.forward(hidden));
    Tensor align = mse_loss(teacher_feat, student_feat);

    PretrainStepOutput out;
    out.reconstruction = model.decoder.forward(teacher_feat);
    if (model.recon_scope == ReconScope::MaskedOnly) {
        out.recon_loss = masked_mse_loss(out.reconstruction, images, selector);
    } else {
        out.recon_loss = mse_loss(out.reconstruction, images);
    }
    out.align_loss = align;
    out.total_loss = add(out.recon_loss, mul_scalar(out.align_loss, model.align_weight));
    return out;
}

}  // namespace

PretrainStepOutput EdmaeModel::pretrain_step_forward(const Tensor& image, const MaskSpec& spec) const {
    auto [visible, hidden] = apply_mask(image, spec);
    return pretrain_forward_impl(*this, image, visible, hidden, masked_pixel_selector(spec));
}

PretrainStepOutput EdmaeModel::pretrain_batch_forward(const Tensor& images,
                                                      const std::vector<MaskSpec>& specs) const {
    auto [visible, hidden] = apply_mask_batch(images, specs);
    return pretrain_forward_impl(*this, images, visible, hidden, masked_pixel_selector_batch(specs));
}

std::vector<Tensor> EdmaeModel::trainable_parameters() const {
    std::vector<Tensor> out = teacher.parameters();
    for (const Tensor& t : decoder.parameters()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, Tensor>> EdmaeModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out = teacher.named_parameters("t/");
    for (auto& p : student.named_parameters("s/")) out.push_back(std::move(p));
    for (auto& p : decoder.named_parameters("d/")) out.push_back(std::move(p));
    return out;
}

Checkpoint EdmaeModel::to_checkpoint() const {
    Checkpoint ckpt;
    for (const auto& [name, t] : named_parameters()) ckpt.tensors.emplace_back(name, t.clone());
    ckpt.meta["momentum"] = std::to_string(momentum);
    ckpt.meta["align_weight"] = std::to_string(align_weight);
    ckpt.meta["recon_scope"] = to_string(recon_scope);
    ckpt.meta["stem_channels"] = std::to_string(teacher.cfg.stem_channels);
    ckpt.meta["growth"] = std::to_string(teacher.cfg.growth);
    ckpt.meta["in_channels"] = std::to_string(teacher.cfg.in_channels);
    std::string blocks;
    for (std::size_t i = 0; i < teacher.cfg.blocks.size(); ++i) {
        if (i) blocks += ",";
        blocks += std::to_string(teacher.cfg.blocks[i]);
    }
    ckpt.meta["blocks"] = blocks;
    return ckpt;
}

namespace {

DenseEncoderConfig config_from_meta(const Checkpoint& ckpt) {
    DenseEncoderConfig cfg;
    cfg.in_channels = std::stoi(ckpt.meta_or("in_channels", "1"));
    cfg.stem_channels = std::stoi(ckpt.meta_or("stem_channels", "16"));
    cfg.growth = std::stoi(ckpt.meta_or("growth", "8"));
    cfg.blocks.clear();
    std::string blocks = ckpt.meta_or("blocks", "2,2");
    std::size_t pos = 0;
    while (pos < blocks.size()) {
        std::size_t comma = blocks.find(',', pos);
        if (comma == std::string::npos) comma = blocks.size();
        cfg.blocks.push_back(std::stoi(blocks.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return cfg;
}

void load_named_into(const std::vector<std::pair<std::string, Tensor>>& stored,
                     std::vector<std::pair<std::string, Tensor>> params, const char* what) {
    for (auto& [name, dst] : params) {
        const Tensor* src = nullptr;
        for (const auto& [sname, st] : stored) {
            if (sname == name) {
                src = &st;
                break;
            }
        }
        if (!src) throw ParseError(std::string(what) + ": missing tensor '" + name + "'");
        if (src->shape() != dst.shape()) {
            throw ParseError(std::string(what) + ": shape mismatch for '" + name + "': stored " +
                             shape_str(src->shape()) + ", expected " + shape_str(dst.shape()));
        }
        dst.vec() = src->vec();
    }
}

}  // namespace

EdmaeModel EdmaeModel::from_checkpoint(const Checkpoint& ckpt) {
    const DenseEncoderConfig cfg = config_from_meta(ckpt);
    EdmaeModel m = create(cfg, 0, std::stof(ckpt.meta_or("momentum", "0.99")),
                          std::stof(ckpt.meta_or("align_weight", "1")));
    m.recon_scope = recon_scope_from_string(ckpt.meta_or("recon_scope", "masked"));
    load_named_into(ckpt.with_prefix("t/"), m.teacher.named_parameters(""), "checkpoint teacher");
    load_named_into(ckpt.with_prefix("s/"), m.student.named_parameters(""), "checkpoint student");
    load_named_into(ckpt.with_prefix("d/"), m.decoder.named_parameters(""), "checkpoint decoder");
    return m;
}

}  // namespace edmae
