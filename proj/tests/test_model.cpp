#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "edmae/error.hpp"
#include "edmae/model.hpp"

using namespace edmae;

namespace {

void zero_params(std::vector<Tensor> params) {
    for (Tensor& p : params) std::fill(p.vec().begin(), p.vec().end(), 0.0f);
}

EdmaeModel small_model(std::uint64_t seed = 1) {
    return EdmaeModel::create(DenseEncoderConfig{}, seed, 0.99f, 1.0f);
}

}  // namespace

TEST_CASE("encode: zero image through zero weights gives zero features") {
    EdmaeModel m = small_model();
    zero_params(m.teacher.parameters());
    Tensor y = m.encode_teacher(Tensor::zeros({1, 1, 64, 64}));
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0f);
}

TEST_CASE("encode: 64x64 input with the 2-block config maps to 48x16x16") {
    EdmaeModel m = small_model();
    CHECK(m.teacher.cfg.out_channels() == 48);
    CHECK(m.teacher.cfg.spatial_divisor() == 4);
    Tensor y = m.encode_teacher(Tensor::zeros({3, 1, 64, 64}));
    CHECK(y.shape() == Shape{3, 48, 16, 16});
    CHECK_THROWS_AS(m.encode_teacher(Tensor::zeros({1, 1, 62, 62})), DimensionError);
}

TEST_CASE("encode: batch samples do not leak into each other") {
    EdmaeModel m = small_model(3);
    Rng rng(4);
    Tensor pair = Tensor::randu({2, 1, 32, 32}, rng, 0.0f, 1.0f);
    Tensor joint = m.encode_teacher(pair);
    const std::int64_t plane = 32 * 32;
    const std::int64_t feat = joint.numel() / 2;
    for (int i = 0; i < 2; ++i) {
        Tensor one = Tensor::from_vector(
            {1, 1, 32, 32},
            std::vector<float>(pair.data() + i * plane, pair.data() + (i + 1) * plane));
        Tensor single = m.encode_teacher(one);
        float worst = 0.0f;
        for (std::int64_t q = 0; q < feat; ++q) {
            worst = std::max(worst, std::abs(joint.data()[i * feat + q] - single.data()[q]));
        }
        CHECK(worst < 1e-6f);
    }
}

TEST_CASE("ema_update: boundary momenta and direct arithmetic") {
    EdmaeModel m = small_model(5);
    auto teacher = m.teacher.parameters();
    auto student = m.student.parameters();

    SUBCASE("m=1 freezes the student") {
        m.momentum = 1.0f;
        std::vector<float> before = student[0].vec();
        for (auto& v : teacher[0].vec()) v += 1.0f;
        m.ema_update();
        CHECK(student[0].vec() == before);
    }
    SUBCASE("m=0 copies the teacher") {
        m.momentum = 0.0f;
        for (auto& v : teacher[0].vec()) v = 2.5f;
        m.ema_update();
        for (float v : student[0].vec()) CHECK(v == 2.5f);
    }
    SUBCASE("ps=0, pt=1, m=0.9 gives 0.1") {
        m.momentum = 0.9f;
        std::fill(student[0].vec().begin(), student[0].vec().end(), 0.0f);
        std::fill(teacher[0].vec().begin(), teacher[0].vec().end(), 1.0f);
        m.ema_update();
        for (float v : student[0].vec()) CHECK(v == doctest::Approx(0.1).epsilon(1e-6));
    }
}

TEST_CASE("ema_update: geometric contraction with a frozen teacher") {
    EdmaeModel m = small_model(6);
    m.momentum = 0.9f;
    // push the student away from the teacher
    for (Tensor& p : m.student.parameters()) {
        for (auto& v : p.vec()) v += 0.5f;
    }
    auto max_gap = [&]() {
        float gap = 0.0f;
        auto ts = m.teacher.parameters();
        auto ss = m.student.parameters();
        for (std::size_t i = 0; i < ts.size(); ++i) {
            for (std::int64_t k = 0; k < ts[i].numel(); ++k) {
                gap = std::max(gap, std::abs(ss[i].data()[k] - ts[i].data()[k]));
            }
        }
        return gap;
    };
    float gap = max_gap();
    CHECK(gap == doctest::Approx(0.5).epsilon(1e-5));
    for (int step = 0; step < 5; ++step) {
        m.ema_update();
        const float next = max_gap();
        CHECK(next == doctest::Approx(gap * 0.9).epsilon(1e-4));
        gap = next;
    }
}

TEST_CASE("feature_alignment_loss: zero when branches and inputs coincide") {
    EdmaeModel m = small_model(7);
    m.student.copy_values_from(m.teacher);
    Rng rng(8);
    Tensor img = Tensor::randu({1, 1, 32, 32}, rng, 0.0f, 1.0f);
    CHECK(m.feature_alignment_loss(img, img).scalar() == 0.0f);
}

TEST_CASE("feature_alignment_loss: finite and non-negative on a ratio-0 split") {
    EdmaeModel m = small_model(9);
    m.student.copy_values_from(m.teacher);
    Rng rng(10);
    Tensor img = Tensor::randu({1, 1, 32, 32}, rng, 0.0f, 1.0f);
    const MaskSpec spec = sample_mask(4, 4, 8, 0.0, 1);
    auto [visible, hidden] = apply_mask(img, spec);
    const float loss = m.feature_alignment_loss(visible, hidden).scalar();
    CHECK(std::isfinite(loss));
    CHECK(loss >= 0.0f);
}

TEST_CASE("feature_alignment_loss: matches an independent two-pass recomputation") {
    EdmaeModel m = small_model(11);
    Rng rng(12);
    Tensor img = Tensor::randu({2, 1, 32, 32}, rng, 0.0f, 1.0f);
    const MaskSpec spec = sample_mask(4, 4, 8, 0.75, 2);
    auto [visible, hidden] = apply_mask(img, spec);
    const float loss = m.feature_alignment_loss(visible, hidden).scalar();

    Tensor y2 = m.encode_teacher(visible);
    Tensor y1 = m.encode_student(hidden);
    double acc = 0.0;
    for (std::int64_t i = 0; i < y1.numel(); ++i) {
        const double d = static_cast<double>(y2.data()[i]) - static_cast<double>(y1.data()[i]);
        acc += d * d;
    }
    acc /= static_cast<double>(y1.numel());
    CHECK(std::abs(loss - acc) < 1e-6);
}

TEST_CASE("decode_reconstruct: shape and constant-bias behaviour") {
    EdmaeModel m = small_model(13);
    Tensor feat = Tensor::zeros({2, 48, 16, 16});
    Tensor img = m.decode_reconstruct(feat);
    CHECK(img.shape() == Shape{2, 1, 64, 64});

    zero_params(m.decoder.parameters());
    std::fill(m.decoder.out.bias.vec().begin(), m.decoder.out.bias.vec().end(), 0.3f);
    img = m.decode_reconstruct(feat);
    for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(img.data()[i] == 0.3f);
}

TEST_CASE("pretrain_step_forward: ratio-1 with lambda 0 equals full-image MSE") {
    EdmaeModel m = small_model(14);
    m.align_weight = 0.0f;
    Rng rng(15);
    Tensor img = Tensor::randu({1, 1, 64, 64}, rng, 0.0f, 1.0f);
    const MaskSpec spec = sample_mask(8, 8, 8, 1.0, 3);
    PretrainStepOutput out = m.pretrain_step_forward(img, spec);
    const float direct = mse_loss(out.reconstruction, img).scalar();
    CHECK(out.recon_loss.scalar() == doctest::Approx(direct).epsilon(1e-6));
    CHECK(out.total_loss.scalar() == doctest::Approx(direct).epsilon(1e-6));
}

TEST_CASE("pretrain_step_forward: ratio-0 reconstruction loss is zero by convention") {
    EdmaeModel m = small_model(16);
    m.align_weight = 0.0f;
    Rng rng(17);
    Tensor img = Tensor::randu({1, 1, 64, 64}, rng, 0.0f, 1.0f);
    const MaskSpec spec = sample_mask(8, 8, 8, 0.0, 4);
    PretrainStepOutput out = m.pretrain_step_forward(img, spec);
    CHECK(out.recon_loss.scalar() == 0.0f);
    CHECK(out.total_loss.scalar() == 0.0f);
}

TEST_CASE("pretrain_step_forward: total equals recon + lambda * align") {
    EdmaeModel m = small_model(18);
    m.align_weight = 0.7f;
    Rng rng(19);
    Tensor img = Tensor::randu({2, 1, 64, 64}, rng, 0.0f, 1.0f);
    const MaskSpec spec = sample_mask(8, 8, 8, 0.75, 5);
    PretrainStepOutput out = m.pretrain_step_forward(img, spec);
    const double expect = static_cast<double>(out.recon_loss.scalar()) +
                          0.7 * static_cast<double>(out.align_loss.scalar());
    CHECK(std::abs(static_cast<double>(out.total_loss.scalar()) - expect) < 1e-6);
    for (const Tensor& t : {out.align_loss, out.recon_loss, out.total_loss}) {
        CHECK(all_finite(t));
    }
}

TEST_CASE("gradient isolation: student blocked, teacher and decoder reached") {
    EdmaeModel m = small_model(20);
    Rng rng(21);
    Tensor img = Tensor::randu({2, 1, 64, 64}, rng, 0.0f, 1.0f);
    const MaskSpec spec = sample_mask(8, 8, 8, 0.75, 6);
    Tape tape;
    {
        TapeScope scope(tape);
        PretrainStepOutput out = m.pretrain_batch_forward(img, {spec, spec});
        tape.backward(out.total_loss);
    }
    for (const Tensor& p : m.student.parameters()) CHECK_FALSE(p.has_grad());
    int with_grad = 0, total = 0;
    for (const Tensor& p : m.trainable_parameters()) {
        ++total;
        with_grad += p.has_grad();
    }
    CHECK(with_grad == total);
}

TEST_CASE("spatial correspondence: masking one patch only moves nearby feature cells") {
    EdmaeModel m = small_model(22);
    Rng rng(23);
    Tensor img = Tensor::randu({1, 1, 64, 64}, rng, 0.0f, 1.0f);

    // mask exactly one patch (2,5) manually
    MaskSpec spec = sample_mask(8, 8, 8, 0.0, 7);
    const int gi = 2, gj = 5;
    spec.masked[gi * 8 + gj] = 1;
    auto [visible, hidden] = apply_mask(img, spec);

    Tensor before = m.encode_teacher(img);
    Tensor after = m.encode_teacher(visible);

    // a feature cell u depends on input pixels [4u-13, 4u+16] (two 3x3 convs at
    // /4 scale, two at /2, one at /1, plus two pools); invert for patch rows
    // [8*gi, 8*gi+7]: affected cells are [2*gi-4, 2*gi+5]
    const int lo_y = 2 * gi - 4, hi_y = 2 * gi + 5;
    const int lo_x = 2 * gj - 4, hi_x = 2 * gj + 5;
    bool outside_identical = true;
    bool inside_changed = false;
    for (int c = 0; c < 48; ++c) {
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                const std::int64_t idx = (static_cast<std::int64_t>(c) * 16 + y) * 16 + x;
                const bool inside = y >= lo_y && y <= hi_y && x >= lo_x && x <= hi_x;
                if (!inside && before.data()[idx] != after.data()[idx]) outside_identical = false;
                if (inside && before.data()[idx] != after.data()[idx]) inside_changed = true;
            }
        }
    }
    CHECK(outside_identical);
    CHECK(inside_changed);
}

TEST_CASE("model checkpoint: namespaced tensors round-trip through disk") {
    EdmaeModel m = small_model(24);
    Checkpoint ckpt = m.to_checkpoint();
    bool has_teacher = false, has_student = false, has_decoder = false;
    for (const auto& [name, t] : ckpt.tensors) {
        has_teacher = has_teacher || name.rfind("t/", 0) == 0;
        has_student = has_student || name.rfind("s/", 0) == 0;
        has_decoder = has_decoder || name.rfind("d/", 0) == 0;
    }
    CHECK(has_teacher);
    CHECK(has_student);
    CHECK(has_decoder);

    const auto path = std::filesystem::temp_directory_path() / "edmae_test_model.edmk";
    save_checkpoint(path, ckpt);
    EdmaeModel restored = EdmaeModel::from_checkpoint(load_checkpoint(path));
    Rng rng(25);
    Tensor img = Tensor::randu({1, 1, 64, 64}, rng, 0.0f, 1.0f);
    Tensor a = m.encode_teacher(img);
    Tensor b = restored.encode_teacher(img);
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
    std::filesystem::remove(path);
}

TEST_CASE("model creation validates momentum and lambda") {
    CHECK_THROWS_AS(EdmaeModel::create(DenseEncoderConfig{}, 1, 1.5f, 1.0f), ConfigError);
    CHECK_THROWS_AS(EdmaeModel::create(DenseEncoderConfig{}, 1, 0.9f, -0.5f), ConfigError);
}
