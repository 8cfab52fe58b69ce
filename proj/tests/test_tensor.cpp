#include "doctest.h"

#include <cmath>

#include "edmae/error.hpp"
#include "edmae/gradcheck.hpp"
#include "edmae/tensor.hpp"

using namespace edmae;

TEST_CASE("conv2d: zero input passes only the bias") {
    Tensor x = Tensor::zeros({1, 1, 4, 4});
    Tensor w = Tensor::full({1, 1, 3, 3}, 0.7f);
    Tensor b = Tensor::full({1}, 0.5f);
    Tensor y = conv2d(x, w, b, 1, 1);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.5f);
}

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
    Rng rng(7);
    Tensor x = Tensor::randu({2, 3, 6, 6}, rng, -2.0f, 2.0f);
    Tensor w = Tensor::zeros({3, 3, 1, 1});
    for (int f = 0; f < 3; ++f) w.data()[f * 3 + f] = 1.0f;
    Tensor b = Tensor::zeros({3});
    Tensor y = conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape() == x.shape());
    float worst = 0.0f;
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        worst = std::max(worst, std::abs(y.data()[i] - x.data()[i]));
    }
    CHECK(worst < 1e-6f);
}

TEST_CASE("conv2d: output geometry and dimension errors") {
    Tensor x = Tensor::zeros({1, 2, 5, 5});
    Tensor w = Tensor::zeros({4, 2, 3, 3});
    Tensor b = Tensor::zeros({4});
    Tensor y = conv2d(x, w, b, 2, 1);
    CHECK(y.shape() == Shape{1, 4, 3, 3});

    Tensor wbad = Tensor::zeros({4, 3, 3, 3});  // channel mismatch
    CHECK_THROWS_AS(conv2d(x, wbad, b, 1, 1), DimensionError);
    Tensor wbig = Tensor::zeros({1, 2, 9, 9});
    Tensor b1 = Tensor::zeros({1});
    CHECK_THROWS_AS(conv2d(x, wbig, b1, 1, 0), DimensionError);
    CHECK_THROWS_AS(conv2d(x, w, b, 0, 0), ConfigError);
}

TEST_CASE("transposed_upsample: identity 1x1 conv duplicates each pixel") {
    Tensor x = Tensor::from_vector({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    Tensor w = Tensor::full({1, 1, 1, 1}, 1.0f);
    Tensor b = Tensor::zeros({1});
    Tensor y = transposed_upsample(x, 2, w, b);
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    const float expect[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    for (int i = 0; i < 16; ++i) CHECK(y.data()[i] == expect[i]);
}

TEST_CASE("transposed_upsample: zeros in, bias out; bad factor rejected") {
    Tensor x = Tensor::zeros({1, 2, 3, 3});
    Tensor w = Tensor::zeros({1, 2, 3, 3});
    Tensor b = Tensor::full({1}, -0.25f);
    Tensor y = transposed_upsample(x, 4, w, b);
    REQUIRE(y.shape() == Shape{1, 1, 12, 12});
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == -0.25f);
    CHECK_THROWS_AS(transposed_upsample(x, 3, w, b), ConfigError);
}

TEST_CASE("avg_pool2: window means and errors") {
    Tensor c = Tensor::full({2, 3, 4, 4}, 1.25f);
    Tensor y = avg_pool2(c);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 1.25f);

    Tensor x = Tensor::from_vector({1, 1, 2, 2}, {0.0f, 0.0f, 2.0f, 2.0f});
    CHECK(avg_pool2(x).data()[0] == 1.0f);

    Tensor odd = Tensor::zeros({1, 1, 3, 4});
    CHECK_THROWS_AS(avg_pool2(odd), DimensionError);
}

TEST_CASE("concat_channels: shapes, empty-channel neutral element, errors") {
    Rng rng(3);
    Tensor a = Tensor::randu({1, 2, 4, 4}, rng, -1.0f, 1.0f);
    Tensor b = Tensor::randu({1, 3, 4, 4}, rng, -1.0f, 1.0f);
    CHECK(concat_channels(a, b).shape() == Shape{1, 5, 4, 4});

    Tensor empty = Tensor::zeros({1, 0, 4, 4});
    Tensor same = concat_channels(a, empty);
    REQUIRE(same.shape() == a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(same.data()[i] == a.data()[i]);

    Tensor c = Tensor::zeros({1, 2, 5, 4});
    CHECK_THROWS_AS(concat_channels(a, c), DimensionError);
    Tensor d = Tensor::zeros({2, 2, 4, 4});
    CHECK_THROWS_AS(concat_channels(a, d), DimensionError);
}

TEST_CASE("mse_loss: identical inputs give zero, direct arithmetic") {
    Rng rng(11);
    Tensor t = Tensor::randu({3, 5}, rng, -3.0f, 3.0f);
    CHECK(mse_loss(t, t).scalar() == 0.0f);

    Tensor a = Tensor::from_vector({2}, {0.0f, 0.0f});
    Tensor b = Tensor::from_vector({2}, {2.0f, 0.0f});
    CHECK(mse_loss(a, b).scalar() == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("masked_mse_loss: selector restriction and empty-selection convention") {
    Tensor p = Tensor::from_vector({1, 1, 2, 2}, {1.0f, 5.0f, 0.0f, 0.0f});
    Tensor t = Tensor::zeros({1, 1, 2, 2});
    Tensor sel = Tensor::from_vector({2, 2}, {1.0f, 0.0f, 1.0f, 0.0f});
    // only elements (0,0) and (1,0) count: (1^2 + 0^2)/2
    CHECK(masked_mse_loss(p, t, sel).scalar() == doctest::Approx(0.5).epsilon(1e-7));

    Tensor none = Tensor::zeros({2, 2});
    CHECK(masked_mse_loss(p, t, none).scalar() == 0.0f);
}

TEST_CASE("softmax_cross_entropy: label validation") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(softmax_cross_entropy(z, {0, 3}), DataError);
    CHECK_THROWS_AS(softmax_cross_entropy(z, {0}), DimensionError);
    // uniform logits: loss is log K
    const float loss = softmax_cross_entropy(z, {1, 2}).scalar();
    CHECK(loss == doctest::Approx(std::log(3.0)).epsilon(1e-6));
}

TEST_CASE("backward: sum gradient is ones and loss must be scalar") {
    Tensor x = Tensor::from_vector({3}, {1.0f, -2.0f, 0.5f}, true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = sum(x);
        tape.backward(loss);
    }
    REQUIRE(x.has_grad());
    for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 1.0f);

    Tape tape2;
    {
        TapeScope scope(tape2);
        Tensor y = add(x, x);
        CHECK_THROWS_AS(tape2.backward(y), UsageError);
    }
}

TEST_CASE("backward: stop-gradient blocks the detached branch exactly") {
    Rng rng(5);
    Tensor x = Tensor::randu({4}, rng, -1.0f, 1.0f, true);
    Tensor blocked = Tensor::randu({4}, rng, -1.0f, 1.0f, true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = mse_loss(x, detach(blocked));
        tape.backward(loss);
    }
    CHECK(x.has_grad());
    CHECK_FALSE(blocked.has_grad());
}

TEST_CASE("tape: empty after reset") {
    Tensor x = Tensor::from_vector({2}, {1.0f, 2.0f}, true);
    Tape tape;
    {
        TapeScope scope(tape);
        sum(x);
    }
    CHECK_FALSE(tape.empty());
    tape.reset();
    CHECK(tape.empty());
    CHECK(tape.size() == 0);
}

TEST_CASE("tensor: invariants and error states") {
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.numel() == 6);
    CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1.0f}), DimensionError);
    CHECK_THROWS_AS(t.scalar(), UsageError);

    Tensor bad = Tensor::from_vector({2}, {1.0f, std::nanf("")});
    CHECK_FALSE(all_finite(bad));
    CHECK_THROWS_AS(check_finite(bad, "test"), NumericError);
    CHECK(all_finite(t));
}

TEST_CASE("gradcheck: full operator suite at 3 seeds") {
    const auto reports = run_gradcheck(standard_gradcheck_suite(), 3, 1e-4);
    for (const auto& r : reports) {
        INFO(r.name, " rel_err=", r.worst_rel_err, " fwd_err=", r.worst_forward_err);
        CHECK(r.pass);
    }
}

TEST_CASE("gradcheck: corrupted backward rule is detected") {
    // square with a deliberately wrong backward (3x instead of 2x)
    auto bad_square = [](Tensor x) {
        Tensor out = mul(detach(x), detach(x));
        if (Tape::active() && x.requires_grad()) {
            out.set_requires_grad(true);
            Tape::active()->record([x, out]() mutable {
                if (!out.has_grad()) return;
                x.ensure_grad();
                for (std::int64_t i = 0; i < x.numel(); ++i) {
                    x.grad()[i] += 3.0f * x.data()[i] * out.grad()[i];
                }
            });
        }
        return out;
    };
    std::vector<GradCheckCase> cases;
    cases.push_back({"bad_square", [&](std::uint64_t seed) {
        Rng rng(seed);
        Tensor x = Tensor::randu({3, 3}, rng, 0.5f, 1.5f, true);
        return check_gradients({x}, [&](const auto& in) { return bad_square(in[0]); },
                               [](const auto& in) {
                                   std::vector<double> out(in[0].size());
                                   for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[0][i] * in[0][i];
                                   return out;
                               },
                               seed);
    }});
    const auto reports = run_gradcheck(cases, 3, 1e-4);
    REQUIRE(reports.size() == 1);
    CHECK_FALSE(reports[0].pass);
    CHECK(reports[0].worst_rel_err > 0.1);
}

TEST_CASE("gradcheck: suite lists every registered op exactly once") {
    const auto cases = standard_gradcheck_suite();
    for (std::size_t i = 0; i < cases.size(); ++i) {
        for (std::size_t j = i + 1; j < cases.size(); ++j) {
            CHECK(cases[i].name != cases[j].name);
        }
    }
    CHECK(cases.size() >= 18);
}
