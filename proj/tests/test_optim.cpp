#include "doctest.h"

#include <cmath>

#include "edmae/error.hpp"
#include "edmae/optim.hpp"
#include "edmae/train.hpp"

using namespace edmae;

TEST_CASE("adamw: zero gradient and zero decay leave parameters unchanged") {
    Tensor p = Tensor::from_vector({3}, {1.0f, -2.0f, 0.5f}, true);
    AdamWConfig cfg;
    cfg.weight_decay = 0.0f;
    AdamW opt({p}, cfg);
    p.ensure_grad();
    const std::vector<float> before = p.vec();
    for (int i = 0; i < 5; ++i) opt.step();
    CHECK(p.vec() == before);
}

TEST_CASE("adamw: zero gradient with decay d scales weights by exactly (1 - lr*d)") {
    Tensor p = Tensor::from_vector({2}, {2.0f, -4.0f}, true);
    AdamWConfig cfg;
    cfg.lr = 0.1f;
    cfg.weight_decay = 0.05f;
    AdamW opt({p}, cfg);
    p.ensure_grad();
    const float shrink = 1.0f - 0.1f * 0.05f;
    float e0 = 2.0f, e1 = -4.0f;
    for (int i = 0; i < 4; ++i) {
        opt.step();
        e0 *= shrink;
        e1 *= shrink;
        CHECK(p.data()[0] == e0);
        CHECK(p.data()[1] == e1);
    }
}

TEST_CASE("adamw: one step on f(w)=w^2 from w=1 moves toward zero") {
    Tensor w = Tensor::from_vector({1}, {1.0f}, true);
    AdamWConfig cfg;
    cfg.weight_decay = 0.0f;
    AdamW opt({w}, cfg);
    w.ensure_grad();
    w.grad()[0] = 2.0f * w.data()[0];
    opt.step();
    CHECK(w.data()[0] < 1.0f);
    CHECK(w.data()[0] > 0.0f);
}

TEST_CASE("adamw: 500 steps reach the analytic minimum of a convex quadratic") {
    // f(w) = sum a_i (w_i - c_i)^2, minimizer w = c
    const std::vector<float> a = {0.5f, 1.0f, 2.0f, 0.8f, 1.5f};
    const std::vector<float> c = {0.7f, -0.4f, 0.2f, -1.0f, 0.9f};
    Tensor w = Tensor::zeros({5}, true);
    AdamWConfig cfg;
    cfg.lr = 0.05f;
    cfg.weight_decay = 0.0f;
    AdamW opt({w}, cfg);
    w.ensure_grad();
    for (int step = 0; step < 500; ++step) {
        for (int i = 0; i < 5; ++i) w.grad()[i] = 2.0f * a[i] * (w.data()[i] - c[i]);
        opt.step();
    }
    for (int i = 0; i < 5; ++i) CHECK(std::abs(w.data()[i] - c[i]) < 1e-3f);
}

TEST_CASE("adamw: NaN gradients abort the step without touching weights") {
    Tensor p = Tensor::from_vector({2}, {1.0f, 2.0f}, true);
    AdamW opt({p}, AdamWConfig{});
    p.ensure_grad();
    p.grad()[0] = std::nanf("");
    CHECK_THROWS_AS(opt.step(), NumericError);
    CHECK(p.data()[0] == 1.0f);
    CHECK(p.data()[1] == 2.0f);
}

TEST_CASE("plateau: strictly decreasing losses keep the lr") {
    PlateauScheduler sched(1e-3f, PlateauConfig{});
    for (int i = 0; i < 30; ++i) CHECK(sched.observe(1.0f - 0.01f * i) == 1e-3f);
}

TEST_CASE("plateau: flat losses drop the lr by the factor at epoch patience+1") {
    PlateauConfig cfg;
    cfg.factor = 0.1f;
    cfg.patience = 10;
    PlateauScheduler sched(1e-3f, cfg);
    for (int epoch = 1; epoch <= 10; ++epoch) {
        CHECK(sched.observe(0.5f) == 1e-3f);  // epochs 1..10: no drop yet
    }
    CHECK(sched.observe(0.5f) == doctest::Approx(1e-4f));  // epoch 11
}

TEST_CASE("plateau: lr never drops below min_lr") {
    PlateauConfig cfg;
    cfg.factor = 0.1f;
    cfg.patience = 1;
    cfg.min_lr = 1e-6f;
    PlateauScheduler sched(1e-4f, cfg);
    for (int i = 0; i < 50; ++i) sched.observe(1.0f);
    CHECK(sched.lr() == 1e-6f);
}

TEST_CASE("plateau: replay reproduces the trajectory exactly") {
    PlateauConfig cfg;
    cfg.patience = 3;
    Rng rng(77);
    std::vector<float> history;
    for (int i = 0; i < 40; ++i) history.push_back(static_cast<float>(rng.uniform()));
    const auto a = PlateauScheduler::replay(1e-3f, cfg, history);
    const auto b = PlateauScheduler::replay(1e-3f, cfg, history);
    CHECK(a == b);
    PlateauScheduler live(1e-3f, cfg);
    for (std::size_t i = 0; i < history.size(); ++i) CHECK(live.observe(history[i]) == a[i]);
}

TEST_CASE("plateau: config validation") {
    PlateauConfig bad;
    bad.factor = 1.0f;
    CHECK_THROWS_AS(PlateauScheduler(1e-3f, bad), ConfigError);
    bad.factor = 0.5f;
    bad.patience = 0;
    CHECK_THROWS_AS(PlateauScheduler(1e-3f, bad), ConfigError);
}

TEST_CASE("focal loss: certain predictions cost nothing") {
    Tensor p = Tensor::full({4}, 1.0f);
    CHECK(focal_loss(p, 2.0f, 0.25f).scalar() == 0.0f);
}

TEST_CASE("focal loss: gamma 0 and alpha 1 degenerate to plain NLL") {
    Rng rng(31);
    Tensor p = Tensor::randu({16}, rng, 0.05f, 0.99f);
    double nll = 0.0;
    for (std::int64_t i = 0; i < p.numel(); ++i) nll += -std::log(static_cast<double>(p.data()[i]));
    nll /= static_cast<double>(p.numel());
    CHECK(focal_loss(p, 0.0f, 1.0f).scalar() == doctest::Approx(nll).epsilon(1e-5));
}

TEST_CASE("focal loss: direct scalar evaluation at p=0.5, gamma=2, alpha=0.25") {
    Tensor p = Tensor::full({1}, 0.5f);
    // 0.25 * 0.25 * ln 2
    CHECK(focal_loss(p, 2.0f, 0.25f).scalar() == doctest::Approx(0.0433217).epsilon(1e-5));
}

TEST_CASE("focal loss: never exceeds alpha-scaled NLL") {
    Rng rng(32);
    for (int trial = 0; trial < 50; ++trial) {
        const float gamma = rng.uniform_f(0.0f, 4.0f);
        const float alpha = rng.uniform_f(0.05f, 0.95f);
        Tensor p = Tensor::randu({1}, rng, 0.01f, 0.999f);
        const double fl = focal_loss(p, gamma, alpha).scalar();
        const double nll = -static_cast<double>(alpha) * std::log(static_cast<double>(p.data()[0]));
        CHECK(fl <= nll + 1e-7);
    }
}

TEST_CASE("focal params: spec defaults") {
    FocalParams fp;
    CHECK(fp.gamma == 2.0f);
    CHECK(fp.alpha == 0.25f);
}
