#include "edmae/optim.hpp"

#include <cmath>

#include "edmae/error.hpp"

namespace edmae {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= 0.0f) throw ConfigError("adamw: lr must be > 0");
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0f);
        v_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0f);
    }
}

void AdamW::step() {
    // validate gradients before mutating anything, so a poisoned step aborts
    // cleanly and the caller can restore from the last good checkpoint
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad()) continue;
        const float* g = params_[i].grad();
        const std::int64_t n = params_[i].numel();
        for (std::int64_t k = 0; k < n; ++k) {
            if (!std::isfinite(g[k])) {
                throw NumericError("adamw: non-finite gradient in parameter " + std::to_string(i));
            }
        }
    }
    ++t_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad()) continue;
        float* p = params_[i].data();
        const float* g = params_[i].grad();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const std::int64_t n = params_[i].numel();
        for (std::int64_t k = 0; k < n; ++k) {
            if (cfg_.weight_decay != 0.0f) p[k] *= 1.0f - cfg_.lr * cfg_.weight_decay;
            m[k] = cfg_.beta1 * m[k] + (1.0f - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1.0f - cfg_.beta2) * g[k] * g[k];
            const float mhat = m[k] / bc1;
            const float vhat = v[k] / bc2;
            p[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.clear_grad();
}

PlateauScheduler::PlateauScheduler(float initial_lr, PlateauConfig cfg)
    : cfg_(cfg), lr_(initial_lr), best_(0.0f) {
    if (!(cfg_.factor > 0.0f && cfg_.factor < 1.0f)) {
        throw ConfigError("plateau: factor must be in (0,1)");
    }
    if (cfg_.patience < 1) throw ConfigError("plateau: patience must be >= 1");
}

float PlateauScheduler::observe(float loss) {
    if (!seen_any_ || loss < best_ - cfg_.threshold) {
        best_ = loss;
        bad_epochs_ = 0;
        seen_any_ = true;
        return lr_;
    }
    ++bad_epochs_;
    if (bad_epochs_ >= cfg_.patience) {
        lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
        bad_epochs_ = 0;
    }
    return lr_;
}

std::vector<float> PlateauScheduler::replay(float initial_lr, PlateauConfig cfg,
                                            const std::vector<float>& history) {
    PlateauScheduler sched(initial_lr, cfg);
    std::vector<float> out;
    out.reserve(history.size());
    for (float loss : history) out.push_back(sched.observe(loss));
    return out;
}

}  // namespace edmae
