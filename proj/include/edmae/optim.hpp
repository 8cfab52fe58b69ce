#pragma once

#include <vector>

#include "edmae/tensor.hpp"

namespace edmae {

struct AdamWConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.01f;
};

// AdamW with decoupled weight decay: decay scales the weights directly,
// independent of the gradient moments. Parameters without an allocated
// gradient buffer are skipped entirely (they were not reached by backward).
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg);

    // one update using the gradients currently stored on the parameters;
    // throws NumericError on NaN/Inf gradients without touching any weight
    void step();
    void zero_grad();

    void set_lr(float lr) { cfg_.lr = lr; }
    float lr() const { return cfg_.lr; }
    std::int64_t steps_taken() const { return t_; }

private:
    std::vector<Tensor> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    std::int64_t t_ = 0;
};

struct PlateauConfig {
    float factor = 0.1f;
    int patience = 10;
    float threshold = 1e-4f;
    float min_lr = 1e-6f;
};

// ReduceLROnPlateau: after `patience` consecutive observations without an
// improvement greater than `threshold`, multiply the lr by `factor`, clamped
// at `min_lr`. A pure function of the observation history and its own state.
class PlateauScheduler {
public:
    PlateauScheduler(float initial_lr, PlateauConfig cfg);

    // feed one validation loss; returns the (possibly reduced) lr
    float observe(float loss);
    float lr() const { return lr_; }

    // lr trajectory for a whole history, starting fresh
    static std::vector<float> replay(float initial_lr, PlateauConfig cfg,
                                     const std::vector<float>& history);

private:
    PlateauConfig cfg_;
    float lr_;
    float best_;
    int bad_epochs_ = 0;
    bool seen_any_ = false;
};

}  // namespace edmae
