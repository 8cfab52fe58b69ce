#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "edmae/error.hpp"
#include "edmae/rng.hpp"

namespace edmae {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorStorage {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // empty means "no gradient"
    bool requires_grad = false;
};
}  // namespace detail

// Dense float32 tensor, row-major, with an optional gradient buffer.
// Copies are shallow (shared storage); clone() deep-copies.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_vector(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar_tensor(float value, bool requires_grad = false);
    // seeded uniform in [lo, hi)
    static Tensor randu(Shape shape, Rng& rng, float lo, float hi, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& shape() const { return s_->shape; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    int dim(int i) const { return s_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(s_->value.size()); }

    float* data() { return s_->value.data(); }
    const float* data() const { return s_->value.data(); }
    std::vector<float>& vec() { return s_->value; }
    const std::vector<float>& vec() const { return s_->value; }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool rg) { s_->requires_grad = rg; }

    bool has_grad() const { return s_ && !s_->grad.empty(); }
    float* grad() { return s_->grad.data(); }
    const float* grad() const { return s_->grad.data(); }
    std::vector<float>& grad_vec() { return s_->grad; }
    const std::vector<float>& grad_vec() const { return s_->grad; }
    void ensure_grad();  // allocate zero-filled gradient if absent
    void zero_grad();    // zero the buffer if allocated
    void clear_grad();   // drop the buffer entirely

    // value of a one-element tensor
    float scalar() const;

    Tensor clone() const;  // deep copy of values; gradient not copied
    bool same_storage(Tensor other) const { return s_ == other.s_; }

private:
    std::shared_ptr<detail::TensorStorage> s_;
};

// Reverse-mode tape. Ops record one backward step per recorded operation;
// backward() seeds the scalar loss gradient with 1 and replays the steps in
// reverse order, so each node's contribution is visited exactly once. Steps
// whose output never received a gradient are no-ops, which makes replaying
// unrelated graph fragments harmless.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_step);
    void backward(Tensor loss);
    void reset();
    bool empty() const { return steps_.empty(); }
    std::size_t size() const { return steps_.size(); }

    // the tape ops currently record onto, or nullptr (no-grad mode)
    static Tape* active();

private:
    std::vector<std::function<void()>> steps_;
};

// Activates a tape for the enclosing scope. Nesting restores the previous one.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// ---- differentiable operations ------------------------------------------

Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor mul_scalar(Tensor a, float s);
Tensor relu(Tensor x);
Tensor sigmoid(Tensor x);
Tensor sum(Tensor x);  // -> scalar

// stop-gradient: value copy that never carries or propagates gradients
Tensor detach(Tensor x);

// x:[N,C,H,W], w:[F,C,kh,kw], b:[F] -> [N,F,H',W']
Tensor conv2d(Tensor x, Tensor w, Tensor b, int stride, int padding);

// duplicate every pixel factor x factor times
Tensor upsample_nearest(Tensor x, int factor);

// nearest upsample by factor (2 or 4) followed by a same-padding conv
Tensor transposed_upsample(Tensor x, int factor, Tensor w, Tensor b);

// 2x2 mean pooling, stride 2; H and W must be even
Tensor avg_pool2(Tensor x);

// [N,Ca,H,W] + [N,Cb,H,W] -> [N,Ca+Cb,H,W]
Tensor concat_channels(Tensor a, Tensor b);

// x:[N,D], w:[D,K], b:[K] -> [N,K]
Tensor linear(Tensor x, Tensor w, Tensor b);

// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(Tensor x);

// mean over all elements of (a-b)^2
Tensor mse_loss(Tensor a, Tensor b);

// mean of (pred-target)^2 over elements selected by sel, a 0/1 map of shape
// [H,W] (broadcast over batch and channels) or [N,H,W] (per-sample masks,
// broadcast over channels); empty selection yields 0
Tensor masked_mse_loss(Tensor pred, Tensor target, Tensor sel);

// logits [N,K] or [N,K,H,W]; labels row-major over N (xH xW)
Tensor softmax_cross_entropy(Tensor logits, const std::vector<int>& labels);

// per-sample (or per-pixel) softmax probability of the labelled class
Tensor softmax_true_prob(Tensor logits, const std::vector<int>& labels);

// mean of -alpha*(1-p)^gamma*log(p) with p clamped at 1e-7 from below
Tensor focal_loss(Tensor prob_true, float gamma, float alpha);

bool all_finite(Tensor t);
void check_finite(Tensor t, const char* what);

}  // namespace edmae
