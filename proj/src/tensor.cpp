#include "edmae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace edmae {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
    for (int d : shape) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    }
}

std::shared_ptr<detail::TensorStorage> make_storage(Shape shape, bool requires_grad) {
    validate_shape(shape);
    auto s = std::make_shared<detail::TensorStorage>();
    s->value.resize(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
    s->shape = std::move(shape);
    s->requires_grad = requires_grad;
    return s;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Tensor t;
    t.s_ = make_storage(std::move(shape), requires_grad);
    return t;
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.vec().begin(), t.vec().end(), value);
    return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> values, bool requires_grad) {
    validate_shape(shape);
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.s_ = std::make_shared<detail::TensorStorage>();
    t.s_->shape = std::move(shape);
    t.s_->value = std::move(values);
    t.s_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar_tensor(float value, bool requires_grad) {
    return from_vector({1}, {value}, requires_grad);
}

Tensor Tensor::randu(Shape shape, Rng& rng, float lo, float hi, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.vec()) v = rng.uniform_f(lo, hi);
    return t;
}

void Tensor::ensure_grad() {
    if (s_->grad.empty()) s_->grad.resize(s_->value.size(), 0.0f);
}

void Tensor::zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0f);
}

void Tensor::clear_grad() { s_->grad.clear(); }

float Tensor::scalar() const {
    if (numel() != 1) throw UsageError("scalar() called on tensor of shape " + shape_str(shape()));
    return s_->value[0];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.s_ = std::make_shared<detail::TensorStorage>();
    t.s_->shape = s_->shape;
    t.s_->value = s_->value;
    t.s_->requires_grad = s_->requires_grad;
    return t;
}

// ---- tape -----------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
}

void Tape::backward(Tensor loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw UsageError("backward() requires a scalar loss");
    }
    if (steps_.empty()) throw UsageError("backward() on an empty tape");
    Tensor l = loss;
    l.ensure_grad();
    l.grad()[0] += 1.0f;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void Tape::reset() { steps_.clear(); }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

// ---- op helpers -------------------------------------------------------------

namespace {

bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::active()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void require_same_shape(Tensor a, Tensor b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

void require_rank4(Tensor t, const char* op) {
    if (t.rank() != 4) {
        throw DimensionError(std::string(op) + ": expected NCHW tensor, got " + shape_str(t.shape()));
    }
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

Tensor add(Tensor a, Tensor b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const std::int64_t n = a.numel();
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (grad_enabled({&a, &b})) {
        out.set_requires_grad(true);
        Tape::active()->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const float* g = out.grad();
            const std::int64_t m = out.numel();
            if (a.requires_grad()) {
                a.ensure_grad();
                float* ga = a.grad();
                for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                for (std::int64_t i = 0; i < m; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sub(Tensor a, Tensor b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const std::int64_t n = a.numel();
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (grad_enabled({&a, &b})) {
        out.set_requires_grad(true);
        Tape::active()->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const float* g = out.grad();
            const std::int64_t m = out.numel();
            if (a.requires_grad()) {
                a.ensure_grad();
                float* ga = a.grad();
                for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                for (std::int64_t i = 0; i < m; ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(Tensor a, Tensor b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const std::int64_t n = a.numel();
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (grad_enabled({&a, &b})) {
        out.set_requires_grad(true);
        Tape::active()->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const float* g = out.grad();
            const std::int64_t m = out.numel();
            if (a.requires_grad()) {
                a.ensure_grad();
                float* ga = a.grad();
                const float* pb2 = b.data();
                for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i] * pb2[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                const float* pa2 = a.data();
                for (std::int64_t i = 0; i < m; ++i) gb[i] += g[i] * pa2[i];
            }
        });
    }
    return out;
}

Tensor mul_scalar(Tensor a, float s) {
    Tensor out = Tensor::zeros(a.shape());
    const std::int64_t n = a.numel();
    const float* pa = a.data();
    float* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    if (grad_enabled({&a})) {
        out.set_requires_grad(true);
        Tape::active()->record([a, out, s]() mutable {
            if (!out.has_grad()) return;
            const float* g = out.grad();
            a.ensure_grad();
            float* ga = a.grad();
            const std::int64_t m = out.numel();
            for (std::int64_t i = 0; i < m; ++i) ga[i] += g[i] * s;
        });
    }
    return out;
}

Tensor relu(Tensor x) {
    Tensor out = Tensor::zeros(x.shape());
    const std::int64_t n = x.numel();
    const float* px = x.data();
    float* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0f ? px[i] : 0.0f;
    if (grad_enabled({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record([x, out]() mutable {
            if (!out.has_grad()) return;
            const float* g = out.grad();
            x.ensure_grad();
            float* gx = x.grad();
            const float* px2 = x.data();
            const std::int64_t m = out.numel();
            for (std::int64_t i = 0; i < m; ++i) {
                if (px2[i] > 0.0f) gx[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sigmoid(Tensor x) {
    Tensor out = Tensor::zeros(x.shape());
    const std::int64_t n = x.numel();
    const float* px = x.data();
    float* po = out.data();
    for (std::int64_t i = 0; i < n; ++i) po[i] = 1.0f / (1.0f + std::exp(-px[i]));
    if (grad_enabled({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record([x, out]() mutable {
            if (!out.has_grad()) return;
            const float* g = out.grad();
            x.ensure_grad();
            float* gx = x.grad();
            const float* po2 = out.data();
            const std::int64_t m = out.numel();
            for (std::int64_t i = 0; i < m; ++i) gx[i] += g[i] * po2[i] * (1.0f - po2[i]);
        });
    }
    return out;
}

Tensor sum(Tensor x) {
    double acc = 0.0;
    const std::int64_t n = x.numel();
    const float* px = x.data();
    for (std::int64_t i = 0; i < n; ++i) acc += px[i];
    Tensor out = Tensor::scalar_tensor(static_cast<float>(acc));
    if (grad_enabled({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record([x, out]() mutable {
            if (!out.has_grad()) return;
            const float g = out.grad()[0];
            x.ensure_grad();
            float* gx = x.grad();
            const std::int64_t m = x.numel();
            for (std::int64_t i = 0; i < m; ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor detach(Tensor x) {
    Tensor out = x.clone();
    out.set_requires_grad(false);
    return out;
}

// ---- convolution ------------------------------------------------------------

namespace {

struct ConvDims {
    int n, c, h, w;        // input
    int f, kh, kw;         // kernel
    int ho, wo;            // output
    int stride, pad;
};

ConvDims conv_dims(Tensor x, Tensor w, Tensor b, int stride, int padding) {
    require_rank4(x, "conv2d");
    require_rank4(w, "conv2d kernel");
    if (b.rank() != 1) throw DimensionError("conv2d: bias must be rank 1, got " + shape_str(b.shape()));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
    ConvDims d{};
    d.n = x.dim(0);
    d.c = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.f = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = padding;
    if (w.dim(1) != d.c) {
        throw DimensionError("conv2d: kernel channels " + std::to_string(w.dim(1)) +
                             " do not match input channels " + std::to_string(d.c));
    }
    if (b.dim(0) != d.f) {
        throw DimensionError("conv2d: bias size " + std::to_string(b.dim(0)) +
                             " does not match filter count " + std::to_string(d.f));
    }
    if (d.kh > d.h + 2 * padding || d.kw > d.w + 2 * padding) {
        throw DimensionError("conv2d: kernel larger than padded input");
    }
    d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
    d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
    if (d.ho < 1 || d.wo < 1) throw DimensionError("conv2d: zero-sized output");
    return d;
}

// fast path: 3x3 kernel, stride 1, pad 1 (every encoder/decoder 3x3 conv).
// One fused pass per input row with the three taps peeled at the edges.
void conv2d_forward_3x3(const ConvDims& d, const float* __restrict x, const float* __restrict w,
                        const float* __restrict b, float* __restrict out) {
    const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(d.ho) * d.wo;
    const int wo = d.wo;
    for (int n = 0; n < d.n; ++n) {
        for (int f = 0; f < d.f; ++f) {
            float* __restrict oplane = out + (static_cast<std::int64_t>(n) * d.f + f) * out_plane;
            const float bv = b[f];
            for (std::int64_t i = 0; i < out_plane; ++i) oplane[i] = bv;
            for (int c = 0; c < d.c; ++c) {
                const float* iplane = x + (static_cast<std::int64_t>(n) * d.c + c) * in_plane;
                const float* kplane = w + (static_cast<std::int64_t>(f) * d.c + c) * 9;
                for (int ki = 0; ki < 3; ++ki) {
                    const float w0 = kplane[ki * 3 + 0];
                    const float w1 = kplane[ki * 3 + 1];
                    const float w2 = kplane[ki * 3 + 2];
                    for (int oh = 0; oh < d.ho; ++oh) {
                        const int ih = oh + ki - 1;
                        if (ih < 0 || ih >= d.h) continue;
                        const float* __restrict ir = iplane + static_cast<std::int64_t>(ih) * d.w;
                        float* __restrict orow = oplane + static_cast<std::int64_t>(oh) * wo;
                        orow[0] += w1 * ir[0] + w2 * ir[1];
                        for (int ow = 1; ow < wo - 1; ++ow) {
                            orow[ow] += w0 * ir[ow - 1] + w1 * ir[ow] + w2 * ir[ow + 1];
                        }
                        orow[wo - 1] += w0 * ir[wo - 2] + w1 * ir[wo - 1];
                    }
                }
            }
        }
    }
}

void conv2d_forward_kernel(const ConvDims& d, const float* __restrict x, const float* __restrict w,
                           const float* __restrict b, float* __restrict out) {
    if (d.kh == 3 && d.kw == 3 && d.stride == 1 && d.pad == 1 && d.wo >= 2) {
        conv2d_forward_3x3(d, x, w, b, out);
        return;
    }
    const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(d.ho) * d.wo;
    for (int n = 0; n < d.n; ++n) {
        for (int f = 0; f < d.f; ++f) {
            float* __restrict oplane = out + (static_cast<std::int64_t>(n) * d.f + f) * out_plane;
            const float bv = b[f];
            for (std::int64_t i = 0; i < out_plane; ++i) oplane[i] = bv;
            for (int c = 0; c < d.c; ++c) {
                const float* iplane = x + (static_cast<std::int64_t>(n) * d.c + c) * in_plane;
                const float* kplane = w + (static_cast<std::int64_t>(f) * d.c + c) * d.kh * d.kw;
                for (int ki = 0; ki < d.kh; ++ki) {
                    for (int kj = 0; kj < d.kw; ++kj) {
                        const float wv = kplane[ki * d.kw + kj];
                        // valid ow range: 0 <= ow*stride + kj - pad < w
                        int ow0 = 0;
                        while (ow0 < d.wo && ow0 * d.stride + kj - d.pad < 0) ++ow0;
                        int ow1 = d.wo - 1;
                        while (ow1 >= 0 && ow1 * d.stride + kj - d.pad >= d.w) --ow1;
                        for (int oh = 0; oh < d.ho; ++oh) {
                            const int ih = oh * d.stride + ki - d.pad;
                            if (ih < 0 || ih >= d.h) continue;
                            const float* __restrict irow = iplane + static_cast<std::int64_t>(ih) * d.w;
                            float* __restrict orow = oplane + static_cast<std::int64_t>(oh) * d.wo;
                            if (d.stride == 1) {
                                const int off = kj - d.pad;
                                for (int ow = ow0; ow <= ow1; ++ow) orow[ow] += wv * irow[ow + off];
                            } else {
                                for (int ow = ow0; ow <= ow1; ++ow) {
                                    orow[ow] += wv * irow[ow * d.stride + kj - d.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// 3x3 stride-1 pad-1 backward: fused taps, mirrored from the forward path
void conv2d_backward_3x3(const ConvDims& d, const float* __restrict x, const float* __restrict w,
                         const float* __restrict gout, float* __restrict gx, float* __restrict gw) {
    const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(d.ho) * d.wo;
    const int wo = d.wo;
    for (int n = 0; n < d.n; ++n) {
        for (int f = 0; f < d.f; ++f) {
            const float* gplane = gout + (static_cast<std::int64_t>(n) * d.f + f) * out_plane;
            for (int c = 0; c < d.c; ++c) {
                const float* iplane = x + (static_cast<std::int64_t>(n) * d.c + c) * in_plane;
                const float* kplane = w + (static_cast<std::int64_t>(f) * d.c + c) * 9;
                float* gxplane = gx ? gx + (static_cast<std::int64_t>(n) * d.c + c) * in_plane : nullptr;
                float* gwplane = gw ? gw + (static_cast<std::int64_t>(f) * d.c + c) * 9 : nullptr;
                for (int ki = 0; ki < 3; ++ki) {
                    const float w0 = kplane[ki * 3 + 0];
                    const float w1 = kplane[ki * 3 + 1];
                    const float w2 = kplane[ki * 3 + 2];
                    float acc0 = 0.0f, acc1 = 0.0f, acc2 = 0.0f;
                    for (int oh = 0; oh < d.ho; ++oh) {
                        const int ih = oh + ki - 1;
                        if (ih < 0 || ih >= d.h) continue;
                        const float* __restrict grow = gplane + static_cast<std::int64_t>(oh) * wo;
                        const float* __restrict ir = iplane + static_cast<std::int64_t>(ih) * d.w;
                        if (gxplane && gwplane) {
                            float* __restrict gxr = gxplane + static_cast<std::int64_t>(ih) * d.w;
                            gxr[0] += w1 * grow[0] + w0 * grow[1];
                            acc1 += grow[0] * ir[0];
                            acc2 += grow[0] * ir[1];
                            float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f;
                            for (int j = 1; j < wo - 1; ++j) {
                                gxr[j] += w2 * grow[j - 1] + w1 * grow[j] + w0 * grow[j + 1];
                                a0 += grow[j] * ir[j - 1];
                                a1 += grow[j] * ir[j];
                                a2 += grow[j] * ir[j + 1];
                            }
                            gxr[wo - 1] += w2 * grow[wo - 2] + w1 * grow[wo - 1];
                            acc0 += a0 + grow[wo - 1] * ir[wo - 2];
                            acc1 += a1 + grow[wo - 1] * ir[wo - 1];
                            acc2 += a2;
                        } else if (gxplane) {
                            float* __restrict gxr = gxplane + static_cast<std::int64_t>(ih) * d.w;
                            gxr[0] += w1 * grow[0] + w0 * grow[1];
                            for (int j = 1; j < wo - 1; ++j) {
                                gxr[j] += w2 * grow[j - 1] + w1 * grow[j] + w0 * grow[j + 1];
                            }
                            gxr[wo - 1] += w2 * grow[wo - 2] + w1 * grow[wo - 1];
                        } else if (gwplane) {
                            acc1 += grow[0] * ir[0];
                            acc2 += grow[0] * ir[1];
                            float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f;
                            for (int ow = 1; ow < wo - 1; ++ow) {
                                a0 += grow[ow] * ir[ow - 1];
                                a1 += grow[ow] * ir[ow];
                                a2 += grow[ow] * ir[ow + 1];
                            }
                            acc0 += a0 + grow[wo - 1] * ir[wo - 2];
                            acc1 += a1 + grow[wo - 1] * ir[wo - 1];
                            acc2 += a2;
                        }
                    }
                    if (gwplane) {
                        gwplane[ki * 3 + 0] += acc0;
                        gwplane[ki * 3 + 1] += acc1;
                        gwplane[ki * 3 + 2] += acc2;
                    }
                }
            }
        }
    }
}

void conv2d_backward_kernel(const ConvDims& d, const float* __restrict x, const float* __restrict w,
                            const float* __restrict gout, float* __restrict gx, float* __restrict gw,
                            float* __restrict gb) {
    const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.w;
    const std::int64_t out_plane = static_cast<std::int64_t>(d.ho) * d.wo;
    if (gb) {
        for (int n = 0; n < d.n; ++n) {
            for (int f = 0; f < d.f; ++f) {
                const float* gplane = gout + (static_cast<std::int64_t>(n) * d.f + f) * out_plane;
                double acc = 0.0;
                for (std::int64_t i = 0; i < out_plane; ++i) acc += gplane[i];
                gb[f] += static_cast<float>(acc);
            }
        }
    }
    if (d.kh == 3 && d.kw == 3 && d.stride == 1 && d.pad == 1 && d.wo >= 2 && (gx || gw)) {
        conv2d_backward_3x3(d, x, w, gout, gx, gw);
        return;
    }
    for (int n = 0; n < d.n; ++n) {
        for (int f = 0; f < d.f; ++f) {
            const float* gplane = gout + (static_cast<std::int64_t>(n) * d.f + f) * out_plane;
            for (int c = 0; c < d.c; ++c) {
                const float* iplane = x + (static_cast<std::int64_t>(n) * d.c + c) * in_plane;
                const float* kplane = w + (static_cast<std::int64_t>(f) * d.c + c) * d.kh * d.kw;
                float* gxplane = gx ? gx + (static_cast<std::int64_t>(n) * d.c + c) * in_plane : nullptr;
                float* gwplane = gw ? gw + (static_cast<std::int64_t>(f) * d.c + c) * d.kh * d.kw : nullptr;
                for (int ki = 0; ki < d.kh; ++ki) {
                    for (int kj = 0; kj < d.kw; ++kj) {
                        const float wv = kplane[ki * d.kw + kj];
                        float wacc = 0.0f;
                        for (int oh = 0; oh < d.ho; ++oh) {
                            const int ih = oh * d.stride + ki - d.pad;
                            if (ih < 0 || ih >= d.h) continue;
                            const float* __restrict grow = gplane + static_cast<std::int64_t>(oh) * d.wo;
                            int ow0 = 0;
                            while (ow0 < d.wo && ow0 * d.stride + kj - d.pad < 0) ++ow0;
                            int ow1 = d.wo - 1;
                            while (ow1 >= 0 && ow1 * d.stride + kj - d.pad >= d.w) --ow1;
                            const float* __restrict irow = iplane + static_cast<std::int64_t>(ih) * d.w;
                            if (gxplane) {
                                float* __restrict gxrow = gxplane + static_cast<std::int64_t>(ih) * d.w;
                                if (d.stride == 1) {
                                    const int off = kj - d.pad;
                                    for (int ow = ow0; ow <= ow1; ++ow) gxrow[ow + off] += wv * grow[ow];
                                } else {
                                    for (int ow = ow0; ow <= ow1; ++ow) {
                                        gxrow[ow * d.stride + kj - d.pad] += wv * grow[ow];
                                    }
                                }
                            }
                            if (gwplane) {
                                if (d.stride == 1) {
                                    const int off = kj - d.pad;
                                    float acc = 0.0f;
                                    for (int ow = ow0; ow <= ow1; ++ow) acc += grow[ow] * irow[ow + off];
                                    wacc += acc;
                                } else {
                                    float acc = 0.0f;
                                    for (int ow = ow0; ow <= ow1; ++ow) {
                                        acc += grow[ow] * irow[ow * d.stride + kj - d.pad];
                                    }
                                    wacc += acc;
                                }
                            }
                        }
                        if (gwplane) gwplane[ki * d.kw + kj] += wacc;
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(Tensor x, Tensor w, Tensor b, int stride, int padding) {
    const ConvDims d = conv_dims(x, w, b, stride, padding);
    Tensor out = Tensor::zeros({d.n, d.f, d.ho, d.wo});
    conv2d_forward_kernel(d, x.data(), w.data(), b.data(), out.data());
    if (grad_enabled({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tape::active()->record([x, w, b, out, d]() mutable {
            if (!out.has_grad()) return;
            float* gx = nullptr;
            float* gw = nullptr;
            float* gb = nullptr;
            if (x.requires_grad()) {
                x.ensure_grad();
                gx = x.grad();
            }
            if (w.requires_grad()) {
                w.ensure_grad();
                gw = w.grad();
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                gb = b.grad();
            }
            conv2d_backward_kernel(d, x.data(), w.data(), out.grad(), gx, gw, gb);
        });
    }
    return out;
}

Tensor upsample_nearest(Tensor x, int factor) {
    require_rank4(x, "upsample_nearest");
    if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out = Tensor::zeros({n, c, h * factor, w * factor});
    const float* px = x.data();
    float* po = out.data();
    const int wo = w * factor;
    for (int nc = 0; nc < n * c; ++nc) {
        const float* iplane = px + static_cast<std::int64_t>(nc) * h * w;
        float* oplane = po + static_cast<std::int64_t>(nc) * h * factor * wo;
        for (int ih = 0; ih < h; ++ih) {
            const float* irow = iplane + static_cast<std::int64_t>(ih) * w;
            for (int fy = 0; fy < factor; ++fy) {
                float* orow = oplane + static_cast<std::int64_t>(ih * factor + fy) * wo;
                for (int iw = 0; iw < w; ++iw) {
                    const float v = irow[iw];
                    for (int fx = 0; fx < factor; ++fx) orow[iw * factor + fx] = v;
                }
            }
        }
    }
    if (grad_enabled({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record([x, out, factor, n, c, h, w]() mutable {
            if (!out.has_grad()) return;
            x.ensure_grad();
            const float* g = out.grad();
            float* gx = x.grad();
            const int wo = w * factor;
            for (int nc = 0; nc < n * c; ++nc) {
                const float* gplane = g + static_cast<std::int64_t>(nc) * h * factor * wo;
                float* gxplane = gx + static_cast<std::int64_t>(nc) * h * w;
                for (int ih = 0; ih < h; ++ih) {
                    float* gxrow = gxplane + static_cast<std::int64_t>(ih) * w;
                    for (int fy = 0; fy < factor; ++fy) {
                        const float* grow = gplane + static_cast<std::int64_t>(ih * factor + fy) * wo;
                        for (int iw = 0; iw < w; ++iw) {
                            float acc = 0.0f;
                            for (int fx = 0; fx < factor; ++fx) acc += grow[iw * factor + fx];
                            gxrow[iw] += acc;
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor transposed_upsample(Tensor x, int factor, Tensor w, Tensor b) {
    if (factor != 2 && factor != 4) {
        throw ConfigError("transposed_upsample: factor must be 2 or 4, got " + std::to_string(factor));
    }
    const int kh = w.dim(2);
    if (kh % 2 == 0) throw ConfigError("transposed_upsample: kernel side must be odd for same padding");
    return conv2d(upsample_nearest(x, factor), w, b, 1, (kh - 1) / 2);
}

Tensor avg_pool2(Tensor x) {
    require_rank4(x, "avg_pool2");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw DimensionError("avg_pool2: spatial dims must be even, got " + shape_str(x.shape()));
    }
    const int ho = h / 2, wo = w / 2;
    Tensor out = Tensor::zeros({n, c, ho, wo});
    const float* px = x.data();
    float* po = out.data();
    for (int nc = 0; nc < n * c; ++nc) {
        const float* iplane = px + static_cast<std::int64_t>(nc) * h * w;
        float* oplane = po + static_cast<std::int64_t>(nc) * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
            const float* r0 = iplane + static_cast<std::int64_t>(2 * oh) * w;
            const float* r1 = r0 + w;
            float* orow = oplane + static_cast<std::int64_t>(oh) * wo;
            for (int ow = 0; ow < wo; ++ow) {
                orow[ow] = 0.25f * (r0[2 * ow] + r0[2 * ow + 1] + r1[2 * ow] + r1[2 * ow + 1]);
            }
        }
    }
    if (grad_enabled({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record([x, out, n, c, h, w, ho, wo]() mutable {
            if (!out.has_grad()) return;
            x.ensure_grad();
            const float* g = out.grad();
            float* gx = x.grad();
            for (int nc = 0; nc < n * c; ++nc) {
                const float* gplane = g + static_cast<std::int64_t>(nc) * ho * wo;
                float* gxplane = gx + static_cast<std::int64_t>(nc) * h * w;
                for (int oh = 0; oh < ho; ++oh) {
                    const float* grow = gplane + static_cast<std::int64_t>(oh) * wo;
                    float* x0 = gxplane + static_cast<std::int64_t>(2 * oh) * w;
                    float* x1 = x0 + w;
                    for (int ow = 0; ow < wo; ++ow) {
                        const float q = 0.25f * grow[ow];
                        x0[2 * ow] += q;
                        x0[2 * ow + 1] += q;
                        x1[2 * ow] += q;
                        x1[2 * ow + 1] += q;
                    }
                }
            }
        });
    }
    return out;
}

Tensor concat_channels(Tensor a, Tensor b) {
    require_rank4(a, "concat_channels");
    require_rank4(b, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw DimensionError("concat_channels: batch/spatial mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor out = Tensor::zeros({n, ca + cb, h, w});
    float* po = out.data();
    const float* pa = a.data();
    const float* pb = b.data();
    for (int i = 0; i < n; ++i) {
        std::memcpy(po + (static_cast<std::int64_t>(i) * (ca + cb)) * plane,
                    pa + static_cast<std::int64_t>(i) * ca * plane,
                    static_cast<std::size_t>(ca * plane) * sizeof(float));
        std::memcpy(po + (static_cast<std::int64_t>(i) * (ca + cb) + ca) * plane,
                    pb + static_cast<std::int64_t>(i) * cb * plane,
                    static_cast<std::size_t>(cb * plane) * sizeof(float));
    }
    if (grad_enabled({&a, &b})) {
        out.set_requires_grad(true);
        Tape::active()->record([a, b, out, n, ca, cb, plane]() mutable {
            if (!out.has_grad()) return;
            const float* g = out.grad();
            if (a.requires_grad()) {
                a.ensure_grad();
                float* ga = a.grad();
                for (int i = 0; i < n; ++i) {
                    const float* gs = g + (static_cast<std::int64_t>(i) * (ca + cb)) * plane;
                    float* gd = ga + static_cast<std::int64_t>(i) * ca * plane;
                    for (std::int64_t k = 0; k < ca * plane; ++k) gd[k] += gs[k];
                }
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                for (int i = 0; i < n; ++i) {
                    const float* gs = g + (static_cast<std::int64_t>(i) * (ca + cb) + ca) * plane;
                    float* gd = gb + static_cast<std::int64_t>(i) * cb * plane;
                    for (std::int64_t k = 0; k < cb * plane; ++k) gd[k] += gs[k];
                }
            }
        });
    }
    return out;
}

Tensor linear(Tensor x, Tensor w, Tensor b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) {
        throw DimensionError("linear: expected x:[N,D], w:[D,K], b:[K]");
    }
    const int n = x.dim(0), d = x.dim(1), k = w.dim(1);
    if (w.dim(0) != d || b.dim(0) != k) {
        throw DimensionError("linear: shape mismatch x" + shape_str(x.shape()) + " w" +
                             shape_str(w.shape()) + " b" + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros({n, k});
    const float* px = x.data();
    const float* pw = w.data();
    const float* pb = b.data();
    float* po = out.data();
    for (int i = 0; i < n; ++i) {
        float* orow = po + static_cast<std::int64_t>(i) * k;
        for (int j = 0; j < k; ++j) orow[j] = pb[j];
        const float* xrow = px + static_cast<std::int64_t>(i) * d;
        for (int l = 0; l < d; ++l) {
            const float xv = xrow[l];
            const float* wrow = pw + static_cast<std::int64_t>(l) * k;
            for (int j = 0; j < k; ++j) orow[j] += xv * wrow[j];
        }
    }
    if (grad_enabled({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tape::active()->record([x, w, b, out, n, d, k]() mutable {
            if (!out.has_grad()) return;
            const float* g = out.grad();
            if (b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                for (int i = 0; i < n; ++i) {
                    const float* grow = g + static_cast<std::int64_t>(i) * k;
                    for (int j = 0; j < k; ++j) gb[j] += grow[j];
                }
            }
            if (w.requires_grad()) {
                w.ensure_grad();
                float* gw = w.grad();
                const float* px2 = x.data();
                for (int i = 0; i < n; ++i) {
                    const float* xrow = px2 + static_cast<std::int64_t>(i) * d;
                    const float* grow = g + static_cast<std::int64_t>(i) * k;
                    for (int l = 0; l < d; ++l) {
                        float* gwrow = gw + static_cast<std::int64_t>(l) * k;
                        const float xv = xrow[l];
                        for (int j = 0; j < k; ++j) gwrow[j] += xv * grow[j];
                    }
                }
            }
            if (x.requires_grad()) {
                x.ensure_grad();
                float* gx = x.grad();
                const float* pw2 = w.data();
                for (int i = 0; i < n; ++i) {
                    float* gxrow = gx + static_cast<std::int64_t>(i) * d;
                    const float* grow = g + static_cast<std::int64_t>(i) * k;
                    for (int l = 0; l < d; ++l) {
                        const float* wrow = pw2 + static_cast<std::int64_t>(l) * k;
                        float acc = 0.0f;
                        for (int j = 0; j < k; ++j) acc += wrow[j] * grow[j];
                        gxrow[l] += acc;
                    }
                }
            }
        });
    }
    return out;
}

Tensor global_avg_pool(Tensor x) {
    require_rank4(x, "global_avg_pool");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor out = Tensor::zeros({n, c});
    const float* px = x.data();
    float* po = out.data();
    for (int nc = 0; nc < n * c; ++nc) {
        const float* iplane = px + static_cast<std::int64_t>(nc) * plane;
        double acc = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) acc += iplane[i];
        po[nc] = static_cast<float>(acc / static_cast<double>(plane));
    }
    if (grad_enabled({&x})) {
        out.set_requires_grad(true);
        Tape::active()->record([x, out, n, c, plane]() mutable {
            if (!out.has_grad()) return;
            x.ensure_grad();
            const float* g = out.grad();
            float* gx = x.grad();
            const float inv = 1.0f / static_cast<float>(plane);
            for (int nc = 0; nc < n * c; ++nc) {
                const float gv = g[nc] * inv;
                float* gplane = gx + static_cast<std::int64_t>(nc) * plane;
                for (std::int64_t i = 0; i < plane; ++i) gplane[i] += gv;
            }
        });
    }
    return out;
}

// ---- losses -----------------------------------------------------------------

Tensor mse_loss(Tensor a, Tensor b) {
    require_same_shape(a, b, "mse_loss");
    const std::int64_t n = a.numel();
    if (n == 0) throw DimensionError("mse_loss: empty tensors");
    const float* pa = a.data();
    const float* pb = b.data();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double diff = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        acc += diff * diff;
    }
    Tensor out = Tensor::scalar_tensor(static_cast<float>(acc / static_cast<double>(n)));
    if (grad_enabled({&a, &b})) {
        out.set_requires_grad(true);
        Tape::active()->record([a, b, out, n]() mutable {
            if (!out.has_grad()) return;
            const float g = out.grad()[0];
            const float scale = 2.0f * g / static_cast<float>(n);
            const float* pa2 = a.data();
            const float* pb2 = b.data();
            if (a.requires_grad()) {
                a.ensure_grad();
                float* ga = a.grad();
                for (std::int64_t i = 0; i < n; ++i) ga[i] += scale * (pa2[i] - pb2[i]);
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                float* gb = b.grad();
                for (std::int64_t i = 0; i < n; ++i) gb[i] -= scale * (pa2[i] - pb2[i]);
            }
        });
    }
    return out;
}

Tensor masked_mse_loss(Tensor pred, Tensor target, Tensor sel) {
    require_same_shape(pred, target, "masked_mse_loss");
    require_rank4(pred, "masked_mse_loss");
    const int n = pred.dim(0), c = pred.dim(1), h = pred.dim(2), w = pred.dim(3);
    // selector is [H,W] (shared across the batch) or [N,H,W] (per sample)
    const bool per_sample = sel.rank() == 3;
    if (per_sample) {
        if (sel.dim(0) != n || sel.dim(1) != h || sel.dim(2) != w) {
            throw DimensionError("masked_mse_loss: selector " + shape_str(sel.shape()) +
                                 " does not match " + shape_str(pred.shape()));
        }
    } else if (sel.rank() != 2 || sel.dim(0) != h || sel.dim(1) != w) {
        throw DimensionError("masked_mse_loss: selector " + shape_str(sel.shape()) +
                             " does not match spatial dims of " + shape_str(pred.shape()));
    }
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const float* ps = sel.data();
    std::int64_t selected = 0;
    {
        const std::int64_t sel_elems = per_sample ? plane * n : plane;
        for (std::int64_t i = 0; i < sel_elems; ++i) {
            if (ps[i] != 0.0f) ++selected;
        }
    }
    const std::int64_t denom = per_sample ? selected * c : selected * n * c;
    auto sel_plane = [&](int ni) { return per_sample ? ps + static_cast<std::int64_t>(ni) * plane : ps; };
    double acc = 0.0;
    const float* pp = pred.data();
    const float* pt = target.data();
    if (denom > 0) {
        for (int ni = 0; ni < n; ++ni) {
            const float* sp = sel_plane(ni);
            for (int ci = 0; ci < c; ++ci) {
                const std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    if (sp[i] == 0.0f) continue;
                    const double diff = static_cast<double>(pp[base + i]) - static_cast<double>(pt[base + i]);
                    acc += diff * diff;
                }
            }
        }
        acc /= static_cast<double>(denom);
    }
    Tensor out = Tensor::scalar_tensor(static_cast<float>(acc));
    if (grad_enabled({&pred, &target})) {
        out.set_requires_grad(true);
        Tape::active()->record([pred, target, sel, out, n, c, plane, denom, per_sample]() mutable {
            if (!out.has_grad() || denom == 0) return;
            const float g = out.grad()[0];
            const float scale = 2.0f * g / static_cast<float>(denom);
            const float* pp2 = pred.data();
            const float* pt2 = target.data();
            const float* ps2 = sel.data();
            auto splane = [&](int ni) {
                return per_sample ? ps2 + static_cast<std::int64_t>(ni) * plane : ps2;
            };
            if (pred.requires_grad()) {
                pred.ensure_grad();
                float* gp = pred.grad();
                for (int ni = 0; ni < n; ++ni) {
                    const float* sp = splane(ni);
                    for (int ci = 0; ci < c; ++ci) {
                        const std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) {
                            if (sp[i] == 0.0f) continue;
                            gp[base + i] += scale * (pp2[base + i] - pt2[base + i]);
                        }
                    }
                }
            }
            if (target.requires_grad()) {
                target.ensure_grad();
                float* gt = target.grad();
                for (int ni = 0; ni < n; ++ni) {
                    const float* sp = splane(ni);
                    for (int ci = 0; ci < c; ++ci) {
                        const std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * plane;
                        for (std::int64_t i = 0; i < plane; ++i) {
                            if (sp[i] == 0.0f) continue;
                            gt[base + i] -= scale * (pp2[base + i] - pt2[base + i]);
                        }
                    }
                }
            }
        });
    }
    return out;
}

namespace {

// logits laid out [N,K] or [N,K,H,W]; samples iterate over N (x H x W).
struct SoftmaxDims {
    std::int64_t samples;  // N*H*W
    int classes;
    std::int64_t spatial;  // H*W (1 for rank 2)
    int batch;
};

SoftmaxDims softmax_dims(Tensor logits, const std::vector<int>& labels, const char* op) {
    SoftmaxDims d{};
    if (logits.rank() == 2) {
        d.batch = logits.dim(0);
        d.classes = logits.dim(1);
        d.spatial = 1;
    } else if (logits.rank() == 4) {
        d.batch = logits.dim(0);
        d.classes = logits.dim(1);
        d.spatial = static_cast<std::int64_t>(logits.dim(2)) * logits.dim(3);
    } else {
        throw DimensionError(std::string(op) + ": logits must be [N,K] or [N,K,H,W], got " +
                             shape_str(logits.shape()));
    }
    d.samples = static_cast<std::int64_t>(d.batch) * d.spatial;
    if (d.samples == 0) throw DimensionError(std::string(op) + ": empty logits");
    if (static_cast<std::int64_t>(labels.size()) != d.samples) {
        throw DimensionError(std::string(op) + ": label count " + std::to_string(labels.size()) +
                             " does not match sample count " + std::to_string(d.samples));
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= d.classes) {
            throw DataError(std::string(op) + ": class index " + std::to_string(lab) +
                            " out of range [0," + std::to_string(d.classes) + ")");
        }
    }
    return d;
}

// logit for (sample s, class k): s = b*spatial + r with layout [b, k, r]
inline std::int64_t logit_index(const SoftmaxDims& d, std::int64_t s, int k) {
    const std::int64_t b = s / d.spatial;
    const std::int64_t r = s % d.spatial;
    return (static_cast<std::int64_t>(b) * d.classes + k) * d.spatial + r;
}

}  // namespace

Tensor softmax_cross_entropy(Tensor logits, const std::vector<int>& labels) {
    const SoftmaxDims d = softmax_dims(logits, labels, "softmax_cross_entropy");
    const float* pz = logits.data();
    double acc = 0.0;
    for (std::int64_t s = 0; s < d.samples; ++s) {
        float zmax = -std::numeric_limits<float>::infinity();
        for (int k = 0; k < d.classes; ++k) zmax = std::max(zmax, pz[logit_index(d, s, k)]);
        double lse = 0.0;
        for (int k = 0; k < d.classes; ++k) {
            lse += std::exp(static_cast<double>(pz[logit_index(d, s, k)] - zmax));
        }
        const double zt = static_cast<double>(pz[logit_index(d, s, labels[static_cast<std::size_t>(s)])]);
        acc += std::log(lse) + static_cast<double>(zmax) - zt;
    }
    Tensor out = Tensor::scalar_tensor(static_cast<float>(acc / static_cast<double>(d.samples)));
    if (grad_enabled({&logits})) {
        out.set_requires_grad(true);
        Tape::active()->record([logits, labels, out, d]() mutable {
            if (!out.has_grad()) return;
            const float g = out.grad()[0];
            logits.ensure_grad();
            const float* pz2 = logits.data();
            float* gz = logits.grad();
            const float inv = g / static_cast<float>(d.samples);
            std::vector<float> prob(static_cast<std::size_t>(d.classes));
            for (std::int64_t s = 0; s < d.samples; ++s) {
                float zmax = -std::numeric_limits<float>::infinity();
                for (int k = 0; k < d.classes; ++k) zmax = std::max(zmax, pz2[logit_index(d, s, k)]);
                double lse = 0.0;
                for (int k = 0; k < d.classes; ++k) {
                    prob[static_cast<std::size_t>(k)] =
                        std::exp(pz2[logit_index(d, s, k)] - zmax);
                    lse += prob[static_cast<std::size_t>(k)];
                }
                const int t = labels[static_cast<std::size_t>(s)];
                for (int k = 0; k < d.classes; ++k) {
                    const float p = static_cast<float>(prob[static_cast<std::size_t>(k)] / lse);
                    gz[logit_index(d, s, k)] += inv * (p - (k == t ? 1.0f : 0.0f));
                }
            }
        });
    }
    return out;
}

Tensor softmax_true_prob(Tensor logits, const std::vector<int>& labels) {
    const SoftmaxDims d = softmax_dims(logits, labels, "softmax_true_prob");
    Shape out_shape;
    if (logits.rank() == 2) {
        out_shape = {d.batch};
    } else {
        out_shape = {d.batch, logits.dim(2), logits.dim(3)};
    }
    Tensor out = Tensor::zeros(out_shape);
    const float* pz = logits.data();
    float* po = out.data();
    for (std::int64_t s = 0; s < d.samples; ++s) {
        float zmax = -std::numeric_limits<float>::infinity();
        for (int k = 0; k < d.classes; ++k) zmax = std::max(zmax, pz[logit_index(d, s, k)]);
        double lse = 0.0;
        for (int k = 0; k < d.classes; ++k) {
            lse += std::exp(static_cast<double>(pz[logit_index(d, s, k)] - zmax));
        }
        const int t = labels[static_cast<std::size_t>(s)];
        po[s] = static_cast<float>(std::exp(static_cast<double>(pz[logit_index(d, s, t)] - zmax)) / lse);
    }
    if (grad_enabled({&logits})) {
        out.set_requires_grad(true);
        Tape::active()->record([logits, labels, out, d]() mutable {
            if (!out.has_grad()) return;
            const float* g = out.grad();
            logits.ensure_grad();
            const float* pz2 = logits.data();
            float* gz = logits.grad();
            std::vector<double> prob(static_cast<std::size_t>(d.classes));
            for (std::int64_t s = 0; s < d.samples; ++s) {
                if (g[s] == 0.0f) continue;
                float zmax = -std::numeric_limits<float>::infinity();
                for (int k = 0; k < d.classes; ++k) zmax = std::max(zmax, pz2[logit_index(d, s, k)]);
                double lse = 0.0;
                for (int k = 0; k < d.classes; ++k) {
                    prob[static_cast<std::size_t>(k)] =
                        std::exp(static_cast<double>(pz2[logit_index(d, s, k)] - zmax));
                    lse += prob[static_cast<std::size_t>(k)];
                }
                const int t = labels[static_cast<std::size_t>(s)];
                const double pt = prob[static_cast<std::size_t>(t)] / lse;
                for (int k = 0; k < d.classes; ++k) {
                    const double pk = prob[static_cast<std::size_t>(k)] / lse;
                    const double dpt = pt * ((k == t ? 1.0 : 0.0) - pk);
                    gz[logit_index(d, s, k)] += g[s] * static_cast<float>(dpt);
                }
            }
        });
    }
    return out;
}

Tensor focal_loss(Tensor prob_true, float gamma, float alpha) {
    if (gamma < 0.0f) throw ConfigError("focal_loss: gamma must be >= 0");
    const std::int64_t n = prob_true.numel();
    if (n == 0) throw DimensionError("focal_loss: empty input");
    constexpr float kClamp = 1e-7f;
    const float* pp = prob_true.data();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double p = std::max(pp[i], kClamp);
        if (p >= 1.0) continue;  // log(1) == 0
        acc += -static_cast<double>(alpha) * std::pow(1.0 - p, static_cast<double>(gamma)) * std::log(p);
    }
    Tensor out = Tensor::scalar_tensor(static_cast<float>(acc / static_cast<double>(n)));
    if (grad_enabled({&prob_true})) {
        out.set_requires_grad(true);
        Tape::active()->record([prob_true, out, gamma, alpha, n]() mutable {
            if (!out.has_grad()) return;
            const float g = out.grad()[0];
            prob_true.ensure_grad();
            const float* pp2 = prob_true.data();
            float* gp = prob_true.grad();
            const double inv = static_cast<double>(g) / static_cast<double>(n);
            for (std::int64_t i = 0; i < n; ++i) {
                const double p = static_cast<double>(pp2[i]);
                if (p < 1e-7 || p >= 1.0) continue;  // clamped or exactly certain
                const double q = 1.0 - p;
                double term = std::pow(q, static_cast<double>(gamma)) / p;
                if (gamma > 0.0f) {
                    term -= static_cast<double>(gamma) * std::pow(q, static_cast<double>(gamma) - 1.0) *
                            std::log(p);
                }
                gp[i] += static_cast<float>(-static_cast<double>(alpha) * term * inv);
            }
        });
    }
    return out;
}

bool all_finite(Tensor t) {
    const float* p = t.data();
    const std::int64_t n = t.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) return false;
    }
    return true;
}

void check_finite(Tensor t, const char* what) {
    if (!all_finite(t)) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace edmae
