#include "edmae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "edmae/error.hpp"
#include "edmae/rng.hpp"

namespace edmae {

int MaskSpec::masked_count() const {
    int n = 0;
    for (std::uint8_t m : masked) n += m != 0;
    return n;
}

std::string MaskSpec::log_line() const {
    std::ostringstream os;
    os << seed << " " << ratio << " " << grid_h << " " << grid_w << " " << patch;
    return os.str();
}

MaskSpec sample_mask(int grid_h, int grid_w, int patch, double ratio, std::uint64_t seed) {
    if (grid_h < 1 || grid_w < 1) throw ConfigError("sample_mask: grid dims must be >= 1");
    if (patch < 1) throw ConfigError("sample_mask: patch must be >= 1");
    if (!(ratio >= 0.0 && ratio <= 1.0)) {
        throw ConfigError("sample_mask: ratio " + std::to_string(ratio) + " outside [0,1]");
    }
    MaskSpec spec;
    spec.grid_h = grid_h;
    spec.grid_w = grid_w;
    spec.patch = patch;
    spec.ratio = ratio;
    spec.seed = seed;
    const int cells = grid_h * grid_w;
    spec.masked.assign(static_cast<std::size_t>(cells), 0);

    // round half away from zero (ratio is non-negative here)
    const int target = static_cast<int>(std::llround(ratio * cells));

    // uniform subset: sort cells by a per-cell random key, mask the first k.
    // Index tie-break keeps the order total even on (astronomically unlikely)
    // key collisions.
    Rng rng(seed);
    std::vector<std::pair<std::uint64_t, int>> keys(static_cast<std::size_t>(cells));
    for (int i = 0; i < cells; ++i) keys[static_cast<std::size_t>(i)] = {rng.next_u64(), i};
    std::sort(keys.begin(), keys.end());
    for (int i = 0; i < target; ++i) {
        spec.masked[static_cast<std::size_t>(keys[static_cast<std::size_t>(i)].second)] = 1;
    }
    return spec;
}

std::pair<Tensor, Tensor> apply_mask(const Tensor& image, const MaskSpec& spec) {
    if (image.rank() != 4) {
        throw DimensionError("apply_mask: expected NCHW image, got " + shape_str(image.shape()));
    }
    const int n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
    if (spec.grid_h * spec.patch != h || spec.grid_w * spec.patch != w) {
        throw DimensionError("apply_mask: grid " + std::to_string(spec.grid_h) + "x" +
                             std::to_string(spec.grid_w) + " with patch " +
                             std::to_string(spec.patch) + " does not tile " + shape_str(image.shape()));
    }
    Tensor visible = image.clone();
    visible.set_requires_grad(false);
    Tensor hidden = Tensor::zeros({n, c, h, w});
    float* pv = visible.data();
    float* ph = hidden.data();
    const float* pi = image.data();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int gy = 0; gy < spec.grid_h; ++gy) {
        for (int gx = 0; gx < spec.grid_w; ++gx) {
            if (!spec.is_masked(gy, gx)) continue;
            for (int nc = 0; nc < n * c; ++nc) {
                const std::int64_t base = static_cast<std::int64_t>(nc) * plane;
                for (int py = 0; py < spec.patch; ++py) {
                    const std::int64_t row = base + static_cast<std::int64_t>(gy * spec.patch + py) * w +
                                             gx * spec.patch;
                    for (int px = 0; px < spec.patch; ++px) {
                        ph[row + px] = pi[row + px];
                        pv[row + px] = 0.0f;
                    }
                }
            }
        }
    }
    return {visible, hidden};
}

namespace {

void fill_selector_plane(const MaskSpec& spec, float* p, int w) {
    for (int gy = 0; gy < spec.grid_h; ++gy) {
        for (int gx = 0; gx < spec.grid_w; ++gx) {
            if (!spec.is_masked(gy, gx)) continue;
            for (int py = 0; py < spec.patch; ++py) {
                float* row = p + static_cast<std::int64_t>(gy * spec.patch + py) * w + gx * spec.patch;
                for (int px = 0; px < spec.patch; ++px) row[px] = 1.0f;
            }
        }
    }
}

}  // namespace

Tensor masked_pixel_selector(const MaskSpec& spec) {
    const int h = spec.grid_h * spec.patch;
    const int w = spec.grid_w * spec.patch;
    Tensor sel = Tensor::zeros({h, w});
    fill_selector_plane(spec, sel.data(), w);
    return sel;
}

std::pair<Tensor, Tensor> apply_mask_batch(const Tensor& images, const std::vector<MaskSpec>& specs) {
    if (images.rank() != 4) {
        throw DimensionError("apply_mask_batch: expected NCHW images, got " + shape_str(images.shape()));
    }
    const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    if (static_cast<int>(specs.size()) != n) {
        throw DimensionError("apply_mask_batch: " + std::to_string(specs.size()) + " specs for batch " +
                             std::to_string(n));
    }
    Tensor visible = images.clone();
    visible.set_requires_grad(false);
    Tensor hidden = Tensor::zeros({n, c, h, w});
    const float* pi = images.data();
    float* pv = visible.data();
    float* ph = hidden.data();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int ni = 0; ni < n; ++ni) {
        const MaskSpec& spec = specs[static_cast<std::size_t>(ni)];
        if (spec.grid_h * spec.patch != h || spec.grid_w * spec.patch != w) {
            throw DimensionError("apply_mask_batch: spec does not tile sample " + std::to_string(ni));
        }
        for (int gy = 0; gy < spec.grid_h; ++gy) {
            for (int gx = 0; gx < spec.grid_w; ++gx) {
                if (!spec.is_masked(gy, gx)) continue;
                for (int ci = 0; ci < c; ++ci) {
                    const std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * plane;
                    for (int py = 0; py < spec.patch; ++py) {
                        const std::int64_t row = base +
                                                 static_cast<std::int64_t>(gy * spec.patch + py) * w +
                                                 gx * spec.patch;
                        for (int px = 0; px < spec.patch; ++px) {
                            ph[row + px] = pi[row + px];
                            pv[row + px] = 0.0f;
                        }
                    }
                }
            }
        }
    }
    return {visible, hidden};
}

Tensor masked_pixel_selector_batch(const std::vector<MaskSpec>& specs) {
    if (specs.empty()) throw DimensionError("masked_pixel_selector_batch: no specs");
    const int h = specs[0].grid_h * specs[0].patch;
    const int w = specs[0].grid_w * specs[0].patch;
    Tensor sel = Tensor::zeros({static_cast<int>(specs.size()), h, w});
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].grid_h * specs[i].patch != h || specs[i].grid_w * specs[i].patch != w) {
            throw DimensionError("masked_pixel_selector_batch: inconsistent spec geometry");
        }
        fill_selector_plane(specs[i], sel.data() + static_cast<std::int64_t>(i) * h * w, w);
    }
    return sel;
}

}  // namespace edmae
