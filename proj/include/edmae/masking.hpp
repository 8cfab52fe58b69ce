#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "edmae/tensor.hpp"

namespace edmae {

// Patch-grid mask layout for one sample: which grid cells are hidden from the
// teacher branch. Deterministic per (seed, ratio, grid).
struct MaskSpec {
    int grid_h = 0;
    int grid_w = 0;
    int patch = 0;  // patch side length in pixels
    double ratio = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::uint8_t> masked;  // grid_h * grid_w flags, row-major

    int cells() const { return grid_h * grid_w; }
    int masked_count() const;
    bool is_masked(int gy, int gx) const {
        return masked[static_cast<std::size_t>(gy) * grid_w + gx] != 0;
    }

    // one-line log form: "seed ratio grid_h grid_w patch"
    std::string log_line() const;
};

// Selects exactly round(ratio * cells) cells, half away from zero, by seeded
// uniform choice. ratio outside [0,1] is a config error.
MaskSpec sample_mask(int grid_h, int grid_w, int patch, double ratio, std::uint64_t seed);

// Splits an [N,C,H,W] image into the complementary zero-filled pair:
// visible has masked patches zeroed, hidden has visible patches zeroed,
// so visible + hidden == image elementwise.
std::pair<Tensor, Tensor> apply_mask(const Tensor& image, const MaskSpec& spec);

// Per-pixel [H,W] map, 1 where the pixel lies in a masked patch. Restricts the
// reconstruction loss to hidden content.
Tensor masked_pixel_selector(const MaskSpec& spec);

// Batched forms for per-sample masks: specs.size() must equal the batch size.
std::pair<Tensor, Tensor> apply_mask_batch(const Tensor& images, const std::vector<MaskSpec>& specs);
Tensor masked_pixel_selector_batch(const std::vector<MaskSpec>& specs);  // [N,H,W]

}  // namespace edmae
