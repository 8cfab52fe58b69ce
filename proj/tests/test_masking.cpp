#include "doctest.h"

#include <cmath>
#include <set>

#include "edmae/error.hpp"
#include "edmae/masking.hpp"

using namespace edmae;

TEST_CASE("sample_mask: exact masked counts") {
    CHECK(sample_mask(4, 4, 8, 0.75, 1).masked_count() == 12);
    CHECK(sample_mask(8, 8, 8, 0.0, 1).masked_count() == 0);
    CHECK(sample_mask(8, 8, 8, 1.0, 1).masked_count() == 64);
    // round half away from zero: 0.5 * 9 = 4.5 -> 5
    CHECK(sample_mask(3, 3, 8, 0.5, 1).masked_count() == 5);
    CHECK_THROWS_AS(sample_mask(4, 4, 8, 1.5, 1), ConfigError);
    CHECK_THROWS_AS(sample_mask(0, 4, 8, 0.5, 1), ConfigError);
}

TEST_CASE("sample_mask: count never off by one over random ratios") {
    Rng rng(99);
    for (int trial = 0; trial < 300; ++trial) {
        const int gh = 1 + static_cast<int>(rng.below(8));
        const int gw = 1 + static_cast<int>(rng.below(8));
        const double ratio = rng.uniform();
        const MaskSpec spec = sample_mask(gh, gw, 4, ratio, rng.next_u64());
        CHECK(spec.masked_count() == static_cast<int>(std::llround(ratio * gh * gw)));
    }
}

TEST_CASE("sample_mask: deterministic per seed, distinct across seeds") {
    const MaskSpec a = sample_mask(8, 8, 8, 0.75, 1234);
    const MaskSpec b = sample_mask(8, 8, 8, 0.75, 1234);
    CHECK(a.masked == b.masked);

    int distinct = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        if (sample_mask(8, 8, 8, 0.75, s).masked != sample_mask(8, 8, 8, 0.75, s + 1).masked) {
            ++distinct;
        }
    }
    CHECK(distinct == 200);
}

TEST_CASE("sample_mask: per-cell frequency is uniform over 10000 seeds") {
    const int cells = 64;
    std::vector<int> hits(cells, 0);
    for (std::uint64_t s = 0; s < 10000; ++s) {
        const MaskSpec spec = sample_mask(8, 8, 8, 0.75, 0xabc000 + s);
        for (int i = 0; i < cells; ++i) hits[i] += spec.masked[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < cells; ++i) {
        const double freq = hits[i] / 10000.0;
        CHECK(freq > 0.73);
        CHECK(freq < 0.77);
    }
}

TEST_CASE("apply_mask: partition identity on random specs") {
    Rng rng(5);
    Tensor image = Tensor::randu({2, 1, 32, 32}, rng, 0.0f, 1.0f);
    for (std::uint64_t s = 0; s < 50; ++s) {
        const MaskSpec spec = sample_mask(4, 4, 8, rng.uniform(), s);
        auto [visible, hidden] = apply_mask(image, spec);
        for (std::int64_t i = 0; i < image.numel(); ++i) {
            CHECK(visible.data()[i] + hidden.data()[i] == image.data()[i]);
            CHECK(visible.data()[i] * hidden.data()[i] == 0.0f);
        }
    }
}

TEST_CASE("apply_mask: ratio 0 keeps the image fully visible") {
    Rng rng(6);
    Tensor image = Tensor::randu({1, 1, 16, 16}, rng, 0.1f, 1.0f);
    const MaskSpec spec = sample_mask(2, 2, 8, 0.0, 3);
    auto [visible, hidden] = apply_mask(image, spec);
    for (std::int64_t i = 0; i < image.numel(); ++i) {
        CHECK(visible.data()[i] == image.data()[i]);
        CHECK(hidden.data()[i] == 0.0f);
    }
}

TEST_CASE("apply_mask: tiling mismatch is a dimension error") {
    Tensor image = Tensor::zeros({1, 1, 16, 16});
    const MaskSpec spec = sample_mask(3, 2, 8, 0.5, 1);  // 24x16 grid vs 16x16 image
    CHECK_THROWS_AS(apply_mask(image, spec), DimensionError);
}

TEST_CASE("masked_pixel_selector: boundary ratios and pixel counts") {
    const MaskSpec all = sample_mask(8, 8, 8, 1.0, 7);
    Tensor sel = masked_pixel_selector(all);
    REQUIRE(sel.shape() == Shape{64, 64});
    for (std::int64_t i = 0; i < sel.numel(); ++i) CHECK(sel.data()[i] == 1.0f);

    const MaskSpec none = sample_mask(8, 8, 8, 0.0, 7);
    sel = masked_pixel_selector(none);
    for (std::int64_t i = 0; i < sel.numel(); ++i) CHECK(sel.data()[i] == 0.0f);

    const MaskSpec spec = sample_mask(8, 8, 8, 0.75, 7);
    sel = masked_pixel_selector(spec);
    double total = 0.0;
    for (std::int64_t i = 0; i < sel.numel(); ++i) total += sel.data()[i];
    CHECK(total == std::llround(0.75 * 64 * 64));  // 3072
}

TEST_CASE("mask spec: log line format") {
    const MaskSpec spec = sample_mask(8, 4, 8, 0.75, 42);
    CHECK(spec.log_line() == "42 0.75 8 4 8");
}

TEST_CASE("apply_mask_batch: per-sample masks match the single-sample path") {
    Rng rng(8);
    Tensor images = Tensor::randu({3, 1, 16, 16}, rng, 0.0f, 1.0f);
    std::vector<MaskSpec> specs;
    for (int i = 0; i < 3; ++i) specs.push_back(sample_mask(2, 2, 8, 0.5, 100 + i));
    auto [vis, hid] = apply_mask_batch(images, specs);
    Tensor sel = masked_pixel_selector_batch(specs);
    REQUIRE(sel.shape() == Shape{3, 16, 16});
    const std::int64_t plane = 16 * 16;
    for (int i = 0; i < 3; ++i) {
        Tensor one = Tensor::from_vector(
            {1, 1, 16, 16},
            std::vector<float>(images.data() + i * plane, images.data() + (i + 1) * plane));
        auto [v1, h1] = apply_mask(one, specs[static_cast<std::size_t>(i)]);
        Tensor s1 = masked_pixel_selector(specs[static_cast<std::size_t>(i)]);
        for (std::int64_t q = 0; q < plane; ++q) {
            CHECK(vis.data()[i * plane + q] == v1.data()[q]);
            CHECK(hid.data()[i * plane + q] == h1.data()[q]);
            CHECK(sel.data()[i * plane + q] == s1.data()[q]);
        }
    }
}
