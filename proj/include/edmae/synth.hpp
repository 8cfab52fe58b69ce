#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "edmae/tensor.hpp"

namespace edmae {

// Seeded generator of echocardiography-like images: dark background, bright
// fan-shaped sector, per-class layouts of elliptical chambers (dark interior,
// bright rim), multiplicative speckle. Ground-truth masks mark chamber
// interiors exactly.
struct SynthSpec {
    int size = 64;          // square image side; must be divisible by patch
    int classes = 4;        // distinct chamber layouts
    int patch = 8;
    float noise = 0.15f;    // speckle strength sigma
    std::uint64_t seed = 0;

    void validate() const;
};

struct ManifestEntry {
    std::string image;  // path relative to the manifest directory
    int label = -1;     // -1 when unlabeled
    std::string mask;   // empty when absent
};

struct DatasetManifest {
    std::string split;                   // train / val / test
    std::filesystem::path base_dir;      // directory the entry paths resolve against
    std::vector<ManifestEntry> entries;

    std::filesystem::path image_path(std::size_t i) const { return base_dir / entries[i].image; }
    std::filesystem::path mask_path(std::size_t i) const { return base_dir / entries[i].mask; }
};

struct GenerateOptions {
    bool with_labels = false;
    bool with_masks = false;
};

// Writes n images (and masks, if requested) as .t32 files under
// dir/img and dir/mask, plus "<split>.tsv". Classes are assigned round-robin
// so every split is balanced. Fully deterministic in (spec, n).
DatasetManifest generate(const SynthSpec& spec, int n, const std::filesystem::path& dir,
                         const std::string& split, const GenerateOptions& opts);

// Renders one sample in memory: image [1,size,size] in [0,1] and the interior
// mask; deterministic in (spec, index).
struct SynthSample {
    Tensor image;
    Tensor mask;
    int label = 0;
};
SynthSample render_sample(const SynthSpec& spec, int index);

// Manifest file format: one record per line,
// `image_path<TAB>label_or_-<TAB>mask_path_or_-`.
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

Tensor load_image(const std::filesystem::path& path);

}  // namespace edmae
