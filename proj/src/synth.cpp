#include "edmae/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "edmae/error.hpp"
#include "edmae/serialize.hpp"

namespace edmae {

void SynthSpec::validate() const {
    if (size < 16) throw ConfigError("synth: size must be >= 16");
    if (patch < 1 || size % patch != 0) {
        throw ConfigError("synth: size " + std::to_string(size) + " not divisible by patch " +
                          std::to_string(patch));
    }
    if (classes < 2) throw ConfigError("synth: class count must be >= 2");
    if (noise < 0.0f) throw ConfigError("synth: noise strength must be >= 0");
}

namespace {

struct Ellipse {
    double cy, cx;  // center, normalized [0,1]
    double ry, rx;  // radii, normalized
    double tilt;    // radians
};

// Chamber layouts per class; coordinates live inside the fan sector.
std::vector<Ellipse> class_template(int label) {
    switch (label % 4) {
        case 0:  // one large central chamber
            return {{0.55, 0.50, 0.20, 0.15, 0.0}};
        case 1:  // two chambers side by side
            return {{0.55, 0.38, 0.15, 0.095, -0.12}, {0.55, 0.62, 0.15, 0.095, 0.12}};
        case 2:  // four-chamber layout
            return {{0.44, 0.40, 0.10, 0.080, 0.0},
                    {0.44, 0.60, 0.10, 0.080, 0.0},
                    {0.67, 0.40, 0.11, 0.085, 0.0},
                    {0.67, 0.60, 0.11, 0.085, 0.0}};
        default:  // two stacked chambers
            return {{0.40, 0.50, 0.10, 0.145, 0.0}, {0.66, 0.50, 0.11, 0.145, 0.0}};
    }
}

bool inside_ellipse(const Ellipse& e, double y, double x) {
    const double dy = y - e.cy;
    const double dx = x - e.cx;
    const double c = std::cos(e.tilt), s = std::sin(e.tilt);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return (u * u) / (e.rx * e.rx) + (v * v) / (e.ry * e.ry) <= 1.0;
}

constexpr double kFanApexY = -0.05;
constexpr double kFanApexX = 0.5;
constexpr double kFanRadius = 1.02;
constexpr double kFanHalfAngle = 0.68;  // radians from straight down

bool inside_fan(double y, double x) {
    const double dy = y - kFanApexY;
    const double dx = x - kFanApexX;
    const double r = std::sqrt(dy * dy + dx * dx);
    if (r > kFanRadius || dy <= 0.0) return false;
    return std::abs(std::atan2(dx, dy)) <= kFanHalfAngle;
}

}  // namespace

SynthSample render_sample(const SynthSpec& spec, int index) {
    spec.validate();
    const int n = spec.size;
    SynthSample out;
    out.label = index % spec.classes;
    out.image = Tensor::zeros({1, n, n});
    out.mask = Tensor::zeros({1, n, n});

    Rng rng(substream(spec.seed, "image", static_cast<std::uint64_t>(index)));

    // per-sample jitter keeps templates recognizable but not identical
    auto ellipses = class_template(out.label);
    for (auto& e : ellipses) {
        e.cy += rng.uniform(-0.025, 0.025);
        e.cx += rng.uniform(-0.025, 0.025);
        e.ry *= rng.uniform(0.92, 1.08);
        e.rx *= rng.uniform(0.92, 1.08);
        e.tilt += rng.uniform(-0.06, 0.06);
    }
    std::vector<Ellipse> rims = ellipses;
    for (auto& e : rims) {
        e.ry *= 1.35;
        e.rx *= 1.35;
    }

    float* img = out.image.data();
    float* msk = out.mask.data();
    const double inv = 1.0 / static_cast<double>(n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const double py = (y + 0.5) * inv;
            const double px = (x + 0.5) * inv;
            double v = 0.05;  // background
            if (inside_fan(py, px)) {
                const double dy = py - kFanApexY;
                const double dx = px - kFanApexX;
                const double r = std::sqrt(dy * dy + dx * dx);
                v = 0.40 * (1.0 - 0.25 * r / kFanRadius);
                bool in_rim = false, in_chamber = false;
                for (const auto& e : rims) in_rim = in_rim || inside_ellipse(e, py, px);
                for (const auto& e : ellipses) in_chamber = in_chamber || inside_ellipse(e, py, px);
                if (in_chamber) {
                    v = 0.10;
                } else if (in_rim) {
                    v = 0.72;
                }
                if (in_chamber) msk[y * n + x] = 1.0f;
            }
            img[y * n + x] = static_cast<float>(v);
        }
    }
    if (spec.noise > 0.0f) {
        for (int i = 0; i < n * n; ++i) {
            const double g = rng.normal();
            const double v = img[i] * (1.0 + spec.noise * g);
            img[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

DatasetManifest generate(const SynthSpec& spec, int n, const std::filesystem::path& dir,
                         const std::string& split, const GenerateOptions& opts) {
    spec.validate();
    if (n < 1) throw ConfigError("generate: n must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(dir / "img", ec);
    if (ec) throw DataError("generate: cannot create " + (dir / "img").string() + ": " + ec.message());
    if (opts.with_masks) {
        std::filesystem::create_directories(dir / "mask", ec);
        if (ec) throw DataError("generate: cannot create " + (dir / "mask").string());
    }
    DatasetManifest manifest;
    manifest.split = split;
    manifest.base_dir = dir;
    manifest.entries.reserve(static_cast<std::size_t>(n));
    char name[64];
    for (int i = 0; i < n; ++i) {
        SynthSample sample = render_sample(spec, i);
        std::snprintf(name, sizeof(name), "img/%s_%06d.t32", split.c_str(), i);
        ManifestEntry entry;
        entry.image = name;
        save_t32(dir / entry.image, sample.image);
        if (opts.with_labels) entry.label = sample.label;
        if (opts.with_masks) {
            std::snprintf(name, sizeof(name), "mask/%s_%06d.t32", split.c_str(), i);
            entry.mask = name;
            save_t32(dir / entry.mask, sample.mask);
        }
        manifest.entries.push_back(std::move(entry));
    }
    save_manifest(dir / (split + ".tsv"), manifest);
    return manifest;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError(path.string() + ": cannot open for writing");
    for (const auto& e : manifest.entries) {
        os << e.image << '\t';
        if (e.label >= 0) {
            os << e.label;
        } else {
            os << '-';
        }
        os << '\t' << (e.mask.empty() ? "-" : e.mask) << '\n';
    }
    if (!os) throw DataError(path.string() + ": write failed");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError(path.string() + ": cannot open");
    DatasetManifest manifest;
    manifest.base_dir = path.parent_path();
    manifest.split = path.stem().string();
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": expected 3 tab-separated fields");
        }
        ManifestEntry e;
        e.image = line.substr(0, t1);
        const std::string label = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string mask = line.substr(t2 + 1);
        if (label != "-") {
            try {
                e.label = std::stoi(label);
            } catch (const std::exception&) {
                throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad label '" +
                                 label + "'");
            }
        }
        if (mask != "-") e.mask = mask;
        if (!std::filesystem::exists(manifest.base_dir / e.image)) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing image file " +
                            (manifest.base_dir / e.image).string());
        }
        if (!e.mask.empty() && !std::filesystem::exists(manifest.base_dir / e.mask)) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing mask file " +
                            (manifest.base_dir / e.mask).string());
        }
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

Tensor load_image(const std::filesystem::path& path) { return load_t32(path); }

}  // namespace edmae
