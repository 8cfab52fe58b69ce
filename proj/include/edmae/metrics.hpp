#pragma once

#include <optional>
#include <string>
#include <vector>

namespace edmae {

struct ConfusionCounts {
    long tp = 0;
    long tn = 0;
    long fp = 0;
    long fn = 0;
    long total() const { return tp + tn + fp + fn; }
};

struct ClassScores {
    double accuracy = 0.0;  // one-vs-rest (TP+TN)/total
    double precision = 0.0;
    double recall = 0.0;
    double specificity = 0.0;
    double f1 = 0.0;
};

struct MetricsReport {
    int classes = 0;
    double overall_accuracy = 0.0;
    std::vector<ConfusionCounts> counts;    // per class, one-vs-rest
    std::vector<ClassScores> per_class;
    ClassScores macro;  // unweighted mean over classes

    // segmentation aggregates, when applicable
    std::optional<double> dice;
    std::optional<double> hausdorff;
    std::optional<double> auc;

    std::string to_csv() const;    // one row per class plus a "mean" row
    std::string to_table() const;  // human-readable
};

// Per-class one-vs-rest scores from predicted/true class ids. Zero-division
// convention: 0/0 rates are reported as 0.
MetricsReport classification_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                                     int classes);

// 2|A..B| / (|A|+|B|); empty-vs-empty is 1, empty-vs-nonempty is 0.
double dice(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

// Symmetric Hausdorff distance over boundary pixels (foreground pixels with a
// 4-neighbor background, image border counting as background), scaled by
// `spacing` units per pixel. Both masks must be nonempty.
double hausdorff(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, int h,
                 int w, double spacing);

// Rank-based (Mann-Whitney) AUC with ties counted 0.5. Requires both classes.
double auc(const std::vector<double>& scores, const std::vector<int>& truth);

}  // namespace edmae
