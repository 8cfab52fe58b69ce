#include "edmae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "edmae/error.hpp"

namespace edmae {

namespace {

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

ClassScores scores_from_counts(const ConfusionCounts& c) {
    ClassScores s;
    s.accuracy = safe_div(static_cast<double>(c.tp + c.tn), static_cast<double>(c.total()));
    s.precision = safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    s.recall = safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
    s.specificity = safe_div(static_cast<double>(c.tn), static_cast<double>(c.fp + c.tn));
    s.f1 = safe_div(2.0 * c.tp, static_cast<double>(2 * c.tp + c.fp + c.fn));
    return s;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

MetricsReport classification_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                                     int classes) {
    if (pred.empty() || truth.empty()) throw DataError("classification_metrics: empty input");
    if (pred.size() != truth.size()) {
        throw DataError("classification_metrics: pred/truth length mismatch");
    }
    if (classes < 2) throw DataError("classification_metrics: need at least 2 classes");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || pred[i] >= classes || truth[i] < 0 || truth[i] >= classes) {
            throw DataError("classification_metrics: class id out of range at sample " +
                            std::to_string(i));
        }
    }
    MetricsReport rep;
    rep.classes = classes;
    rep.counts.assign(static_cast<std::size_t>(classes), ConfusionCounts{});
    long correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == truth[i]) ++correct;
        for (int k = 0; k < classes; ++k) {
            auto& c = rep.counts[static_cast<std::size_t>(k)];
            const bool is_pred = pred[i] == k;
            const bool is_true = truth[i] == k;
            if (is_pred && is_true) {
                ++c.tp;
            } else if (is_pred && !is_true) {
                ++c.fp;
            } else if (!is_pred && is_true) {
                ++c.fn;
            } else {
                ++c.tn;
            }
        }
    }
    rep.overall_accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
    rep.per_class.reserve(static_cast<std::size_t>(classes));
    for (const auto& c : rep.counts) rep.per_class.push_back(scores_from_counts(c));
    for (const auto& s : rep.per_class) {
        rep.macro.accuracy += s.accuracy;
        rep.macro.precision += s.precision;
        rep.macro.recall += s.recall;
        rep.macro.specificity += s.specificity;
        rep.macro.f1 += s.f1;
    }
    const double k = static_cast<double>(classes);
    rep.macro.accuracy /= k;
    rep.macro.precision /= k;
    rep.macro.recall /= k;
    rep.macro.specificity /= k;
    rep.macro.f1 /= k;
    return rep;
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os << "class,accuracy,precision,recall,specificity,f1\n";
    for (int k = 0; k < classes; ++k) {
        const auto& s = per_class[static_cast<std::size_t>(k)];
        os << k << "," << fmt(s.accuracy) << "," << fmt(s.precision) << "," << fmt(s.recall) << ","
           << fmt(s.specificity) << "," << fmt(s.f1) << "\n";
    }
    os << "mean," << fmt(macro.accuracy) << "," << fmt(macro.precision) << "," << fmt(macro.recall)
       << "," << fmt(macro.specificity) << "," << fmt(macro.f1) << "\n";
    os << "overall_accuracy," << fmt(overall_accuracy) << ",,,,\n";
    if (dice) os << "dice," << fmt(*dice) << ",,,,\n";
    if (hausdorff) os << "hausdorff," << fmt(*hausdorff) << ",,,,\n";
    if (auc) os << "auc," << fmt(*auc) << ",,,,\n";
    return os.str();
}

std::string MetricsReport::to_table() const {
    std::ostringstream os;
    char buf[160];
    if (classes > 0) {
        std::snprintf(buf, sizeof(buf), "%-8s %9s %9s %9s %11s %9s\n", "class", "acc", "prec", "recall",
                      "specificity", "f1");
        os << buf;
        for (int k = 0; k < classes; ++k) {
            const auto& s = per_class[static_cast<std::size_t>(k)];
            std::snprintf(buf, sizeof(buf), "%-8d %9.4f %9.4f %9.4f %11.4f %9.4f\n", k, s.accuracy,
                          s.precision, s.recall, s.specificity, s.f1);
            os << buf;
        }
        std::snprintf(buf, sizeof(buf), "%-8s %9.4f %9.4f %9.4f %11.4f %9.4f\n", "mean", macro.accuracy,
                      macro.precision, macro.recall, macro.specificity, macro.f1);
        os << buf;
        std::snprintf(buf, sizeof(buf), "overall accuracy: %.4f\n", overall_accuracy);
        os << buf;
    }
    if (dice) {
        std::snprintf(buf, sizeof(buf), "dice: %.4f\n", *dice);
        os << buf;
    }
    if (hausdorff) {
        std::snprintf(buf, sizeof(buf), "hausdorff: %.4f\n", *hausdorff);
        os << buf;
    }
    if (auc) {
        std::snprintf(buf, sizeof(buf), "auc: %.4f\n", *auc);
        os << buf;
    }
    return os.str();
}

double dice(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size()) throw DataError("dice: mask size mismatch");
    long na = 0, nb = 0, inter = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool fa = a[i] != 0;
        const bool fb = b[i] != 0;
        na += fa;
        nb += fb;
        inter += fa && fb;
    }
    if (na + nb == 0) return 1.0;  // both empty: perfect agreement
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

namespace {

std::vector<std::pair<int, int>> boundary_pixels(const std::vector<std::uint8_t>& mask, int h, int w) {
    std::vector<std::pair<int, int>> out;
    auto fg = [&](int y, int x) {
        if (y < 0 || y >= h || x < 0 || x >= w) return false;  // outside counts as background
        return mask[static_cast<std::size_t>(y) * w + x] != 0;
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!fg(y, x)) continue;
            if (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)) {
                out.emplace_back(y, x);
            }
        }
    }
    return out;
}

// max over points in `from` of the min squared distance to `to`
long directed_max_min_sq(const std::vector<std::pair<int, int>>& from,
                         const std::vector<std::pair<int, int>>& to) {
    long worst = 0;
    for (const auto& [ay, ax] : from) {
        long best = std::numeric_limits<long>::max();
        for (const auto& [by, bx] : to) {
            const long dy = ay - by;
            const long dx = ax - bx;
            const long d = dy * dy + dx * dx;
            if (d < best) {
                best = d;
                if (best == 0) break;
            }
        }
        if (best > worst) worst = best;
    }
    return worst;
}

}  // namespace

double hausdorff(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, int h,
                 int w, double spacing) {
    if (a.size() != b.size() || static_cast<std::size_t>(h) * w != a.size()) {
        throw DataError("hausdorff: mask size mismatch");
    }
    const auto ba = boundary_pixels(a, h, w);
    const auto bb = boundary_pixels(b, h, w);
    if (ba.empty() || bb.empty()) {
        throw MetricError("hausdorff: undefined for an empty mask");
    }
    const long d2 = std::max(directed_max_min_sq(ba, bb), directed_max_min_sq(bb, ba));
    return std::sqrt(static_cast<double>(d2)) * spacing;
}

double auc(const std::vector<double>& scores, const std::vector<int>& truth) {
    if (scores.size() != truth.size() || scores.empty()) {
        throw DataError("auc: scores/truth length mismatch or empty");
    }
    long npos = 0, nneg = 0;
    for (int t : truth) {
        if (t != 0) {
            ++npos;
        } else {
            ++nneg;
        }
    }
    if (npos == 0 || nneg == 0) throw MetricError("auc: both classes must be present");

    // average ranks with ties shared, then the Mann-Whitney statistic
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) {
            if (truth[order[k]] != 0) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(npos) * (static_cast<double>(npos) + 1.0);
    return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

}  // namespace edmae
