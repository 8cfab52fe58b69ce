#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "edmae/error.hpp"
#include "edmae/metrics.hpp"
#include "edmae/rng.hpp"

using namespace edmae;

namespace {

// independent brute-force recomputation from an explicit KxK confusion matrix
MetricsReport brute_force_classification(const std::vector<int>& pred,
                                         const std::vector<int>& truth, int k) {
    std::vector<long> cm(static_cast<std::size_t>(k) * k, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        cm[static_cast<std::size_t>(truth[i]) * k + pred[i]] += 1;
    }
    MetricsReport rep;
    rep.classes = k;
    long diag = 0;
    for (int i = 0; i < k; ++i) diag += cm[static_cast<std::size_t>(i) * k + i];
    rep.overall_accuracy = static_cast<double>(diag) / static_cast<double>(pred.size());
    for (int c = 0; c < k; ++c) {
        long tp = cm[static_cast<std::size_t>(c) * k + c];
        long fp = 0, fn = 0;
        for (int o = 0; o < k; ++o) {
            if (o == c) continue;
            fp += cm[static_cast<std::size_t>(o) * k + c];
            fn += cm[static_cast<std::size_t>(c) * k + o];
        }
        const long tn = static_cast<long>(pred.size()) - tp - fp - fn;
        ClassScores s;
        s.accuracy = static_cast<double>(tp + tn) / static_cast<double>(pred.size());
        s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
        s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
        s.specificity = fp + tn == 0 ? 0.0 : static_cast<double>(tn) / static_cast<double>(fp + tn);
        s.f1 = 2 * tp + fp + fn == 0 ? 0.0
                                     : 2.0 * static_cast<double>(tp) /
                                           static_cast<double>(2 * tp + fp + fn);
        rep.per_class.push_back(s);
    }
    return rep;
}

std::vector<std::uint8_t> random_mask(Rng& rng, int h, int w, double density) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(h) * w);
    for (auto& v : m) v = rng.uniform() < density;
    return m;
}

}  // namespace

TEST_CASE("classification_metrics: perfect predictions") {
    const std::vector<int> y = {0, 1, 2, 3, 1, 2, 0, 3};
    MetricsReport rep = classification_metrics(y, y, 4);
    CHECK(rep.overall_accuracy == 1.0);
    for (const auto& s : rep.per_class) {
        CHECK(s.f1 == 1.0);
        CHECK(s.recall == 1.0);
        CHECK(s.precision == 1.0);
    }
}

TEST_CASE("classification_metrics: TP=1 FP=1 FN=0 arithmetic") {
    // class 0: predicted for both samples, true once
    const std::vector<int> pred = {0, 0};
    const std::vector<int> truth = {0, 1};
    MetricsReport rep = classification_metrics(pred, truth, 2);
    CHECK(rep.per_class[0].precision == doctest::Approx(0.5));
    CHECK(rep.per_class[0].recall == doctest::Approx(1.0));
    CHECK(rep.per_class[0].f1 == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("classification_metrics: equals brute-force recomputation on 100 random instances") {
    Rng rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 5;
        std::vector<int> pred(200), truth(200);
        for (int i = 0; i < 200; ++i) {
            pred[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(k));
            truth[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(k));
        }
        MetricsReport a = classification_metrics(pred, truth, k);
        MetricsReport b = brute_force_classification(pred, truth, k);
        CHECK(a.overall_accuracy == b.overall_accuracy);
        for (int c = 0; c < k; ++c) {
            CHECK(a.per_class[c].accuracy == b.per_class[c].accuracy);
            CHECK(a.per_class[c].precision == b.per_class[c].precision);
            CHECK(a.per_class[c].recall == b.per_class[c].recall);
            CHECK(a.per_class[c].specificity == b.per_class[c].specificity);
            CHECK(a.per_class[c].f1 == b.per_class[c].f1);
        }
    }
}

TEST_CASE("classification_metrics: macro recall equals OA for balanced diagonal-perfect input") {
    std::vector<int> y;
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < 10; ++i) y.push_back(c);
    }
    MetricsReport rep = classification_metrics(y, y, 4);
    CHECK(rep.macro.recall == rep.overall_accuracy);
}

TEST_CASE("classification_metrics: input validation") {
    CHECK_THROWS_AS(classification_metrics({}, {}, 3), DataError);
    CHECK_THROWS_AS(classification_metrics({0}, {0, 1}, 2), DataError);
    CHECK_THROWS_AS(classification_metrics({5}, {0}, 2), DataError);
}

TEST_CASE("dice: trivial values") {
    std::vector<std::uint8_t> a = {1, 1, 0, 0};
    CHECK(dice(a, a) == 1.0);
    std::vector<std::uint8_t> b = {0, 0, 1, 1};
    CHECK(dice(a, b) == 0.0);
    std::vector<std::uint8_t> empty = {0, 0, 0, 0};
    CHECK(dice(empty, empty) == 1.0);  // empty-vs-empty convention
    CHECK(dice(a, empty) == 0.0);
    CHECK_THROWS_AS(dice(a, {1, 0}), DataError);
}

TEST_CASE("dice: 3x3 block vs one-column shift on an 8x8 grid") {
    std::vector<std::uint8_t> a(64, 0), b(64, 0);
    for (int y = 2; y < 5; ++y) {
        for (int x = 2; x < 5; ++x) {
            a[static_cast<std::size_t>(y) * 8 + x] = 1;
            b[static_cast<std::size_t>(y) * 8 + x + 1] = 1;
        }
    }
    CHECK(dice(a, b) == doctest::Approx(2.0 * 6 / (9 + 9)));
}

TEST_CASE("dice: symmetric and identical to pixelwise F1") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_mask(rng, 8, 8, 0.4);
        auto b = random_mask(rng, 8, 8, 0.4);
        CHECK(dice(a, b) == dice(b, a));
        // pixelwise confusion counts
        long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            tp += a[i] && b[i];
            fn += a[i] && !b[i];
            fp += !a[i] && b[i];
        }
        const double f1 =
            2 * tp + fp + fn == 0 ? 1.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
        CHECK(dice(a, b) == doctest::Approx(f1).epsilon(1e-12));
    }
}

TEST_CASE("hausdorff: trivial values") {
    std::vector<std::uint8_t> a(64, 0);
    a[static_cast<std::size_t>(2) * 8 + 3] = 1;
    CHECK(hausdorff(a, a, 8, 8, 1.0) == 0.0);

    std::vector<std::uint8_t> p(64, 0), q(64, 0);
    p[0] = 1;                                 // (0,0)
    q[static_cast<std::size_t>(3) * 8 + 4] = 1;  // (3,4)
    CHECK(hausdorff(p, q, 8, 8, 1.0) == 5.0);
    CHECK(hausdorff(p, q, 8, 8, 0.5) == 2.5);  // spacing scale

    std::vector<std::uint8_t> empty(64, 0);
    CHECK_THROWS_AS(hausdorff(p, empty, 8, 8, 1.0), MetricError);
}

TEST_CASE("hausdorff: symmetric and equal to an all-pairs brute force") {
    Rng rng(43);
    for (int trial = 0; trial < 100; ++trial) {
        auto a = random_mask(rng, 16, 16, 0.3);
        auto b = random_mask(rng, 16, 16, 0.3);
        // guarantee nonempty
        a[0] = 1;
        b[255] = 1;
        CHECK(hausdorff(a, b, 16, 16, 1.0) == hausdorff(b, a, 16, 16, 1.0));

        // brute force: boundary = foreground with a 4-neighbor background
        auto boundary = [&](const std::vector<std::uint8_t>& m) {
            std::vector<std::pair<int, int>> out;
            auto fg = [&](int y, int x) {
                return y >= 0 && y < 16 && x >= 0 && x < 16 &&
                       m[static_cast<std::size_t>(y) * 16 + x] != 0;
            };
            for (int y = 0; y < 16; ++y) {
                for (int x = 0; x < 16; ++x) {
                    if (fg(y, x) &&
                        (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))) {
                        out.emplace_back(y, x);
                    }
                }
            }
            return out;
        };
        const auto ba = boundary(a);
        const auto bb = boundary(b);
        auto directed = [](const std::vector<std::pair<int, int>>& from,
                           const std::vector<std::pair<int, int>>& to) {
            double worst = 0.0;
            for (const auto& [ay, ax] : from) {
                double best = 1e18;
                for (const auto& [by, bx] : to) {
                    const double d = std::sqrt(static_cast<double>((ay - by) * (ay - by) +
                                                                   (ax - bx) * (ax - bx)));
                    best = std::min(best, d);
                }
                worst = std::max(worst, best);
            }
            return worst;
        };
        const double expect = std::max(directed(ba, bb), directed(bb, ba));
        CHECK(hausdorff(a, b, 16, 16, 1.0) == expect);
    }
}

TEST_CASE("auc: trivial values and errors") {
    CHECK(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    CHECK(auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
    CHECK(auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
    CHECK_THROWS_AS(auc({0.5, 0.6}, {1, 1}), MetricError);
    CHECK_THROWS_AS(auc({}, {}), DataError);
}

TEST_CASE("auc: matches trapezoidal ROC integration within 1e-9") {
    Rng rng(44);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> scores(50);
        std::vector<int> truth(50);
        for (int i = 0; i < 50; ++i) {
            // quantized scores force ties
            scores[static_cast<std::size_t>(i)] = std::floor(rng.uniform() * 10.0) / 10.0;
            truth[static_cast<std::size_t>(i)] = rng.uniform() < 0.4;
        }
        truth[0] = 1;
        truth[1] = 0;

        // ROC curve oracle: sweep unique thresholds high to low, trapezoid area
        std::vector<double> uniq = scores;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        long npos = 0, nneg = 0;
        for (int t : truth) {
            if (t) {
                ++npos;
            } else {
                ++nneg;
            }
        }
        double area = 0.0, prev_fpr = 0.0, prev_tpr = 0.0;
        for (auto it = uniq.rbegin(); it != uniq.rend(); ++it) {
            long tp = 0, fp = 0;
            for (int i = 0; i < 50; ++i) {
                if (scores[static_cast<std::size_t>(i)] >= *it) {
                    if (truth[static_cast<std::size_t>(i)]) {
                        ++tp;
                    } else {
                        ++fp;
                    }
                }
            }
            const double tpr = static_cast<double>(tp) / static_cast<double>(npos);
            const double fpr = static_cast<double>(fp) / static_cast<double>(nneg);
            area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
            prev_fpr = fpr;
            prev_tpr = tpr;
        }
        area += (1.0 - prev_fpr) * (1.0 + prev_tpr) / 2.0;
        CHECK(auc(scores, truth) == doctest::Approx(area).epsilon(1e-9));
    }
}

TEST_CASE("auc: invariant under strictly monotone transforms") {
    Rng rng(45);
    std::vector<double> scores(64);
    std::vector<int> truth(64);
    for (int i = 0; i < 64; ++i) {
        scores[static_cast<std::size_t>(i)] = rng.uniform(-2.0, 2.0);
        truth[static_cast<std::size_t>(i)] = rng.uniform() < 0.5;
    }
    truth[0] = 1;
    truth[1] = 0;
    const double base = auc(scores, truth);
    std::vector<double> transformed = scores;
    for (auto& v : transformed) v = std::exp(3.0 * v) + 7.0;
    CHECK(auc(transformed, truth) == base);
}

TEST_CASE("metrics report: CSV has one row per class plus a mean row") {
    const std::vector<int> y = {0, 1, 0, 1};
    MetricsReport rep = classification_metrics(y, y, 2);
    const std::string csv = rep.to_csv();
    CHECK(csv.find("class,accuracy,precision,recall,specificity,f1") == 0);
    CHECK(csv.find("\nmean,") != std::string::npos);
    CHECK(csv.find("overall_accuracy,") != std::string::npos);
}
