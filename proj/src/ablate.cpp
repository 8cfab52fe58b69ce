#include "edmae/ablate.hpp"

#include <cstdio>
#include <fstream>

#include "edmae/error.hpp"

namespace edmae {

namespace {

void check_datasets(const AblationDatasets& data) {
    if (!data.pretrain || !data.cls_train || !data.cls_val || !data.cls_test) {
        throw UsageError("ablation: all four datasets must be provided");
    }
}

// one (pretrain -> fine-tune) pipeline; returns the test report
MetricsReport run_arm(const TrainConfig& cfg, const AblationDatasets& data, std::ostream* log) {
    PretrainResult pre = pretrain(cfg, *data.pretrain, {}, log);
    Checkpoint ckpt = pre.model.to_checkpoint();
    ClassifyResult fine =
        finetune_classify(ckpt, *data.cls_train, *data.cls_val, *data.cls_test, cfg, {}, log);
    return fine.test_report;
}

AblationArm mean_arm(const std::string& name, double value,
                     const std::vector<MetricsReport>& reports) {
    AblationArm arm;
    arm.name = name;
    arm.value = value;
    for (const MetricsReport& r : reports) {
        arm.mean_oa += r.overall_accuracy;
        arm.mean_precision += r.macro.precision;
        arm.mean_recall += r.macro.recall;
        arm.mean_specificity += r.macro.specificity;
        arm.mean_f1 += r.macro.f1;
    }
    const double n = static_cast<double>(reports.size());
    arm.mean_oa /= n;
    arm.mean_precision /= n;
    arm.mean_recall /= n;
    arm.mean_specificity /= n;
    arm.mean_f1 /= n;
    return arm;
}

AblationResult tabulate(const std::string& value_header, const std::vector<AblationArm>& arms) {
    AblationResult result;
    result.arms = arms;
    std::string csv = value_header + ",overall_accuracy,precision,recall,specificity,f1\n";
    std::string table;
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%-14s %9s %9s %9s %11s %9s\n", value_header.c_str(), "oa", "prec",
                  "recall", "specificity", "f1");
    table += buf;
    for (const auto& a : arms) {
        std::snprintf(buf, sizeof(buf), "%g,%.6f,%.6f,%.6f,%.6f,%.6f\n", a.value, a.mean_oa,
                      a.mean_precision, a.mean_recall, a.mean_specificity, a.mean_f1);
        csv += buf;
        std::snprintf(buf, sizeof(buf), "%-14g %9.4f %9.4f %9.4f %11.4f %9.4f\n", a.value, a.mean_oa,
                      a.mean_precision, a.mean_recall, a.mean_specificity, a.mean_f1);
        table += buf;
    }
    result.csv = std::move(csv);
    result.table = std::move(table);
    return result;
}

void write_csv(const std::filesystem::path& out_dir, const std::string& name,
               const std::string& csv) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    std::ofstream os(out_dir / name, std::ios::trunc);
    if (!os) throw DataError((out_dir / name).string() + ": cannot open for writing");
    os << csv;
}

}  // namespace

AblationResult run_mask_sweep(const TrainConfig& base, const AblationDatasets& data,
                              const std::vector<std::uint64_t>& seeds,
                              const std::filesystem::path& out_dir, std::ostream* log) {
    check_datasets(data);
    if (seeds.empty()) throw UsageError("ablation: need at least one seed");
    const double ratios[] = {0.25, 0.50, 0.60, 0.75, 0.90};
    std::vector<AblationArm> arms;
    for (double ratio : ratios) {
        std::vector<MetricsReport> reports;
        for (std::uint64_t seed : seeds) {
            TrainConfig cfg = base;
            cfg.mask_ratio = ratio;
            cfg.seed = seed;
            if (log) *log << "mask sweep: ratio " << ratio << " seed " << seed << "\n";
            reports.push_back(run_arm(cfg, data, nullptr));
        }
        arms.push_back(mean_arm("ratio", ratio, reports));
    }
    AblationResult result = tabulate("mask_ratio", arms);
    write_csv(out_dir, "mask_sweep.csv", result.csv);
    return result;
}

AblationResult run_alignment_ablation(const TrainConfig& base, const AblationDatasets& data,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::filesystem::path& out_dir, std::ostream* log) {
    check_datasets(data);
    if (seeds.empty()) throw UsageError("ablation: need at least one seed");
    const float weights[] = {0.0f, base.align_weight > 0.0f ? base.align_weight : 1.0f};
    std::vector<AblationArm> arms;
    for (float w : weights) {
        std::vector<MetricsReport> reports;
        for (std::uint64_t seed : seeds) {
            TrainConfig cfg = base;
            cfg.align_weight = w;
            cfg.seed = seed;
            if (log) *log << "alignment ablation: lambda " << w << " seed " << seed << "\n";
            reports.push_back(run_arm(cfg, data, nullptr));
        }
        arms.push_back(mean_arm("align_weight", static_cast<double>(w), reports));
    }
    AblationResult result = tabulate("align_weight", arms);
    write_csv(out_dir, "alignment_ablation.csv", result.csv);
    return result;
}

}  // namespace edmae
