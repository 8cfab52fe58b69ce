// Command-line entry point: data generation, pretraining, fine-tuning,
// evaluation, gradient checking, and the two ablation harnesses.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "edmae/ablate.hpp"
#include "edmae/config.hpp"
#include "edmae/error.hpp"
#include "edmae/gradcheck.hpp"
#include "edmae/model.hpp"
#include "edmae/synth.hpp"
#include "edmae/train.hpp"

namespace fs = std::filesystem;
using namespace edmae;

namespace {

void handle_sigint(int) { train_interrupt_flag().store(true); }

// config file first, then explicit flags on top (flags win)
struct ConfigCli {
    std::string config_path;
    KeyValues flag_overrides;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        auto track = [this, cmd](const std::string& flag, const std::string& key) {
            cmd->add_option_function<std::string>(
                flag, [this, key](const std::string& v) { flag_overrides.emplace_back(key, v); });
        };
        track("--seed", "seed");
        track("--epochs", "epochs");
        track("--batch", "batch");
        track("--lr", "lr");
        track("--weight-decay", "weight_decay");
        track("--mask-ratio", "mask_ratio");
        track("--momentum", "momentum");
        track("--align-weight", "align_weight");
        track("--recon-scope", "recon_scope");
        track("--loss", "loss");
        track("--patch", "patch");
        track("--classes", "classes");
        track("--checkpoint-every", "checkpoint_every");
        cmd->add_flag_function("--freeze-encoder", [this](std::int64_t) {
            flag_overrides.emplace_back("freeze_encoder", "true");
        });
    }

    TrainConfig resolve() const {
        TrainConfig cfg;
        KeyValues kv;
        if (!config_path.empty()) kv = parse_config_file(config_path);
        for (const auto& p : flag_overrides) kv.push_back(p);
        apply_config(cfg, kv);
        return cfg;
    }
};

ImageDataset load_split(const fs::path& dir, const std::string& split) {
    return ImageDataset::load(load_manifest(dir / (split + ".tsv")));
}

std::optional<Checkpoint> resolve_init(const std::string& checkpoint, bool random_init) {
    if (!checkpoint.empty() && random_init) {
        throw UsageError("pass either --checkpoint or --random-init, not both");
    }
    if (checkpoint.empty()) {
        if (!random_init) {
            throw UsageError(
                "no pretrained checkpoint given: pretrain first or pass --random-init");
        }
        return std::nullopt;
    }
    return load_checkpoint(checkpoint);
}

int cmd_gen_data(const std::string& out, std::uint64_t seed, int n_pretrain, int n_cls, int n_seg,
                 int classes, int size, int patch, float noise) {
    SynthSpec spec;
    spec.size = size;
    spec.classes = classes;
    spec.patch = patch;
    spec.noise = noise;
    spec.validate();
    const fs::path root(out);

    auto gen_split = [&](const fs::path& dir, const std::string& split, const char* stream, int n,
                         GenerateOptions opts) {
        SynthSpec s = spec;
        s.seed = substream(seed, stream);
        generate(s, n, dir, split, opts);
        std::printf("wrote %s (%d images)\n", (dir / (split + ".tsv")).string().c_str(), n);
    };

    GenerateOptions unlabeled;
    gen_split(root / "pretrain", "train", "data-pretrain", n_pretrain, unlabeled);

    GenerateOptions labeled;
    labeled.with_labels = true;
    gen_split(root / "cls", "train", "data-cls-train", n_cls * 3 / 5, labeled);
    gen_split(root / "cls", "val", "data-cls-val", n_cls / 5, labeled);
    gen_split(root / "cls", "test", "data-cls-test", n_cls - n_cls * 3 / 5 - n_cls / 5, labeled);

    GenerateOptions masked;
    masked.with_labels = true;
    masked.with_masks = true;
    gen_split(root / "seg", "train", "data-seg-train", n_seg * 3 / 5, masked);
    gen_split(root / "seg", "val", "data-seg-val", n_seg / 5, masked);
    gen_split(root / "seg", "test", "data-seg-test", n_seg - n_seg * 3 / 5 - n_seg / 5, masked);
    return 0;
}

int cmd_pretrain(const ConfigCli& cli, const std::string& data, const std::string& out) {
    const TrainConfig cfg = cli.resolve();
    ImageDataset ds = ImageDataset::load(load_manifest(data));
    std::printf("pretraining on %zu images (seed %llu, ratio %.2f, lambda %.2f, m %.3f)\n",
                ds.size(), static_cast<unsigned long long>(cfg.seed), cfg.mask_ratio,
                static_cast<double>(cfg.align_weight), static_cast<double>(cfg.momentum));
    PretrainResult result = pretrain(cfg, ds, out, &std::cout);
    std::printf("checkpoint: %s\n", result.checkpoint_path.string().c_str());
    return 0;
}

int cmd_finetune_cls(const ConfigCli& cli, const std::string& data, const std::string& out,
                     const std::string& checkpoint, bool random_init) {
    const TrainConfig cfg = cli.resolve();
    const std::optional<Checkpoint> init = resolve_init(checkpoint, random_init);
    const fs::path dir(data);
    ImageDataset train = load_split(dir, "train");
    ImageDataset val = load_split(dir, "val");
    ImageDataset test = load_split(dir, "test");
    ClassifyResult result = finetune_classify(init, train, val, test, cfg, out, &std::cout);
    std::printf("test metrics:\n%s", result.test_report.to_table().c_str());
    std::printf("model: %s\n", result.model_path.string().c_str());
    return 0;
}

int cmd_finetune_seg(const ConfigCli& cli, const std::string& data, const std::string& out,
                     const std::string& checkpoint, bool random_init) {
    const TrainConfig cfg = cli.resolve();
    const std::optional<Checkpoint> init = resolve_init(checkpoint, random_init);
    const fs::path dir(data);
    ImageDataset train = load_split(dir, "train");
    ImageDataset val = load_split(dir, "val");
    ImageDataset test = load_split(dir, "test");
    SegmentResult result = finetune_segment(init, train, val, test, cfg, out, &std::cout);
    std::printf("test metrics:\n%s", result.test_report.to_table().c_str());
    std::printf("model: %s\n", result.model_path.string().c_str());
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& manifest, const std::string& out) {
    Checkpoint ckpt = load_checkpoint(model_path);
    ImageDataset data = ImageDataset::load(load_manifest(manifest));
    const std::string task = ckpt.meta_or("task", "");
    MetricsReport report;
    if (task == "cls") {
        report = evaluate_classifier(ClassifierModel::from_checkpoint(ckpt), data);
    } else if (task == "seg") {
        report = evaluate_segmenter(SegmenterModel::from_checkpoint(ckpt), data, 16, &std::cout);
    } else {
        throw ParseError(model_path + ": not a fine-tuned model checkpoint (task=" + task + ")");
    }
    std::printf("%s", report.to_table().c_str());
    if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream os(fs::path(out) / "metrics_eval.csv", std::ios::trunc);
        os << report.to_csv();
        std::printf("wrote %s\n", (fs::path(out) / "metrics_eval.csv").string().c_str());
    }
    return 0;
}

int cmd_gradcheck(int seeds, double tol) {
    const auto reports = run_gradcheck(standard_gradcheck_suite(), seeds, tol);
    bool all_pass = true;
    std::printf("%-32s %14s %14s  %s\n", "operator", "grad rel err", "fwd rel err", "status");
    for (const auto& r : reports) {
        std::printf("%-32s %14.3e %14.3e  %s\n", r.name.c_str(), r.worst_rel_err,
                    r.worst_forward_err, r.pass ? "ok" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    std::printf("%zu operators, %d seeds each, tolerance %.1e: %s\n", reports.size(), seeds, tol,
                all_pass ? "all passed" : "FAILURES");
    return all_pass ? 0 : 1;
}

int cmd_ablate(const ConfigCli& cli, const std::string& mode, const std::string& data,
               const std::string& out, int seed_count) {
    const TrainConfig base = cli.resolve();
    const fs::path root(data);
    ImageDataset pre = ImageDataset::load(load_manifest(root / "pretrain" / "train.tsv"));
    ImageDataset train = load_split(root / "cls", "train");
    ImageDataset val = load_split(root / "cls", "val");
    ImageDataset test = load_split(root / "cls", "test");
    AblationDatasets ds;
    ds.pretrain = &pre;
    ds.cls_train = &train;
    ds.cls_val = &val;
    ds.cls_test = &test;
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < seed_count; ++i) seeds.push_back(substream(base.seed, "ablate", i));

    AblationResult result;
    if (mode == "mask-sweep") {
        result = run_mask_sweep(base, ds, seeds, out, &std::cout);
    } else if (mode == "alignment") {
        result = run_alignment_ablation(base, ds, seeds, out, &std::cout);
    } else {
        throw ConfigError("ablate: mode must be 'mask-sweep' or 'alignment', got '" + mode + "'");
    }
    std::printf("%s", result.table.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    std::signal(SIGINT, handle_sigint);

    CLI::App app{"dual-encoder masked autoencoder: pretraining, fine-tuning, evaluation"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic ultrasound-like datasets");
    std::string gen_out;
    std::uint64_t gen_seed = 42;
    int n_pretrain = 2000, n_cls = 400, n_seg = 300, gen_classes = 4, gen_size = 64, gen_patch = 8;
    float gen_noise = 0.15f;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "root seed");
    gen->add_option("--n-pretrain", n_pretrain, "unlabeled pretraining images");
    gen->add_option("--n-cls", n_cls, "labeled classification images");
    gen->add_option("--n-seg", n_seg, "image/mask pairs");
    gen->add_option("--classes", gen_classes, "class count");
    gen->add_option("--size", gen_size, "image side length");
    gen->add_option("--patch", gen_patch, "patch side length");
    gen->add_option("--noise", gen_noise, "speckle strength");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
    ConfigCli pre_cfg;
    std::string pre_data, pre_out;
    pre->add_option("--data", pre_data, "manifest of unlabeled images")->required();
    pre->add_option("--out", pre_out, "output directory")->required();
    pre_cfg.add_to(pre);

    // finetune-cls
    auto* fcls = app.add_subcommand("finetune-cls", "fine-tune for view classification");
    ConfigCli fcls_cfg;
    std::string fcls_data, fcls_out, fcls_ckpt;
    bool fcls_random = false;
    fcls->add_option("--data", fcls_data, "dataset dir with train/val/test.tsv")->required();
    fcls->add_option("--out", fcls_out, "output directory")->required();
    fcls->add_option("--checkpoint", fcls_ckpt, "pretraining checkpoint (.edmk)");
    fcls->add_flag("--random-init", fcls_random, "train from random weights");
    fcls_cfg.add_to(fcls);

    // finetune-seg
    auto* fseg = app.add_subcommand("finetune-seg", "fine-tune for chamber segmentation");
    ConfigCli fseg_cfg;
    std::string fseg_data, fseg_out, fseg_ckpt;
    bool fseg_random = false;
    fseg->add_option("--data", fseg_data, "dataset dir with train/val/test.tsv")->required();
    fseg->add_option("--out", fseg_out, "output directory")->required();
    fseg->add_option("--checkpoint", fseg_ckpt, "pretraining checkpoint (.edmk)");
    fseg->add_flag("--random-init", fseg_random, "train from random weights");
    fseg_cfg.add_to(fseg);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned model on a manifest");
    std::string ev_model, ev_manifest, ev_out;
    ev->add_option("--model", ev_model, "fine-tuned checkpoint (.edmk)")->required();
    ev->add_option("--manifest", ev_manifest, "dataset manifest (.tsv)")->required();
    ev->add_option("--out", ev_out, "optional output directory for CSV");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every operator");
    int gc_seeds = 20;
    double gc_tol = 1e-4;
    gc->add_option("--seeds", gc_seeds, "seeds per operator");
    gc->add_option("--tol", gc_tol, "relative error tolerance");

    // ablate
    auto* ab = app.add_subcommand("ablate", "mask-ratio sweep or feature-alignment ablation");
    ConfigCli ab_cfg;
    std::string ab_mode, ab_data, ab_out;
    int ab_seeds = 1;
    ab->add_option("--mode", ab_mode, "mask-sweep | alignment")->required();
    ab->add_option("--data", ab_data, "dataset root from gen-data")->required();
    ab->add_option("--out", ab_out, "output directory")->required();
    ab->add_option("--seeds", ab_seeds, "paired seeds per arm");
    ab_cfg.add_to(ab);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            return cmd_gen_data(gen_out, gen_seed, n_pretrain, n_cls, n_seg, gen_classes, gen_size,
                                gen_patch, gen_noise);
        }
        if (pre->parsed()) return cmd_pretrain(pre_cfg, pre_data, pre_out);
        if (fcls->parsed()) return cmd_finetune_cls(fcls_cfg, fcls_data, fcls_out, fcls_ckpt, fcls_random);
        if (fseg->parsed()) return cmd_finetune_seg(fseg_cfg, fseg_data, fseg_out, fseg_ckpt, fseg_random);
        if (ev->parsed()) return cmd_eval(ev_model, ev_manifest, ev_out);
        if (gc->parsed()) return cmd_gradcheck(gc_seeds, gc_tol);
        if (ab->parsed()) return cmd_ablate(ab_cfg, ab_mode, ab_data, ab_out, ab_seeds);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
