#include "edmae/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "edmae/error.hpp"
#include "edmae/optim.hpp"

namespace edmae {

std::atomic<bool>& train_interrupt_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

DenseEncoderConfig default_encoder_config() { return DenseEncoderConfig{}; }

ImageDataset ImageDataset::load(const DatasetManifest& manifest) {
    ImageDataset ds;
    ds.images.reserve(manifest.entries.size());
    ds.labels.reserve(manifest.entries.size());
    ds.masks.reserve(manifest.entries.size());
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        Tensor img = load_t32(manifest.image_path(i));
        if (img.rank() != 3 || img.dim(0) != 1) {
            throw DataError(manifest.image_path(i).string() + ": expected [1,H,W] image, got " +
                            shape_str(img.shape()));
        }
        if (ds.height == 0) {
            ds.height = img.dim(1);
            ds.width = img.dim(2);
        } else if (img.dim(1) != ds.height || img.dim(2) != ds.width) {
            throw DataError(manifest.image_path(i).string() + ": inconsistent image size");
        }
        ds.images.push_back(std::move(img));
        ds.labels.push_back(manifest.entries[i].label);
        if (!manifest.entries[i].mask.empty()) {
            Tensor m = load_t32(manifest.mask_path(i));
            if (m.shape() != ds.images.back().shape()) {
                throw DataError(manifest.mask_path(i).string() + ": mask shape " +
                                shape_str(m.shape()) + " does not match image");
            }
            ds.masks.push_back(std::move(m));
        } else {
            ds.masks.emplace_back();
        }
    }
    return ds;
}

Tensor ImageDataset::batch_images(const std::vector<int>& order, std::size_t first,
                                  std::size_t count) const {
    Tensor out = Tensor::zeros({static_cast<int>(count), 1, height, width});
    const std::int64_t plane = static_cast<std::int64_t>(height) * width;
    for (std::size_t i = 0; i < count; ++i) {
        const Tensor& src = images[static_cast<std::size_t>(order[first + i])];
        std::memcpy(out.data() + static_cast<std::int64_t>(i) * plane, src.data(),
                    static_cast<std::size_t>(plane) * sizeof(float));
    }
    return out;
}

std::vector<int> ImageDataset::batch_labels(const std::vector<int>& order, std::size_t first,
                                            std::size_t count) const {
    std::vector<int> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = labels[static_cast<std::size_t>(order[first + i])];
        if (out[i] < 0) throw DataError("batch_labels: unlabeled sample in labeled batch");
    }
    return out;
}

std::vector<int> ImageDataset::batch_mask_labels(const std::vector<int>& order, std::size_t first,
                                                 std::size_t count) const {
    const std::int64_t plane = static_cast<std::int64_t>(height) * width;
    std::vector<int> out(count * static_cast<std::size_t>(plane));
    for (std::size_t i = 0; i < count; ++i) {
        const Tensor& m = masks[static_cast<std::size_t>(order[first + i])];
        if (!m.defined()) throw DataError("batch_mask_labels: sample without mask");
        if (m.numel() != plane) {
            throw DataError("batch_mask_labels: mask shape " + shape_str(m.shape()) +
                            " does not match image " + std::to_string(height) + "x" +
                            std::to_string(width));
        }
        const float* p = m.data();
        for (std::int64_t q = 0; q < plane; ++q) {
            out[i * static_cast<std::size_t>(plane) + static_cast<std::size_t>(q)] = p[q] != 0.0f;
        }
    }
    return out;
}

namespace {

void fisher_yates(std::vector<int>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

std::vector<int> identity_order(std::size_t n) {
    std::vector<int> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i);
    return v;
}

AdamWConfig adamw_from(const TrainConfig& cfg) {
    AdamWConfig a;
    a.lr = cfg.lr;
    a.beta1 = cfg.beta1;
    a.beta2 = cfg.beta2;
    a.eps = cfg.eps;
    a.weight_decay = cfg.weight_decay;
    return a;
}

PlateauConfig plateau_from(const TrainConfig& cfg) {
    PlateauConfig p;
    p.factor = cfg.sched_factor;
    p.patience = cfg.sched_patience;
    p.threshold = cfg.sched_threshold;
    p.min_lr = cfg.sched_min_lr;
    return p;
}

void logln(std::ostream* log, const std::string& line) {
    if (log) *log << line << "\n";
}

Checkpoint finalize_meta(Checkpoint ckpt, const TrainConfig& cfg, long step) {
    ckpt.meta["step"] = std::to_string(step);
    ckpt.meta["mask_ratio"] = std::to_string(cfg.mask_ratio);
    ckpt.meta["seed"] = std::to_string(cfg.seed);
    return ckpt;
}

std::string fmt_epoch(int epoch, int total, double loss, float lr) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "epoch %3d/%d  loss %.6f  lr %.2e", epoch, total, loss, lr);
    return buf;
}

}  // namespace

void write_pretrain_curve_csv(const std::filesystem::path& path, const std::vector<EpochRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError(path.string() + ": cannot open for writing");
    os << "epoch,step,align_loss,recon_loss,total_loss,lr\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%ld,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.step, r.align_loss,
                      r.recon_loss, r.total_loss, static_cast<double>(r.lr));
        os << buf;
    }
}

void write_finetune_curve_csv(const std::filesystem::path& path,
                              const std::vector<FinetuneCurveRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError(path.string() + ": cannot open for writing");
    os << "epoch,step,train_loss,val_loss,lr\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%ld,%.9g,%.9g,%.9g\n", r.epoch, r.step, r.train_loss,
                      r.val_loss, static_cast<double>(r.lr));
        os << buf;
    }
}

PretrainResult pretrain(const TrainConfig& cfg, const ImageDataset& data,
                        const std::filesystem::path& out_dir, std::ostream* log) {
    cfg.validate();
    if (data.size() == 0) throw DataError("pretrain: empty dataset");
    if (data.height % cfg.patch != 0 || data.width % cfg.patch != 0) {
        throw ConfigError("pretrain: image size not divisible by patch");
    }
    const bool write_files = !out_dir.empty();
    if (write_files) std::filesystem::create_directories(out_dir);

    PretrainResult result;
    result.model = EdmaeModel::create(default_encoder_config(), cfg.seed, cfg.momentum,
                                      cfg.align_weight);
    result.model.recon_scope = recon_scope_from_string(cfg.recon_scope);
    EdmaeModel& model = result.model;

    AdamW opt(model.trainable_parameters(), adamw_from(cfg));
    PlateauScheduler sched(cfg.lr, plateau_from(cfg));
    Rng shuffle_rng(substream(cfg.seed, "shuffle"));
    const std::uint64_t mask_root = substream(cfg.seed, "mask");
    std::uint64_t mask_counter = 0;

    const int grid_h = data.height / cfg.patch;
    const int grid_w = data.width / cfg.patch;
    long global_step = 0;
    Checkpoint last_good = model.to_checkpoint();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> order = identity_order(data.size());
        fisher_yates(order, shuffle_rng);
        double sum_align = 0.0, sum_recon = 0.0, sum_total = 0.0;
        std::size_t seen = 0;

        for (std::size_t first = 0; first < data.size(); first += static_cast<std::size_t>(cfg.batch)) {
            if (train_interrupt_flag().load()) {
                logln(log, "interrupted; saving checkpoint");
                result.interrupted = true;
                break;
            }
            const std::size_t count =
                std::min(static_cast<std::size_t>(cfg.batch), data.size() - first);
            Tensor images = data.batch_images(order, first, count);
            std::vector<MaskSpec> specs;
            specs.reserve(count);
            for (std::size_t i = 0; i < count; ++i) {
                specs.push_back(
                    sample_mask(grid_h, grid_w, cfg.patch, cfg.mask_ratio, mask_root + mask_counter++));
            }

            Tape tape;
            PretrainStepOutput step;
            {
                TapeScope scope(tape);
                step = model.pretrain_batch_forward(images, specs);
                check_finite(step.total_loss, "pretraining loss");
                opt.zero_grad();
                tape.backward(step.total_loss);
            }
            try {
                opt.step();
            } catch (const NumericError&) {
                if (write_files) save_checkpoint(out_dir / "checkpoint_abort.edmk", last_good);
                throw;
            }
            model.ema_update();

            ++global_step;
            sum_align += static_cast<double>(step.align_loss.scalar()) * static_cast<double>(count);
            sum_recon += static_cast<double>(step.recon_loss.scalar()) * static_cast<double>(count);
            sum_total += static_cast<double>(step.total_loss.scalar()) * static_cast<double>(count);
            seen += count;
        }
        if (result.interrupted) break;

        EpochRow row;
        row.epoch = epoch;
        row.step = global_step;
        row.align_loss = sum_align / static_cast<double>(seen);
        row.recon_loss = sum_recon / static_cast<double>(seen);
        row.total_loss = sum_total / static_cast<double>(seen);
        if (!std::isfinite(row.total_loss)) {
            if (write_files) save_checkpoint(out_dir / "checkpoint_abort.edmk", last_good);
            throw NumericError("pretrain: non-finite epoch loss");
        }
        // no validation split in self-supervised pretraining: the scheduler
        // watches the training loss
        const float lr = sched.observe(static_cast<float>(row.total_loss));
        opt.set_lr(lr);
        row.lr = lr;
        result.curve.push_back(row);
        logln(log, fmt_epoch(epoch, cfg.epochs, row.total_loss, lr));

        last_good = model.to_checkpoint();
        last_good.meta["step"] = std::to_string(global_step);
        if (write_files && cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 &&
            epoch != cfg.epochs) {
            save_checkpoint(out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".edmk"),
                            finalize_meta(last_good, cfg, global_step));
        }
    }

    if (write_files) {
        Checkpoint final = model.to_checkpoint();
        result.checkpoint_path = out_dir / "checkpoint_final.edmk";
        save_checkpoint(result.checkpoint_path, finalize_meta(final, cfg, global_step));
        write_pretrain_curve_csv(out_dir / "pretrain_curve.csv", result.curve);
    }
    return result;
}

// ---- classification ---------------------------------------------------------

Tensor ClassifierModel::forward(const Tensor& images) const {
    return linear(global_avg_pool(encoder.forward(images)), head_w, head_b);
}

std::vector<Tensor> ClassifierModel::parameters() const {
    std::vector<Tensor> out = encoder.parameters();
    out.push_back(head_w);
    out.push_back(head_b);
    return out;
}

Checkpoint ClassifierModel::to_checkpoint() const {
    Checkpoint ckpt;
    for (const auto& [name, t] : encoder.named_parameters("t/")) {
        ckpt.tensors.emplace_back(name, t.clone());
    }
    ckpt.tensors.emplace_back("h/w", head_w.clone());
    ckpt.tensors.emplace_back("h/b", head_b.clone());
    ckpt.meta["task"] = "cls";
    ckpt.meta["classes"] = std::to_string(classes);
    ckpt.meta["stem_channels"] = std::to_string(encoder.cfg.stem_channels);
    ckpt.meta["growth"] = std::to_string(encoder.cfg.growth);
    ckpt.meta["in_channels"] = std::to_string(encoder.cfg.in_channels);
    std::string blocks;
    for (std::size_t i = 0; i < encoder.cfg.blocks.size(); ++i) {
        if (i) blocks += ",";
        blocks += std::to_string(encoder.cfg.blocks[i]);
    }
    ckpt.meta["blocks"] = blocks;
    return ckpt;
}

namespace {

DenseEncoderConfig encoder_config_from_meta(const Checkpoint& ckpt) {
    DenseEncoderConfig cfg;
    cfg.in_channels = std::stoi(ckpt.meta_or("in_channels", "1"));
    cfg.stem_channels = std::stoi(ckpt.meta_or("stem_channels", "16"));
    cfg.growth = std::stoi(ckpt.meta_or("growth", "8"));
    cfg.blocks.clear();
    const std::string blocks = ckpt.meta_or("blocks", "2,2");
    std::size_t pos = 0;
    while (pos < blocks.size()) {
        std::size_t comma = blocks.find(',', pos);
        if (comma == std::string::npos) comma = blocks.size();
        cfg.blocks.push_back(std::stoi(blocks.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return cfg;
}

// teacher weights from a checkpoint into a trainable encoder
DenseEncoder encoder_from_checkpoint(const Checkpoint& ckpt) {
    const DenseEncoderConfig cfg = encoder_config_from_meta(ckpt);
    Rng dummy(0);
    DenseEncoder enc = DenseEncoder::create(cfg, dummy, /*trainable=*/true);
    auto stored = ckpt.with_prefix("t/");
    for (auto& [name, dst] : enc.named_parameters("")) {
        const Tensor* src = nullptr;
        for (const auto& [sname, st] : stored) {
            if (sname == name) {
                src = &st;
                break;
            }
        }
        if (!src) throw ParseError("checkpoint: missing encoder tensor 't/" + name + "'");
        if (src->shape() != dst.shape()) {
            throw ParseError("checkpoint: encoder tensor 't/" + name + "' has shape " +
                             shape_str(src->shape()) + ", expected " + shape_str(dst.shape()));
        }
        dst.vec() = src->vec();
    }
    return enc;
}

}  // namespace

ClassifierModel ClassifierModel::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.meta_or("task", "") != "cls") {
        throw ParseError("checkpoint: expected a classification model (task=cls)");
    }
    ClassifierModel m;
    m.encoder = encoder_from_checkpoint(ckpt);
    m.classes = std::stoi(ckpt.meta_or("classes", "0"));
    const Tensor* w = ckpt.find("h/w");
    const Tensor* b = ckpt.find("h/b");
    if (!w || !b) throw ParseError("checkpoint: missing classifier head tensors");
    m.head_w = w->clone();
    m.head_b = b->clone();
    m.head_w.set_requires_grad(true);
    m.head_b.set_requires_grad(true);
    return m;
}

namespace {

double dataset_loss_classify(const ClassifierModel& model, const ImageDataset& data, int batch) {
    const std::vector<int> order = identity_order(data.size());
    double acc = 0.0;
    for (std::size_t first = 0; first < data.size(); first += static_cast<std::size_t>(batch)) {
        const std::size_t count = std::min(static_cast<std::size_t>(batch), data.size() - first);
        Tensor logits = model.forward(data.batch_images(order, first, count));
        acc += static_cast<double>(
                   softmax_cross_entropy(logits, data.batch_labels(order, first, count)).scalar()) *
               static_cast<double>(count);
    }
    return acc / static_cast<double>(data.size());
}

void require_labels(const ImageDataset& data, int classes, const char* what) {
    for (int lab : data.labels) {
        if (lab < 0) throw DataError(std::string(what) + ": dataset has unlabeled samples");
        if (lab >= classes) {
            throw ConfigError(std::string(what) + ": label " + std::to_string(lab) +
                              " exceeds configured class count " + std::to_string(classes));
        }
    }
}

}  // namespace

ClassifyResult finetune_classify(const std::optional<Checkpoint>& init, const ImageDataset& train,
                                 const ImageDataset& val, const ImageDataset& test,
                                 const TrainConfig& cfg, const std::filesystem::path& out_dir,
                                 std::ostream* log) {
    cfg.validate();
    require_labels(train, cfg.classes, "finetune_classify(train)");
    require_labels(val, cfg.classes, "finetune_classify(val)");
    require_labels(test, cfg.classes, "finetune_classify(test)");
    const bool write_files = !out_dir.empty();
    if (write_files) std::filesystem::create_directories(out_dir);

    ClassifyResult result;
    Rng init_rng(substream(cfg.seed, "init-head"));
    if (init) {
        result.model.encoder = encoder_from_checkpoint(*init);
    } else {
        Rng enc_rng(substream(cfg.seed, "init"));
        result.model.encoder = DenseEncoder::create(default_encoder_config(), enc_rng, true);
    }
    ClassifierModel& model = result.model;
    model.classes = cfg.classes;
    const int feat = model.encoder.cfg.out_channels();
    const float bound = std::sqrt(1.0f / static_cast<float>(feat));
    model.head_w = Tensor::randu({feat, cfg.classes}, init_rng, -bound, bound, true);
    model.head_b = Tensor::randu({cfg.classes}, init_rng, -bound, bound, true);

    if (cfg.freeze_encoder) {
        for (Tensor& p : model.encoder.parameters()) p.set_requires_grad(false);
    }

    AdamW opt(model.parameters(), adamw_from(cfg));
    PlateauScheduler sched(cfg.lr, plateau_from(cfg));
    Rng shuffle_rng(substream(cfg.seed, "shuffle"));
    long global_step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> order = identity_order(train.size());
        fisher_yates(order, shuffle_rng);
        double sum_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t first = 0; first < train.size(); first += static_cast<std::size_t>(cfg.batch)) {
            if (train_interrupt_flag().load()) break;
            const std::size_t count =
                std::min(static_cast<std::size_t>(cfg.batch), train.size() - first);
            Tape tape;
            Tensor loss;
            {
                TapeScope scope(tape);
                Tensor logits = model.forward(train.batch_images(order, first, count));
                loss = softmax_cross_entropy(logits, train.batch_labels(order, first, count));
                check_finite(loss, "classification loss");
                opt.zero_grad();
                tape.backward(loss);
            }
            opt.step();
            ++global_step;
            sum_loss += static_cast<double>(loss.scalar()) * static_cast<double>(count);
            seen += count;
        }
        FinetuneCurveRow row;
        row.epoch = epoch;
        row.step = global_step;
        row.train_loss = seen ? sum_loss / static_cast<double>(seen) : 0.0;
        row.val_loss = dataset_loss_classify(model, val, cfg.batch);
        const float lr = sched.observe(static_cast<float>(row.val_loss));
        opt.set_lr(lr);
        row.lr = lr;
        result.curve.push_back(row);
        logln(log, fmt_epoch(epoch, cfg.epochs, row.val_loss, lr));
        if (train_interrupt_flag().load()) break;
    }

    result.test_report = evaluate_classifier(model, test, cfg.batch);
    if (write_files) {
        result.model_path = out_dir / "model_cls.edmk";
        save_checkpoint(result.model_path, model.to_checkpoint());
        write_finetune_curve_csv(out_dir / "finetune_cls_curve.csv", result.curve);
        std::ofstream os(out_dir / "metrics_cls.csv", std::ios::trunc);
        os << result.test_report.to_csv();
    }
    return result;
}

MetricsReport evaluate_classifier(const ClassifierModel& model, const ImageDataset& data, int batch) {
    if (data.size() == 0) throw DataError("evaluate_classifier: empty dataset");
    const std::vector<int> order = identity_order(data.size());
    std::vector<int> pred;
    std::vector<int> truth;
    pred.reserve(data.size());
    truth.reserve(data.size());
    for (std::size_t first = 0; first < data.size(); first += static_cast<std::size_t>(batch)) {
        const std::size_t count = std::min(static_cast<std::size_t>(batch), data.size() - first);
        Tensor logits = model.forward(data.batch_images(order, first, count));
        const std::vector<int> labels = data.batch_labels(order, first, count);
        for (std::size_t i = 0; i < count; ++i) {
            const float* row = logits.data() + static_cast<std::int64_t>(i) * model.classes;
            int best = 0;
            for (int k = 1; k < model.classes; ++k) {
                if (row[k] > row[best]) best = k;
            }
            pred.push_back(best);
            truth.push_back(labels[i]);
        }
    }
    return classification_metrics(pred, truth, model.classes);
}

// ---- segmentation -------------------------------------------------------------

Tensor SegmenterModel::forward(const Tensor& images) const {
    DenseEncoder::Taps taps = encoder.forward_taps(images);
    Tensor h = relu(conv2d(taps.out, reduce.weight, reduce.bias, 1, 0));
    h = upsample_nearest(h, 2);
    h = concat_channels(h, taps.block_out[0]);
    h = relu(conv2d(h, fuse1.weight, fuse1.bias, 1, 1));
    h = upsample_nearest(h, 2);
    h = concat_channels(h, taps.stem_out);
    h = relu(conv2d(h, fuse2.weight, fuse2.bias, 1, 1));
    return conv2d(h, out.weight, out.bias, 1, 0);
}

std::vector<Tensor> SegmenterModel::parameters() const {
    std::vector<Tensor> v = encoder.parameters();
    for (const ConvParams* p : {&reduce, &fuse1, &fuse2, &out}) {
        v.push_back(p->weight);
        v.push_back(p->bias);
    }
    return v;
}

Checkpoint SegmenterModel::to_checkpoint() const {
    Checkpoint ckpt;
    for (const auto& [name, t] : encoder.named_parameters("t/")) {
        ckpt.tensors.emplace_back(name, t.clone());
    }
    const std::pair<std::string, const ConvParams*> heads[] = {
        {"reduce", &reduce}, {"fuse1", &fuse1}, {"fuse2", &fuse2}, {"out", &out}};
    for (const auto& [name, p] : heads) {
        ckpt.tensors.emplace_back("h/" + name + ".w", p->weight.clone());
        ckpt.tensors.emplace_back("h/" + name + ".b", p->bias.clone());
    }
    ckpt.meta["task"] = "seg";
    ckpt.meta["stem_channels"] = std::to_string(encoder.cfg.stem_channels);
    ckpt.meta["growth"] = std::to_string(encoder.cfg.growth);
    ckpt.meta["in_channels"] = std::to_string(encoder.cfg.in_channels);
    std::string blocks;
    for (std::size_t i = 0; i < encoder.cfg.blocks.size(); ++i) {
        if (i) blocks += ",";
        blocks += std::to_string(encoder.cfg.blocks[i]);
    }
    ckpt.meta["blocks"] = blocks;
    return ckpt;
}

SegmenterModel SegmenterModel::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.meta_or("task", "") != "seg") {
        throw ParseError("checkpoint: expected a segmentation model (task=seg)");
    }
    SegmenterModel m;
    m.encoder = encoder_from_checkpoint(ckpt);
    const std::pair<std::string, ConvParams*> heads[] = {
        {"reduce", &m.reduce}, {"fuse1", &m.fuse1}, {"fuse2", &m.fuse2}, {"out", &m.out}};
    for (const auto& [name, p] : heads) {
        const Tensor* w = ckpt.find("h/" + name + ".w");
        const Tensor* b = ckpt.find("h/" + name + ".b");
        if (!w || !b) throw ParseError("checkpoint: missing segmentation head tensor h/" + name);
        p->weight = w->clone();
        p->bias = b->clone();
        p->weight.set_requires_grad(true);
        p->bias.set_requires_grad(true);
    }
    return m;
}

namespace {

SegmenterModel make_segmenter(const std::optional<Checkpoint>& init, const TrainConfig& cfg) {
    SegmenterModel m;
    if (init) {
        m.encoder = encoder_from_checkpoint(*init);
    } else {
        Rng enc_rng(substream(cfg.seed, "init"));
        m.encoder = DenseEncoder::create(default_encoder_config(), enc_rng, true);
    }
    Rng rng(substream(cfg.seed, "init-head"));
    const int enc_out = m.encoder.cfg.out_channels();
    const int block1 = m.encoder.cfg.stem_channels + m.encoder.cfg.blocks[0] * m.encoder.cfg.growth;
    const int stem = m.encoder.cfg.stem_channels;
    m.reduce = make_conv(16, enc_out, 1, rng, true);
    m.fuse1 = make_conv(16, 16 + block1, 3, rng, true);
    m.fuse2 = make_conv(8, 16 + stem, 3, rng, true);
    m.out = make_conv(2, 8, 1, rng, true);
    return m;
}

Tensor seg_loss(const Tensor& logits, const std::vector<int>& labels, const TrainConfig& cfg) {
    if (cfg.loss == "ce") return softmax_cross_entropy(logits, labels);
    return focal_loss(softmax_true_prob(logits, labels), cfg.focal_gamma, cfg.focal_alpha);
}

double dataset_loss_segment(const SegmenterModel& model, const ImageDataset& data,
                            const TrainConfig& cfg) {
    const std::vector<int> order = identity_order(data.size());
    double acc = 0.0;
    for (std::size_t first = 0; first < data.size(); first += static_cast<std::size_t>(cfg.batch)) {
        const std::size_t count = std::min(static_cast<std::size_t>(cfg.batch), data.size() - first);
        Tensor logits = model.forward(data.batch_images(order, first, count));
        acc += static_cast<double>(
                   seg_loss(logits, data.batch_mask_labels(order, first, count), cfg).scalar()) *
               static_cast<double>(count);
    }
    return acc / static_cast<double>(data.size());
}

}  // namespace

SegmentResult finetune_segment(const std::optional<Checkpoint>& init, const ImageDataset& train,
                               const ImageDataset& val, const ImageDataset& test,
                               const TrainConfig& cfg, const std::filesystem::path& out_dir,
                               std::ostream* log) {
    cfg.validate();
    const bool write_files = !out_dir.empty();
    if (write_files) std::filesystem::create_directories(out_dir);

    SegmentResult result;
    result.model = make_segmenter(init, cfg);
    SegmenterModel& model = result.model;

    if (cfg.freeze_encoder) {
        for (Tensor& p : model.encoder.parameters()) p.set_requires_grad(false);
    }

    AdamW opt(model.parameters(), adamw_from(cfg));
    PlateauScheduler sched(cfg.lr, plateau_from(cfg));
    Rng shuffle_rng(substream(cfg.seed, "shuffle"));
    long global_step = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> order = identity_order(train.size());
        fisher_yates(order, shuffle_rng);
        double sum_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t first = 0; first < train.size(); first += static_cast<std::size_t>(cfg.batch)) {
            if (train_interrupt_flag().load()) break;
            const std::size_t count =
                std::min(static_cast<std::size_t>(cfg.batch), train.size() - first);
            Tape tape;
            Tensor loss;
            {
                TapeScope scope(tape);
                Tensor logits = model.forward(train.batch_images(order, first, count));
                loss = seg_loss(logits, train.batch_mask_labels(order, first, count), cfg);
                check_finite(loss, "segmentation loss");
                opt.zero_grad();
                tape.backward(loss);
            }
            opt.step();
            ++global_step;
            sum_loss += static_cast<double>(loss.scalar()) * static_cast<double>(count);
            seen += count;
        }
        FinetuneCurveRow row;
        row.epoch = epoch;
        row.step = global_step;
        row.train_loss = seen ? sum_loss / static_cast<double>(seen) : 0.0;
        row.val_loss = dataset_loss_segment(model, val, cfg);
        const float lr = sched.observe(static_cast<float>(row.val_loss));
        opt.set_lr(lr);
        row.lr = lr;
        result.curve.push_back(row);
        logln(log, fmt_epoch(epoch, cfg.epochs, row.val_loss, lr));
        if (train_interrupt_flag().load()) break;
    }

    result.test_report = evaluate_segmenter(model, test, cfg.batch, log);
    if (write_files) {
        result.model_path = out_dir / "model_seg.edmk";
        save_checkpoint(result.model_path, model.to_checkpoint());
        write_finetune_curve_csv(out_dir / "finetune_seg_curve.csv", result.curve);
        std::ofstream os(out_dir / "metrics_seg.csv", std::ios::trunc);
        os << result.test_report.to_csv();
    }
    return result;
}

MetricsReport evaluate_segmenter(const SegmenterModel& model, const ImageDataset& data, int batch,
                                 std::ostream* log) {
    if (data.size() == 0) throw DataError("evaluate_segmenter: empty dataset");
    const std::vector<int> order = identity_order(data.size());
    const std::int64_t plane = static_cast<std::int64_t>(data.height) * data.width;

    double dice_sum = 0.0;
    long dice_n = 0;
    double hd_sum = 0.0;
    long hd_n = 0, hd_skipped = 0;
    double auc_sum = 0.0;
    long auc_n = 0, auc_skipped = 0;
    bool any_truth_fg = false;

    for (std::size_t first = 0; first < data.size(); first += static_cast<std::size_t>(batch)) {
        const std::size_t count = std::min(static_cast<std::size_t>(batch), data.size() - first);
        Tensor images = data.batch_images(order, first, count);
        Tensor logits = model.forward(images);
        const std::vector<int> truth_px = data.batch_mask_labels(order, first, count);
        // foreground probability per pixel
        std::vector<int> fg_labels(count * static_cast<std::size_t>(plane), 1);
        Tensor fg_prob = softmax_true_prob(logits, fg_labels);
        for (std::size_t i = 0; i < count; ++i) {
            std::vector<std::uint8_t> pred_mask(static_cast<std::size_t>(plane));
            std::vector<std::uint8_t> true_mask(static_cast<std::size_t>(plane));
            std::vector<double> scores(static_cast<std::size_t>(plane));
            std::vector<int> tlabels(static_cast<std::size_t>(plane));
            const float* prob = fg_prob.data() + static_cast<std::int64_t>(i) * plane;
            for (std::int64_t q = 0; q < plane; ++q) {
                pred_mask[static_cast<std::size_t>(q)] = prob[q] > 0.5f;
                const int t = truth_px[i * static_cast<std::size_t>(plane) + static_cast<std::size_t>(q)];
                true_mask[static_cast<std::size_t>(q)] = static_cast<std::uint8_t>(t);
                scores[static_cast<std::size_t>(q)] = prob[q];
                tlabels[static_cast<std::size_t>(q)] = t;
                if (t) any_truth_fg = true;
            }
            dice_sum += dice(pred_mask, true_mask);
            ++dice_n;
            try {
                hd_sum += hausdorff(pred_mask, true_mask, data.height, data.width, 1.0);
                ++hd_n;
            } catch (const MetricError&) {
                ++hd_skipped;
            }
            try {
                auc_sum += auc(scores, tlabels);
                ++auc_n;
            } catch (const MetricError&) {
                ++auc_skipped;
            }
        }
    }

    MetricsReport rep;
    if (!any_truth_fg) {
        logln(log, "warning: no foreground in ground truth; foreground Dice undefined, reporting 0");
        rep.dice = 0.0;
    } else {
        rep.dice = dice_sum / static_cast<double>(dice_n);
    }
    if (hd_skipped) {
        logln(log, "warning: Hausdorff undefined for " + std::to_string(hd_skipped) +
                       " image(s) with an empty mask; excluded from the mean");
    }
    if (hd_n > 0) rep.hausdorff = hd_sum / static_cast<double>(hd_n);
    if (auc_skipped) {
        logln(log, "warning: AUC undefined for " + std::to_string(auc_skipped) +
                       " single-class image(s); excluded from the mean");
    }
    if (auc_n > 0) rep.auc = auc_sum / static_cast<double>(auc_n);
    return rep;
}

}  // namespace edmae
