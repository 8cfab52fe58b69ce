#include "edmae/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "edmae/error.hpp"

namespace edmae {

void TrainConfig::validate() const {
    if (lr <= 0.0f) throw ConfigError("lr must be > 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (!(sched_factor > 0.0f && sched_factor < 1.0f)) throw ConfigError("sched_factor must be in (0,1)");
    if (sched_patience < 1) throw ConfigError("sched_patience must be >= 1");
    if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw ConfigError("mask_ratio must be in [0,1]");
    if (!(momentum >= 0.0f && momentum <= 1.0f)) throw ConfigError("momentum must be in [0,1]");
    if (align_weight < 0.0f) throw ConfigError("align_weight must be >= 0");
    if (recon_scope != "masked" && recon_scope != "full") {
        throw ConfigError("recon_scope must be 'masked' or 'full'");
    }
    if (loss != "focal" && loss != "ce") throw ConfigError("loss must be 'focal' or 'ce'");
    if (patch < 1) throw ConfigError("patch must be >= 1");
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (focal_gamma < 0.0f) throw ConfigError("focal_gamma must be >= 0");
    if (!(focal_alpha > 0.0f && focal_alpha < 1.0f)) throw ConfigError("focal_alpha must be in (0,1)");
}

KeyValues parse_config_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path.string() + ": cannot open config file");
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        // trim
        const auto notspace = [](char c) { return !std::isspace(static_cast<unsigned char>(c)); };
        line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
        line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected key=value, got '" + line + "'");
        }
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
        value.erase(value.begin(), std::find_if(value.begin(), value.end(), notspace));
        kv.emplace_back(std::move(key), std::move(value));
    }
    return kv;
}

namespace {

float to_float(const std::string& key, const std::string& v) {
    try {
        return std::stof(v);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad number '" + v + "'");
    }
}

int to_int(const std::string& key, const std::string& v) {
    try {
        return std::stoi(v);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad integer '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad integer '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': bad boolean '" + v + "'");
}

}  // namespace

void apply_config(TrainConfig& cfg, const KeyValues& kv) {
    for (const auto& [key, value] : kv) {
        if (key == "seed") {
            cfg.seed = to_u64(key, value);
        } else if (key == "epochs") {
            cfg.epochs = to_int(key, value);
        } else if (key == "batch") {
            cfg.batch = to_int(key, value);
        } else if (key == "lr") {
            cfg.lr = to_float(key, value);
        } else if (key == "beta1") {
            cfg.beta1 = to_float(key, value);
        } else if (key == "beta2") {
            cfg.beta2 = to_float(key, value);
        } else if (key == "eps") {
            cfg.eps = to_float(key, value);
        } else if (key == "weight_decay") {
            cfg.weight_decay = to_float(key, value);
        } else if (key == "sched_factor") {
            cfg.sched_factor = to_float(key, value);
        } else if (key == "sched_patience") {
            cfg.sched_patience = to_int(key, value);
        } else if (key == "sched_threshold") {
            cfg.sched_threshold = to_float(key, value);
        } else if (key == "sched_min_lr") {
            cfg.sched_min_lr = to_float(key, value);
        } else if (key == "mask_ratio") {
            cfg.mask_ratio = to_float(key, value);
        } else if (key == "momentum") {
            cfg.momentum = to_float(key, value);
        } else if (key == "align_weight") {
            cfg.align_weight = to_float(key, value);
        } else if (key == "recon_scope") {
            cfg.recon_scope = value;
        } else if (key == "patch") {
            cfg.patch = to_int(key, value);
        } else if (key == "checkpoint_every") {
            cfg.checkpoint_every = to_int(key, value);
        } else if (key == "classes") {
            cfg.classes = to_int(key, value);
        } else if (key == "loss") {
            cfg.loss = value;
        } else if (key == "focal_gamma") {
            cfg.focal_gamma = to_float(key, value);
        } else if (key == "focal_alpha") {
            cfg.focal_alpha = to_float(key, value);
        } else if (key == "freeze_encoder") {
            cfg.freeze_encoder = to_bool(key, value);
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    cfg.validate();
}

}  // namespace edmae
