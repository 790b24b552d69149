#include "miniseg/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace miniseg {

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

std::array<std::size_t, 4> get_stage_array(const json& j, const char* key) {
    if (!j.contains(key)) {
        throw ConfigError(std::string("variant: missing key '") + key + "'");
    }
    const auto v = j.at(key).get<std::vector<std::size_t>>();
    if (v.size() != 4) {
        throw ConfigError(std::string("variant: '") + key +
                          "' must have exactly 4 entries");
    }
    return {v[0], v[1], v[2], v[3]};
}

ModelConfig model_from_json(const json& m, const std::string& base_dir) {
    json variant = m;
    if (m.contains("variant")) {
        fs::path vp = m.at("variant").get<std::string>();
        if (vp.is_relative() && !base_dir.empty()) vp = fs::path(base_dir) / vp;
        variant = read_json_file(vp.string());
        // run-config overrides on top of the variant table
        for (const auto& [key, val] : m.items()) {
            if (key != "variant") variant[key] = val;
        }
    }

    ModelConfig cfg;
    cfg.encoder.variant_name = get_or<std::string>(variant, "name", "custom");
    const auto dims = get_stage_array(variant, "dims");
    const auto depths = get_stage_array(variant, "depths");
    const auto heads = get_stage_array(variant, "heads");
    const auto srs = get_stage_array(variant, "sr_ratios");
    const auto pk = variant.contains("patch_kernels")
                        ? get_stage_array(variant, "patch_kernels")
                        : std::array<std::size_t, 4>{7, 3, 3, 3};
    const auto pst = variant.contains("patch_strides")
                         ? get_stage_array(variant, "patch_strides")
                         : std::array<std::size_t, 4>{4, 2, 2, 2};
    const auto pp = variant.contains("patch_pads")
                        ? get_stage_array(variant, "patch_pads")
                        : std::array<std::size_t, 4>{3, 1, 1, 1};
    const auto mlp = variant.contains("mlp_expansions")
                         ? get_stage_array(variant, "mlp_expansions")
                         : std::array<std::size_t, 4>{4, 4, 4, 4};
    for (std::size_t i = 0; i < 4; ++i) {
        StageConfig& s = cfg.encoder.stages[i];
        s.embed_dim = dims[i];
        s.depth = depths[i];
        s.heads = heads[i];
        s.sr_ratio = srs[i];
        s.patch_kernel = pk[i];
        s.patch_stride = pst[i];
        s.patch_pad = pp[i];
        s.mlp_expansion = mlp[i];
    }
    cfg.decoder.unify_dim = get_or<std::size_t>(variant, "decoder_dim", 256);
    cfg.decoder.num_classes =
        get_or<std::size_t>(variant, "num_classes", kNumClasses);
    cfg.decoder.strict_fusion = get_or<bool>(variant, "strict_fusion", false);
    cfg.with_aux = get_or<bool>(variant, "aux_head", false);
    cfg.aux_channels = get_or<std::size_t>(variant, "aux_channels", 64);
    cfg.validate();
    return cfg;
}

json model_to_json(const ModelConfig& cfg) {
    json m;
    m["name"] = cfg.encoder.variant_name;
    auto arr = [&](auto member) {
        json a = json::array();
        for (const auto& s : cfg.encoder.stages) a.push_back(member(s));
        return a;
    };
    m["dims"] = arr([](const StageConfig& s) { return s.embed_dim; });
    m["depths"] = arr([](const StageConfig& s) { return s.depth; });
    m["heads"] = arr([](const StageConfig& s) { return s.heads; });
    m["sr_ratios"] = arr([](const StageConfig& s) { return s.sr_ratio; });
    m["patch_kernels"] = arr([](const StageConfig& s) { return s.patch_kernel; });
    m["patch_strides"] = arr([](const StageConfig& s) { return s.patch_stride; });
    m["patch_pads"] = arr([](const StageConfig& s) { return s.patch_pad; });
    m["mlp_expansions"] =
        arr([](const StageConfig& s) { return s.mlp_expansion; });
    m["decoder_dim"] = cfg.decoder.unify_dim;
    m["num_classes"] = cfg.decoder.num_classes;
    m["strict_fusion"] = cfg.decoder.strict_fusion;
    m["aux_head"] = cfg.with_aux;
    m["aux_channels"] = cfg.aux_channels;
    return m;
}

ClassWeightMode weight_mode_from_string(const std::string& s) {
    if (s == "none") return ClassWeightMode::none;
    if (s == "effective_number") return ClassWeightMode::effective_number;
    if (s == "inverse_frequency") return ClassWeightMode::inverse_frequency;
    throw ConfigError("loss.class_weights must be none, effective_number or "
                      "inverse_frequency, got '" + s + "'");
}

const char* weight_mode_to_string(ClassWeightMode m) {
    switch (m) {
        case ClassWeightMode::none: return "none";
        case ClassWeightMode::effective_number: return "effective_number";
        case ClassWeightMode::inverse_frequency: return "inverse_frequency";
    }
    return "none";
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    aug.validate();
    if (aug.crop_h % 32 != 0 || aug.crop_w % 32 != 0) {
        throw ConfigError("train crop extents must be divisible by 32, got " +
                          std::to_string(aug.crop_h) + "x" +
                          std::to_string(aug.crop_w));
    }
    if (weight_beta < 0.0 || weight_beta >= 1.0) {
        throw ConfigError("loss.beta must be in [0,1)");
    }
    if (ohem_enabled) ohem.validate();
    if (aux_weight < 0.0) throw ConfigError("loss.aux_weight must be >= 0");
    sched.validate();
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
        !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("optim betas must be in [0,1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("optim.eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("optim.weight_decay must be >= 0");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (checkpoint_interval == 0 || log_interval == 0) {
        throw ConfigError("train intervals must be positive");
    }
    if (out_dir.empty()) throw ConfigError("train.out_dir must be set");
    if (eval_scales.empty()) throw ConfigError("eval.scales must be nonempty");
    for (double s : eval_scales) {
        if (!(s > 0.0)) throw ConfigError("eval.scales must be positive");
    }
}

RunConfig RunConfig::from_json_text(const std::string& text,
                                    const std::string& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON config: ") + e.what());
    }
    RunConfig cfg;
    if (!j.contains("model")) throw ConfigError("config: missing 'model'");
    cfg.model = model_from_json(j.at("model"), base_dir);

    const json data = j.value("data", json::object());
    cfg.data_root = get_or<std::string>(data, "root", "");
    const json aug = data.value("aug", json::object());
    if (aug.contains("crop")) {
        const auto c = aug.at("crop").get<std::vector<std::size_t>>();
        if (c.size() != 2) throw ConfigError("aug.crop must be [h,w]");
        cfg.aug.crop_h = c[0];
        cfg.aug.crop_w = c[1];
    }
    cfg.aug.flip_prob = get_or<double>(aug, "flip_prob", cfg.aug.flip_prob);
    if (aug.contains("scale_range")) {
        const auto r = aug.at("scale_range").get<std::vector<double>>();
        if (r.size() != 2) throw ConfigError("aug.scale_range must be [lo,hi]");
        cfg.aug.scale_lo = r[0];
        cfg.aug.scale_hi = r[1];
    }
    cfg.aug.keep_aspect = get_or<bool>(aug, "keep_aspect", cfg.aug.keep_aspect);
    if (aug.contains("photometric")) {
        const json& p = aug.at("photometric");
        cfg.aug.with_photometric = get_or<bool>(p, "enabled", true);
        cfg.aug.photometric.brightness_delta =
            get_or<double>(p, "brightness_delta", 32.0);
        if (p.contains("contrast_range")) {
            const auto r = p.at("contrast_range").get<std::vector<double>>();
            cfg.aug.photometric.contrast_lo = r.at(0);
            cfg.aug.photometric.contrast_hi = r.at(1);
        }
        if (p.contains("saturation_range")) {
            const auto r = p.at("saturation_range").get<std::vector<double>>();
            cfg.aug.photometric.saturation_lo = r.at(0);
            cfg.aug.photometric.saturation_hi = r.at(1);
        }
        cfg.aug.photometric.hue_delta_deg = get_or<double>(p, "hue_delta", 18.0);
        cfg.aug.photometric.prob = get_or<double>(p, "prob", 0.5);
    }
    if (data.contains("mean") || aug.contains("mean")) {
        const auto m = (aug.contains("mean") ? aug : data)
                           .at("mean").get<std::vector<double>>();
        if (m.size() != 3) throw ConfigError("aug.mean must have 3 entries");
        std::copy(m.begin(), m.end(), cfg.aug.mean.begin());
    }
    if (data.contains("std") || aug.contains("std")) {
        const auto s = (aug.contains("std") ? aug : data)
                           .at("std").get<std::vector<double>>();
        if (s.size() != 3) throw ConfigError("aug.std must have 3 entries");
        std::copy(s.begin(), s.end(), cfg.aug.stddev.begin());
    }

    const json loss = j.value("loss", json::object());
    cfg.weight_mode = weight_mode_from_string(
        get_or<std::string>(loss, "class_weights", "none"));
    cfg.weight_beta = get_or<double>(loss, "beta", cfg.weight_beta);
    if (loss.contains("ohem") && !loss.at("ohem").is_null()) {
        const json& o = loss.at("ohem");
        cfg.ohem_enabled = get_or<bool>(o, "enabled", true);
        cfg.ohem.thresh = get_or<double>(o, "thresh", 0.5);
        cfg.ohem.min_kept = get_or<std::size_t>(o, "min_kept", 10000);
    }
    cfg.aux_weight = get_or<double>(loss, "aux_weight", cfg.aux_weight);

    const json optim = j.value("optim", json::object());
    cfg.sched.lr0 = get_or<double>(optim, "lr0", cfg.sched.lr0);
    cfg.sched.power = get_or<double>(optim, "power", cfg.sched.power);
    cfg.sched.total_iters =
        get_or<std::uint64_t>(optim, "total_iters", cfg.sched.total_iters);
    cfg.sched.warmup_iters =
        get_or<std::uint64_t>(optim, "warmup_iters", cfg.sched.warmup_iters);
    cfg.sched.warmup_start_factor = get_or<double>(
        optim, "warmup_start_factor", cfg.sched.warmup_start_factor);
    cfg.adam_beta1 = get_or<double>(optim, "beta1", cfg.adam_beta1);
    cfg.adam_beta2 = get_or<double>(optim, "beta2", cfg.adam_beta2);
    cfg.adam_eps = get_or<double>(optim, "eps", cfg.adam_eps);
    cfg.weight_decay = get_or<double>(optim, "weight_decay", cfg.weight_decay);
    // reserved for periodic warm restarts; no schedule implements it yet
    if (get_or<std::uint64_t>(optim, "restart_period", 0) != 0) {
        throw ConfigError("optim.restart_period is reserved but not implemented");
    }

    const json train = j.value("train", json::object());
    cfg.batch_size = get_or<std::size_t>(train, "batch_size", cfg.batch_size);
    cfg.seed = get_or<std::uint64_t>(train, "seed", cfg.seed);
    cfg.out_dir = get_or<std::string>(train, "out_dir", cfg.out_dir);
    cfg.checkpoint_interval = get_or<std::uint64_t>(train, "checkpoint_interval",
                                                    cfg.checkpoint_interval);
    cfg.log_interval =
        get_or<std::uint64_t>(train, "log_interval", cfg.log_interval);

    const json ev = j.value("eval", json::object());
    if (ev.contains("scales")) {
        cfg.eval_scales = ev.at("scales").get<std::vector<double>>();
    }
    cfg.eval_flip = get_or<bool>(ev, "flip", cfg.eval_flip);

    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str(), fs::path(path).parent_path().string());
}

std::string RunConfig::canonical_json() const {
    json j;
    j["model"] = model_to_json(model);
    j["data"]["root"] = data_root;
    json& aug_j = j["data"]["aug"];
    aug_j["crop"] = {aug.crop_h, aug.crop_w};
    aug_j["flip_prob"] = aug.flip_prob;
    aug_j["scale_range"] = {aug.scale_lo, aug.scale_hi};
    aug_j["keep_aspect"] = aug.keep_aspect;
    aug_j["photometric"] = {
        {"enabled", aug.with_photometric},
        {"brightness_delta", aug.photometric.brightness_delta},
        {"contrast_range", {aug.photometric.contrast_lo, aug.photometric.contrast_hi}},
        {"saturation_range",
         {aug.photometric.saturation_lo, aug.photometric.saturation_hi}},
        {"hue_delta", aug.photometric.hue_delta_deg},
        {"prob", aug.photometric.prob},
    };
    aug_j["mean"] = aug.mean;
    aug_j["std"] = aug.stddev;
    j["loss"] = {
        {"class_weights", weight_mode_to_string(weight_mode)},
        {"beta", weight_beta},
        {"aux_weight", aux_weight},
    };
    if (ohem_enabled) {
        j["loss"]["ohem"] = {{"enabled", true},
                             {"thresh", ohem.thresh},
                             {"min_kept", ohem.min_kept}};
    }
    j["optim"] = {
        {"lr0", sched.lr0},
        {"power", sched.power},
        {"total_iters", sched.total_iters},
        {"warmup_iters", sched.warmup_iters},
        {"warmup_start_factor", sched.warmup_start_factor},
        {"beta1", adam_beta1},
        {"beta2", adam_beta2},
        {"eps", adam_eps},
        {"weight_decay", weight_decay},
    };
    j["train"] = {
        {"batch_size", batch_size},
        {"seed", seed},
        {"out_dir", out_dir},
        {"checkpoint_interval", checkpoint_interval},
        {"log_interval", log_interval},
    };
    j["eval"] = {{"scales", eval_scales}, {"flip", eval_flip}};
    return j.dump(2);
}

ModelConfig load_variant_file(const std::string& path, std::size_t num_classes) {
    json wrapper;
    wrapper["variant"] = path;
    if (!wrapper.contains("num_classes")) wrapper["num_classes"] = num_classes;
    return model_from_json(wrapper, "");
}

std::string resolve_out_dir(const std::string& dir) {
    const char* root = std::getenv("MINISEG_OUT_ROOT");
    if (!root || *root == '\0') return dir;
    fs::path p(dir);
    if (p.is_absolute()) return dir;
    return (fs::path(root) / p).string();
}

}  // namespace miniseg
