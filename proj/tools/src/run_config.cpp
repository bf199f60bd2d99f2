// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include "run_config.hpp"

#include <splatprior/errors.hpp>

#include <fmt/format.h>

#include <fstream>

namespace splatprior::cli {

using nlohmann::json;

const std::vector<ConfigKey> &RunConfig::keys() {
    static const std::vector<ConfigKey> k = {
        {"seed", 0, "seed of every random choice (network init, sampling, view order)"},
        {"threads", 0, "worker threads, 0 = hardware concurrency"},
        {"voxel_size", 0.04, "voxel edge v_d in meters", true},
        {"gaussians_per_voxel", 2, "Gaussians decoded per voxel v_g", true},
        {"feature_dim", 64, "latent feature width per voxel", true},
        {"channels", json::array({32, 64, 96, 128}), "sparse U-Net channels per level"},
        {"decoder_hidden", 128, "hidden width of the Gaussian decoder"},
        {"dense_budget", 65536, "largest dense voxel set the initializer may expand to"},
        {"timesteps", 5, "densification-optimization timesteps T", true},
        {"densify_base", 20000, "densification base count s, n(t) = floor(s / 2^t)", true},
        {"views_per_accum", 100, "views per gradient accumulation, 0 = every view", true},
        {"use_initializer", true, "start from the initializer instead of the raw SfM voxels"},
        {"use_densifier", true, "propose new voxels in the loop"},
        {"stage1_steps", 1000, "initializer training steps"},
        {"stage1_views_per_step", 1, "views per initializer training step"},
        {"stage1_lr", 1e-4, "initializer and decoder learning rate", true},
        {"stage2_iterations", 100, "unrolled loops for densifier and optimizer training"},
        {"stage2_loss_views", 0, "views per timestep loss in stage 2, 0 = every view"},
        {"stage2_lr", 1e-4, "densifier and optimizer learning rate", true},
        {"checkpoint_every", 10, "training steps between resumable checkpoints"},
        {"refine_steps", 2000, "gradient-descent refinement steps after the loop", true},
        {"refine_center_lr", 1.6e-4, "refinement center learning rate, times the scene extent"},
        {"refine_scale_lr", 5e-3, "refinement scale learning rate"},
        {"refine_rotation_lr", 1e-3, "refinement rotation learning rate"},
        {"refine_opacity_lr", 5e-2, "refinement opacity learning rate"},
        {"refine_color_lr", 2.5e-3, "refinement color learning rate"},
        {"tsdf_voxel", 0.02, "TSDF voxel edge in meters"},
        {"tsdf_truncation", 0.08, "TSDF truncation distance in meters"},
        {"holdout_every", 4, "every n-th view is held out for evaluation, 0 = evaluate on training views"},
        {"eval_crop_margin", 0.02, "predicted mesh crop margin around the ground-truth bbox"},
        {"eval_max_edge", 0.02, "edge length both meshes are subdivided to for Chamfer"},
    };
    return k;
}

std::string RunConfig::describe() {
    std::string out = "Run configuration keys (JSON object file via --config, or --set key=value):\n";
    for (const auto &k : keys()) {
        out += fmt::format("  {:<22} {:<18} {}{}\n", k.name, k.fallback.dump(), k.help,
                           k.published ? " [published setting]" : "");
    }
    return out;
}

RunConfig::RunConfig() {
    values_ = json::object();
    for (const auto &k : keys()) values_[k.name] = k.fallback;
}

namespace {

const ConfigKey *find_key(const std::string &name) {
    for (const auto &k : RunConfig::keys()) {
        if (k.name == name) return &k;
    }
    return nullptr;
}

bool same_kind(const json &a, const json &b) {
    if (a.is_boolean() || b.is_boolean()) return a.is_boolean() && b.is_boolean();
    if (a.is_number_float()) return b.is_number();
    if (a.is_number_integer()) return b.is_number_integer();
    if (a.is_array()) {
        if (!b.is_array() || a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!same_kind(a[i], b[i])) return false;
        }
        return true;
    }
    return a.type() == b.type();
}

} // namespace

void RunConfig::set(const std::string &key, const json &value) {
    const ConfigKey *k = find_key(key);
    if (!k) throw ValidationError("unknown configuration key '" + key + "'");
    if (!same_kind(k->fallback, value)) {
        throw ValidationError(fmt::format("key '{}' expects a value like {}, got {}", key, k->fallback.dump(), value.dump()));
    }
    values_[key] = k->fallback.is_number_float() ? json(value.get<double>()) : value;
}

void RunConfig::merge_file(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw MissingAsset("cannot open configuration " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception &e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ValidationError(path.string() + ": configuration must be a JSON object");
    for (const auto &[key, value] : j.items()) set(key, value);
}

void RunConfig::merge_assignment(const std::string &assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("expected key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    set(key, value);
}

void RunConfig::validate() const {
    auto positive = [&](const char *key) {
        if (!(get<double>(key) > 0.0)) throw ValidationError(fmt::format("{} must be positive", key));
    };
    auto at_least = [&](const char *key, long lo) {
        if (get<long>(key) < lo) throw ValidationError(fmt::format("{} must be at least {}", key, lo));
    };
    for (const char *k : {"voxel_size", "stage1_lr", "stage2_lr", "tsdf_voxel", "tsdf_truncation", "eval_max_edge",
                          "refine_center_lr", "refine_scale_lr", "refine_rotation_lr", "refine_opacity_lr",
                          "refine_color_lr"}) {
        positive(k);
    }
    for (const char *k : {"gaussians_per_voxel", "feature_dim", "decoder_hidden", "timesteps", "stage1_views_per_step",
                          "checkpoint_every", "dense_budget"}) {
        at_least(k, 1);
    }
    for (const char *k : {"seed", "threads", "densify_base", "views_per_accum", "stage1_steps", "stage2_iterations",
                          "stage2_loss_views", "refine_steps", "holdout_every"}) {
        at_least(k, 0);
    }
    for (const auto &c : values_.at("channels")) {
        if (c.get<long>() < 1) throw ValidationError("channels must be positive");
    }
    if (get<double>("eval_crop_margin") < 0.0) throw ValidationError("eval_crop_margin must be non-negative");
}

ModelConfig RunConfig::model() const {
    ModelConfig m;
    m.feature_dim = get<int>("feature_dim");
    m.channels = get<std::array<int, kNetLevels>>("channels");
    m.timesteps = get<int>("timesteps");
    m.dense_budget = get<std::int64_t>("dense_budget");
    m.seed = get<std::uint64_t>("seed");
    m.decoder.feature_dim = m.feature_dim;
    m.decoder.hidden = get<int>("decoder_hidden");
    m.decoder.gaussians_per_voxel = get<int>("gaussians_per_voxel");
    m.decoder.voxel_size = get<double>("voxel_size");
    return m;
}

LoopConfig RunConfig::loop() const {
    LoopConfig l;
    l.timesteps = get<int>("timesteps");
    l.densify_base = get<long>("densify_base");
    l.views_per_accum = get<int>("views_per_accum");
    l.seed = get<std::uint64_t>("seed");
    l.use_initializer = get<bool>("use_initializer");
    l.use_densifier = get<bool>("use_densifier");
    return l;
}

Stage1Config RunConfig::stage1() const {
    Stage1Config c;
    c.steps = get<int>("stage1_steps");
    c.views_per_step = get<int>("stage1_views_per_step");
    c.lr = get<double>("stage1_lr");
    c.seed = get<std::uint64_t>("seed");
    return c;
}

Stage2Config RunConfig::stage2() const {
    Stage2Config c;
    c.iterations = get<int>("stage2_iterations");
    c.loss_views = get<int>("stage2_loss_views");
    c.lr = get<double>("stage2_lr");
    c.loop = loop();
    return c;
}

RefineConfig RunConfig::refine() const {
    RefineConfig r;
    r.steps = get<int>("refine_steps");
    r.center_lr = get<double>("refine_center_lr");
    r.scale_lr = get<double>("refine_scale_lr");
    r.rotation_lr = get<double>("refine_rotation_lr");
    r.opacity_lr = get<double>("refine_opacity_lr");
    r.color_lr = get<double>("refine_color_lr");
    return r;
}

EvalOptions RunConfig::eval() const {
    EvalOptions e;
    e.crop_margin = get<double>("eval_crop_margin");
    e.max_edge = get<double>("eval_max_edge");
    return e;
}

} // namespace splatprior::cli
