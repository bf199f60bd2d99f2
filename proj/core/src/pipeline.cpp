// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/errors.hpp>
#include <splatprior/pipeline.hpp>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace splatprior {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

Image scaled(const Image &img, double s) {
    Image out = img;
    for (double &v : out.data) v *= s;
    return out;
}

std::vector<double> scaled(const std::vector<double> &v, double s) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * s;
    return out;
}

Matrix column(const std::vector<double> &v) {
    Matrix m(static_cast<Eigen::Index>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
    return m;
}

/// A grid with the given slot order and values, indexed for lookups.
SparseGrid make_grid(const SparseGrid &like, std::vector<VoxelKey> keys, Matrix features, const Matrix &occupancy) {
    SparseGrid g;
    g.edge = like.edge;
    g.level = like.level;
    g.frame = like.frame;
    g.keys = std::move(keys);
    g.features = std::move(features);
    g.occupancy.assign(occupancy.data(), occupancy.data() + occupancy.size());
    g.reindex();
    return g;
}

void check_finite(double v, const char *what) {
    if (!std::isfinite(v)) throw NumericalError(fmt::format("{} became non-finite", what));
}

/// Per-view pixel gradients of the weighted losses for a unit upstream gradient.
struct ViewTerms {
    RenderOutput render;
    PixelGrads grads;
    double color = 0.0;
    double depth = 0.0;
    double distortion = 0.0;
    bool has_depth = false;
};

ViewTerms view_terms(const std::vector<Gaussian2D> &gaussians, const View &view, const RenderSettings &settings,
                     double w_color, double w_depth, double w_dist) {
    ViewTerms v;
    v.render = render(gaussians, view, settings);
    const ImageLoss lc = rendering_loss(v.render.color, view.image);
    v.color = lc.value;
    if (w_color != 0.0) v.grads.color = scaled(lc.grad, w_color);
    if (view.has_depth()) {
        const DepthLoss ld = depth_loss(v.render.depth, view.gt_depth);
        if (!ld.empty_mask) {
            v.has_depth = true;
            v.depth = ld.value;
            if (w_depth != 0.0) v.grads.depth = scaled(ld.grad, w_depth);
        }
    }
    const DistortionLoss dist = distortion_loss(v.render);
    v.distortion = dist.value;
    if (w_dist != 0.0) {
        v.grads.fragment_weight = scaled(dist.weight_grad, w_dist);
        v.grads.fragment_depth = scaled(dist.depth_grad, w_dist);
    }
    return v;
}

PixelGrads scaled(const PixelGrads &g, double s) {
    PixelGrads out;
    if (!g.color.empty()) out.color = scaled(g.color, s);
    if (!g.depth.empty()) out.depth = scaled(g.depth, s);
    if (!g.normal.empty()) out.normal = scaled(g.normal, s);
    if (!g.alpha.empty()) out.alpha = scaled(g.alpha, s);
    out.fragment_weight = scaled(g.fragment_weight, s);
    out.fragment_depth = scaled(g.fragment_depth, s);
    return out;
}

} // namespace

// ---------------------------------------------------------------------------

LoopConfig LoopConfig::desk() {
    LoopConfig c;
    c.densify_base = 2000;
    c.views_per_accum = 0;
    return c;
}

void LoopConfig::validate() const {
    if (timesteps < 1) throw ValidationError("T must be at least 1");
    if (densify_base < 0) throw ValidationError("s must be non-negative");
    if (views_per_accum < 0) throw ValidationError("views_per_accum must be non-negative");
}

std::size_t LoopConfig::budget(int t) const {
    if (t < 0) throw ValidationError("negative timestep");
    if (t >= 63) return 0;
    return static_cast<std::size_t>(densify_base >> t);
}

// ---------------------------------------------------------------------------

NetConfig ModelConfig::initializer() const {
    NetConfig c = initializer_config(feature_dim);
    c.channels = channels;
    c.dense_budget = dense_budget;
    return c;
}

NetConfig ModelConfig::densifier() const {
    NetConfig c = densifier_config(feature_dim, timesteps);
    c.channels = channels;
    return c;
}

NetConfig ModelConfig::optimizer() const {
    NetConfig c = optimizer_config(feature_dim, timesteps);
    c.channels = channels;
    return c;
}

std::string ModelConfig::to_json() const {
    nlohmann::ordered_json j;
    j["feature_dim"] = feature_dim;
    j["channels"] = channels;
    j["timesteps"] = timesteps;
    j["dense_budget"] = dense_budget;
    j["seed"] = seed;
    j["decoder"] = {{"hidden", decoder.hidden},
                    {"gaussians_per_voxel", decoder.gaussians_per_voxel},
                    {"voxel_size", decoder.voxel_size},
                    {"leaky_slope", decoder.leaky_slope}};
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string &text) {
    ModelConfig c;
    try {
        const auto j = nlohmann::json::parse(text);
        c.feature_dim = j.at("feature_dim").get<int>();
        c.channels = j.at("channels").get<std::array<int, kNetLevels>>();
        c.timesteps = j.at("timesteps").get<int>();
        c.dense_budget = j.at("dense_budget").get<std::int64_t>();
        c.seed = j.at("seed").get<std::uint64_t>();
        const auto &d = j.at("decoder");
        c.decoder.feature_dim = c.feature_dim;
        c.decoder.hidden = d.at("hidden").get<int>();
        c.decoder.gaussians_per_voxel = d.at("gaussians_per_voxel").get<int>();
        c.decoder.voxel_size = d.at("voxel_size").get<double>();
        c.decoder.leaky_slope = d.at("leaky_slope").get<double>();
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    return c;
}

namespace {

const ModelConfig &checked(const ModelConfig &c) {
    if (c.decoder.feature_dim != c.feature_dim) {
        throw ValidationError("decoder feature width must equal the latent feature width");
    }
    if (c.timesteps < 1) throw ValidationError("timesteps must be at least 1");
    return c;
}

} // namespace

Model::Model(const ModelConfig &cfg)
    : config(checked(cfg)), initializer(cfg.initializer(), cfg.seed * 4 + 1), densifier(cfg.densifier(), cfg.seed * 4 + 2),
      optimizer(cfg.optimizer(), cfg.seed * 4 + 3), decoder(DecoderParams::create(cfg.decoder, cfg.seed * 4 + 4)) {}

void save_model(const Model &model, const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir / "stage1", ec);
    fs::create_directories(dir / "stage2", ec);
    if (ec) throw IoError("cannot create " + dir.string());
    {
        std::ofstream out(dir / "model.json");
        if (!out) throw IoError("cannot write " + (dir / "model.json").string());
        out << model.config.to_json() << "\n";
    }
    save_net(model.initializer, "initializer", dir / "stage1" / "initializer.bin");
    save_decoder(model.decoder, dir / "stage1" / "decoder.bin");
    save_net(model.densifier, "densifier", dir / "stage2" / "densifier.bin");
    save_net(model.optimizer, "optimizer", dir / "stage2" / "optimizer.bin");
}

Model load_model(const fs::path &dir) {
    const fs::path cfg_path = dir / "model.json";
    std::ifstream in(cfg_path);
    if (!in) throw MissingAsset("cannot open " + cfg_path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Model model(ModelConfig::from_json(text));
    for (const char *f : {"stage1/initializer.bin", "stage1/decoder.bin", "stage2/densifier.bin", "stage2/optimizer.bin"}) {
        if (!fs::exists(dir / f)) throw MissingAsset((dir / f).string());
    }
    load_net(model.initializer, "initializer", dir / "stage1" / "initializer.bin");
    load_net(model.densifier, "densifier", dir / "stage2" / "densifier.bin");
    load_net(model.optimizer, "optimizer", dir / "stage2" / "optimizer.bin");
    DecoderParams dec = load_decoder(dir / "stage1" / "decoder.bin");
    const DecoderConfig &a = dec.config, &b = model.config.decoder;
    if (a.feature_dim != b.feature_dim || a.hidden != b.hidden || a.gaussians_per_voxel != b.gaussians_per_voxel ||
        a.voxel_size != b.voxel_size) {
        throw CheckpointMismatch("decoder checkpoint does not match model.json");
    }
    model.decoder = std::move(dec);
    return model;
}

PreparedScene prepare_scene(const SceneBundle &scene, const std::vector<int> &view_ids, double voxel_size) {
    PreparedScene p;
    for (int i : view_ids) {
        if (i < 0 || static_cast<std::size_t>(i) >= scene.views.size()) throw ValidationError("view index out of range");
        p.views.push_back(scene.views[static_cast<std::size_t>(i)]);
    }
    if (p.views.empty()) throw EmptyInput("scene has no views selected");
    p.points = scene.points;
    p.bbox = scene.bbox;
    p.sfm_grid = voxelize_points(scene.points, voxel_size, scene.bbox);
    if (scene.gt_mesh && !scene.gt_mesh->empty()) {
        p.gt = key_pyramid(voxelize_mesh(*scene.gt_mesh, voxel_size));
        p.mesh = std::make_shared<const TriangleBvh>(*scene.gt_mesh);
    }
    return p;
}

// ---------------------------------------------------------------------------

Var scene_loss(Tape &t, const SparseGrid &layout, Var features, Var occupancy, DecoderParams &decoder,
               bool train_decoder, const std::vector<const View *> &views, const LossWeights &w,
               const TriangleBvh *mesh, LossReport *report, const RenderSettings &settings) {
    if (views.empty()) throw EmptyInput("scene loss needs at least one view");
    const Matrix &fv = t.value(features), &ov = t.value(occupancy);
    if (fv.rows() != static_cast<Eigen::Index>(layout.size()) || ov.size() != fv.rows()) {
        throw ShapeError("scene loss inputs are not aligned with the layout");
    }
    struct Saved {
        SparseGrid grid;
        DecodedSplats splats;
        std::vector<ViewTerms> terms;
        std::vector<double> view_scale;
        std::vector<Vec4> rotation_grad;
        std::vector<double> opacity_grad;
    };
    auto s = std::make_shared<Saved>();
    s->grid = make_grid(layout, layout.keys, fv, ov);
    s->splats = decode(s->grid, decoder);
    const double nv = static_cast<double>(views.size());
    std::size_t nd = 0;
    s->terms.resize(views.size());
    for (std::size_t i = 0; i < views.size(); ++i) {
        s->terms[i] = view_terms(s->splats.gaussians, *views[i], settings, w.color / nv, w.depth, w.distortion / nv);
        nd += s->terms[i].has_depth;
    }
    LossReport rep;
    for (auto &vt : s->terms) {
        rep.color += vt.color / nv;
        rep.distortion += vt.distortion / nv;
        if (vt.has_depth) {
            rep.depth += vt.depth / static_cast<double>(nd);
            vt.grads.depth = scaled(vt.grads.depth, 1.0 / static_cast<double>(nd));
        } else {
            vt.grads.depth = Image();
        }
    }
    if (mesh && w.normal != 0.0 && !s->splats.gaussians.empty()) {
        const NormalLoss nl = normal_loss(s->splats.gaussians, *mesh);
        rep.normal = nl.value;
        s->rotation_grad = nl.rotation_grad;
        for (auto &g : s->rotation_grad) g *= w.normal;
        s->opacity_grad = nl.opacity_grad;
        for (auto &g : s->opacity_grad) g *= w.normal;
    }
    rep.voxels = layout.size();
    rep.gaussians = s->splats.gaussians.size();
    rep.total = w.color * rep.color + w.depth * rep.depth + w.normal * rep.normal + w.distortion * rep.distortion;
    check_finite(rep.total, "scene loss");
    if (report) *report = rep;

    std::vector<Var> parents{features, occupancy};
    std::vector<Var> dec_vars;
    if (train_decoder) {
        for (auto *p : decoder.parameters()) dec_vars.push_back(t.param(*p));
        parents.insert(parents.end(), dec_vars.begin(), dec_vars.end());
    }
    Matrix value(1, 1);
    value(0, 0) = rep.total;
    const DecoderParams *dec = &decoder;
    const std::vector<const View *> view_list = views;
    return t.push(std::move(value), parents, [s, features, occupancy, dec_vars, dec, view_list](Tape &t, int self) {
        const double g = t.grad(self)(0, 0);
        GaussianGrads total(s->splats.gaussians.size());
        for (std::size_t i = 0; i < view_list.size(); ++i) {
            const PixelGrads pg = scaled(s->terms[i].grads, g);
            const GaussianGrads gg = render_backward(s->splats.gaussians, *view_list[i], s->terms[i].render, pg);
            for (std::size_t k = 0; k < gg.size(); ++k) total[k] += gg[k];
        }
        for (std::size_t k = 0; k < s->rotation_grad.size(); ++k) {
            total[k].rotation += g * s->rotation_grad[k];
            total[k].opacity += g * s->opacity_grad[k];
        }
        const DecoderGrads dg = decode_backward(s->grid, *dec, total);
        if (t.requires_grad(features)) t.grad(features) += dg.features.values;
        if (t.requires_grad(occupancy)) {
            Matrix &go = t.grad(occupancy);
            for (std::size_t k = 0; k < dg.occupancy.size(); ++k) go.data()[k] += dg.occupancy[k];
        }
        for (std::size_t k = 0; k < dec_vars.size(); ++k) t.grad(dec_vars[k]) += dg.params[k];
    });
}

Accumulated accumulate_gradients(const SparseGrid &grid, const DecoderParams &decoder,
                                 const std::vector<const View *> &views, std::vector<TraceEvent> *trace,
                                 int timestep) {
    if (views.empty()) throw EmptyInput("gradient accumulation needs at least one view");
    const DecodedSplats splats = decode(grid, decoder);
    const std::size_t n = views.size();
    std::vector<GaussianGrads> per_view(n);
    std::vector<ViewTerms> terms(n);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        terms[i] = view_terms(splats.gaussians, *views[i], {}, 1.0, 0.0, 0.0);
        per_view[i] = render_backward(splats.gaussians, *views[i], terms[i].render, terms[i].grads);
        terms[i].render = RenderOutput();
    }
    GaussianGrads total(splats.gaussians.size());
    Accumulated out;
    std::size_t nd = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (trace) trace->push_back({timestep, "render_loss", i});
        for (std::size_t k = 0; k < total.size(); ++k) total[k] += per_view[i][k];
        if (trace) trace->push_back({timestep, "accumulate", i});
        out.report.color += terms[i].color / static_cast<double>(n);
        out.report.distortion += terms[i].distortion / static_cast<double>(n);
        if (terms[i].has_depth) {
            out.report.depth += terms[i].depth;
            ++nd;
        }
    }
    if (nd > 0) out.report.depth /= static_cast<double>(nd);
    out.report.voxels = grid.size();
    out.report.gaussians = splats.gaussians.size();
    out.report.timestep = timestep;
    out.report.total = assemble_stage2(out.report);
    out.grad = decode_backward(grid, decoder, total).features;
    return out;
}

std::vector<int> importance_sample(const std::vector<VoxelKey> &keys, const std::vector<double> &occupancy, int t,
                                   const LoopConfig &config, SampleMode mode, std::mt19937_64 &rng) {
    if (keys.size() != occupancy.size()) throw ShapeError("one occupancy per candidate key is required");
    for (double o : occupancy) {
        if (!(o >= 0.0 && o <= 1.0)) throw ValidationError("candidate occupancy outside [0, 1]");
    }
    const std::size_t n = std::min(config.budget(t), keys.size());
    std::vector<int> order(keys.size());
    std::iota(order.begin(), order.end(), 0);
    if (mode == SampleMode::Inference) {
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (occupancy[a] != occupancy[b]) return occupancy[a] > occupancy[b];
            return keys[a] < keys[b];
        });
        order.resize(n);
    } else {
        // Weighted sampling without replacement: largest log(u) / w wins.
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<double> score(keys.size(), -std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < keys.size(); ++i) {
            const double r = u(rng);
            if (occupancy[i] > 0.0) score[i] = std::log(std::max(r, 1e-300)) / occupancy[i];
        }
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score[a] > score[b]; });
        std::size_t positive = 0;
        for (double o : occupancy) positive += o > 0.0;
        order.resize(std::min(n, positive));
    }
    std::sort(order.begin(), order.end());
    return order;
}

std::vector<const View *> accumulation_views(const std::vector<View> &views, int count, int t) {
    std::vector<const View *> out;
    const std::size_t n = views.size();
    if (count <= 0 || static_cast<std::size_t>(count) >= n) {
        for (const auto &v : views) out.push_back(&v);
        return out;
    }
    const std::size_t stride = n / static_cast<std::size_t>(count);
    const std::size_t offset = static_cast<std::size_t>(std::max(t, 0)) % stride;
    for (int k = 0; k < count; ++k) out.push_back(&views[offset + static_cast<std::size_t>(k) * stride]);
    return out;
}

SparseGrid initial_grid(const PreparedScene &scene, const Model &model, const LoopConfig &config) {
    if (config.use_initializer) return initializer_forward(scene.sfm_grid, model.initializer, scene.bbox).grid;
    const SparseGrid &s = scene.sfm_grid;
    Matrix f = Matrix::Zero(static_cast<Eigen::Index>(s.size()), model.config.feature_dim);
    const Eigen::Index w = std::min<Eigen::Index>(s.width(), f.cols());
    f.leftCols(w) = s.features.leftCols(w);
    SparseGrid g = make_grid(s, s.keys, std::move(f), Matrix::Ones(static_cast<Eigen::Index>(s.size()), 1));
    return g;
}

namespace {

LossReport evaluate_state(const SparseGrid &grid, const DecoderParams &decoder, const std::vector<const View *> &views,
                          int timestep) {
    const DecodedSplats splats = decode(grid, decoder);
    LossReport r;
    std::size_t nd = 0;
    for (const View *v : views) {
        const ViewTerms vt = view_terms(splats.gaussians, *v, {}, 0.0, 0.0, 0.0);
        r.color += vt.color / static_cast<double>(views.size());
        r.distortion += vt.distortion / static_cast<double>(views.size());
        if (vt.has_depth) {
            r.depth += vt.depth;
            ++nd;
        }
    }
    if (nd > 0) r.depth /= static_cast<double>(nd);
    r.timestep = timestep;
    r.voxels = grid.size();
    r.gaussians = splats.gaussians.size();
    r.total = assemble_stage2(r);
    return r;
}

} // namespace

LoopState run_loop_from(SparseGrid g0, const std::vector<View> &views, const Model &model, const LoopConfig &config) {
    config.validate();
    if (config.timesteps > model.config.timesteps) {
        throw ValidationError(fmt::format("loop needs {} timesteps but the networks know {}", config.timesteps,
                                          model.config.timesteps));
    }
    const auto start = Clock::now();
    LoopState st;
    st.grid = std::move(g0);
    st.trace.push_back({-1, "init", st.grid.size()});
    st.voxel_counts.push_back(st.grid.size());
    std::mt19937_64 rng(config.seed);
    for (int t = 0; t < config.timesteps; ++t) {
        try {
            st.trace.push_back({t, "zero_grad", st.grid.size()});
            const auto vs = accumulation_views(views, config.views_per_accum, t);
            Accumulated acc = accumulate_gradients(st.grid, model.decoder, vs, &st.trace, t);
            acc.report.wall_time = seconds_since(start);
            st.history.push_back(acc.report);

            std::vector<VoxelKey> new_keys;
            Matrix new_features(0, st.grid.width());
            std::vector<double> new_occ;
            if (config.use_densifier) {
                const Candidates c = densifier_forward(st.grid, acc.grad, t, model.densifier);
                const auto sel = importance_sample(c.keys, c.occupancy, t, config, SampleMode::Inference, rng);
                new_features.resize(static_cast<Eigen::Index>(sel.size()), c.features.cols());
                for (std::size_t r = 0; r < sel.size(); ++r) {
                    new_keys.push_back(c.keys[sel[r]]);
                    new_features.row(static_cast<Eigen::Index>(r)) = c.features.row(sel[r]);
                    new_occ.push_back(c.occupancy[sel[r]]);
                }
            }
            st.trace.push_back({t, "densify", new_keys.size()});
            st.selected.push_back(new_keys.size());

            const std::size_t old = st.grid.size();
            st.grid.keys.insert(st.grid.keys.end(), new_keys.begin(), new_keys.end());
            st.grid.features.conservativeResize(static_cast<Eigen::Index>(st.grid.keys.size()), Eigen::NoChange);
            st.grid.features.bottomRows(new_features.rows()) = new_features;
            st.grid.occupancy.insert(st.grid.occupancy.end(), new_occ.begin(), new_occ.end());
            st.grid.reindex();
            st.trace.push_back({t, "concatenate", st.grid.size()});

            GradBuffer ext = GradBuffer::zeros(st.grid.size(), st.grid.width());
            ext.values.topRows(static_cast<Eigen::Index>(old)) = acc.grad.values;
            st.zero_new_rows.push_back(ext.values.bottomRows(static_cast<Eigen::Index>(st.grid.size() - old)).cwiseAbs().sum() == 0.0);
            st.trace.push_back({t, "zero_extend_gradients", st.grid.size() - old});

            const Matrix delta = optimizer_forward(st.grid, ext, t, model.optimizer);
            st.trace.push_back({t, "optimize", st.grid.size()});
            st.grid.features += delta;
            if (!st.grid.features.allFinite()) throw NumericalError("latent features became non-finite");
            st.trace.push_back({t, "update", st.grid.size()});
            st.voxel_counts.push_back(st.grid.size());
            st.grad = std::move(ext);
        } catch (const Error &) {
            rethrow_with_context(fmt::format("timestep {}", t));
        }
    }
    std::vector<const View *> all;
    for (const auto &v : views) all.push_back(&v);
    LossReport last = evaluate_state(st.grid, model.decoder, all, config.timesteps);
    last.wall_time = seconds_since(start);
    st.history.push_back(last);
    st.t = config.timesteps;
    return st;
}

LoopState run_loop(const PreparedScene &scene, const Model &model, const LoopConfig &config) {
    return run_loop_from(initial_grid(scene, model, config), scene.views, model, config);
}

// ---------------------------------------------------------------------------

double scene_extent(const std::vector<View> &views) {
    if (views.empty()) return 1.0;
    Vec3 mean = Vec3::Zero();
    for (const auto &v : views) mean += v.pose.camera_center();
    mean /= static_cast<double>(views.size());
    double r = 0.0;
    for (const auto &v : views) r = std::max(r, (v.pose.camera_center() - mean).norm());
    return r > 0.0 ? 1.1 * r : 1.0;
}

namespace {

double logit(double p) {
    p = std::clamp(p, 1e-4, 1.0 - 1e-4);
    return std::log(p / (1.0 - p));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

std::vector<Gaussian2D> sgd_refine(std::vector<Gaussian2D> gaussians, const std::vector<View> &views,
                                   const RefineConfig &config, std::vector<LossReport> *history) {
    if (config.steps <= 0 || gaussians.empty()) return gaussians;
    if (views.empty()) throw EmptyInput("refinement needs at least one view");
    const auto n = static_cast<Eigen::Index>(gaussians.size());
    Parameter center("center", n, 3), scale("log_scale", n, 2), rot("rotation", n, 4), opa("opacity", n, 1),
        col("color", n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Gaussian2D &g = gaussians[static_cast<std::size_t>(i)];
        center.value.row(i) = g.center.transpose();
        scale.value(i, 0) = std::log(std::max(g.scales[0], 1e-8));
        scale.value(i, 1) = std::log(std::max(g.scales[1], 1e-8));
        rot.value.row(i) = g.rotation.transpose();
        opa.value(i, 0) = logit(g.opacity);
        for (int c = 0; c < 3; ++c) col.value(i, c) = logit(g.color[c]);
    }
    const double extent = scene_extent(views);
    AdamState a_center, a_scale, a_rot, a_opa, a_col;
    a_center.lr = config.center_lr * extent;
    a_scale.lr = config.scale_lr;
    a_rot.lr = config.rotation_lr;
    a_opa.lr = config.opacity_lr;
    a_col.lr = config.color_lr;
    auto materialize = [&] {
        for (Eigen::Index i = 0; i < n; ++i) {
            Gaussian2D &g = gaussians[static_cast<std::size_t>(i)];
            g.center = center.value.row(i).transpose();
            g.scales = Vec2(std::exp(scale.value(i, 0)), std::exp(scale.value(i, 1)));
            const Vec4 q = rot.value.row(i).transpose();
            g.rotation = q / std::max(q.norm(), 1e-12);
            g.opacity = sigmoid(opa.value(i, 0));
            for (int c = 0; c < 3; ++c) g.color[c] = sigmoid(col.value(i, c));
        }
    };
    materialize();
    const auto start = Clock::now();
    for (int step = 0; step < config.steps; ++step) {
        const View &view = views[static_cast<std::size_t>(step) % views.size()];
        ViewTerms vt = view_terms(gaussians, view, {}, 1.0, 1.0, 10.0);
        if (!vt.has_depth) vt.grads.depth = Image();
        const GaussianGrads gg = render_backward(gaussians, view, vt.render, vt.grads);
        for (auto *p : {&center, &scale, &rot, &opa, &col}) p->zero_grad();
        for (Eigen::Index i = 0; i < n; ++i) {
            const Gaussian2D &g = gaussians[static_cast<std::size_t>(i)];
            const GaussianGrad &d = gg[static_cast<std::size_t>(i)];
            center.grad.row(i) = d.center.transpose();
            scale.grad(i, 0) = d.scales[0] * g.scales[0];
            scale.grad(i, 1) = d.scales[1] * g.scales[1];
            const Vec4 q = rot.value.row(i).transpose();
            const double qn = std::max(q.norm(), 1e-12);
            const Vec4 qh = q / qn;
            rot.grad.row(i) = ((d.rotation - qh * qh.dot(d.rotation)) / qn).transpose();
            opa.grad(i, 0) = d.opacity * g.opacity * (1.0 - g.opacity);
            for (int c = 0; c < 3; ++c) col.grad(i, c) = d.color[c] * g.color[c] * (1.0 - g.color[c]);
        }
        a_center.update({&center});
        a_scale.update({&scale});
        a_rot.update({&rot});
        a_opa.update({&opa});
        a_col.update({&col});
        materialize();
        if (history) {
            LossReport r;
            r.step = step;
            r.gaussians = gaussians.size();
            r.color = vt.color;
            r.depth = vt.depth;
            r.distortion = vt.distortion;
            r.total = r.color + (vt.has_depth ? r.depth : 0.0) + 10.0 * r.distortion;
            r.wall_time = seconds_since(start);
            history->push_back(r);
        }
    }
    return gaussians;
}

// ---------------------------------------------------------------------------

LossReport stage1_step(const PreparedScene &scene, Model &model, const std::vector<const View *> &views) {
    if (scene.gt.empty() || !scene.mesh) throw MissingGroundTruth("stage 1 needs ground-truth meshes");
    const LossWeights w = LossWeights::stage1();
    Tape t;
    ForwardOptions opts;
    opts.train = true;
    opts.gt = &scene.gt;
    const GeneratorOutput g = model.initializer.forward(t, scene.sfm_grid, scene.bbox, opts);
    const SparseGrid layout = make_grid(scene.sfm_grid, g.keys, Matrix(), Matrix());
    LossReport rep;
    Var render_terms =
        scene_loss(t, layout, g.features, g.occupancy, model.decoder, true, views, w, scene.mesh.get(), &rep);
    Var occ = occupancy_loss_var(t, g.levels, scene.gt);
    Var total = ad::add(t, render_terms, ad::scale(t, occ, w.occupancy));
    rep.occupancy = t.value(occ)(0, 0);
    rep.total = t.value(total)(0, 0);
    check_finite(rep.total, "stage 1 loss");
    t.backward(total);
    return rep;
}

std::string TrainProgress::rng_state() const {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void TrainProgress::set_rng_state(const std::string &text) {
    std::istringstream is(text);
    is >> rng;
    if (!is) throw ValidationError("malformed generator state");
}

std::vector<LossReport> train_stage1(const std::vector<PreparedScene> &scenes, Model &model,
                                     const Stage1Config &config, std::ostream *log) {
    TrainProgress progress;
    progress.adam.lr = config.lr;
    progress.rng.seed(config.seed);
    return train_stage1(scenes, model, config, progress, log);
}

std::vector<LossReport> train_stage1(const std::vector<PreparedScene> &scenes, Model &model,
                                     const Stage1Config &config, TrainProgress &progress, std::ostream *log,
                                     const ProgressHook &hook) {
    if (scenes.empty()) throw EmptyInput("stage 1 needs at least one scene");
    std::vector<Parameter *> params = model.initializer.parameters();
    for (auto *p : model.decoder.parameters()) params.push_back(p);
    std::vector<LossReport> history;
    const auto start = Clock::now();
    for (; progress.step < config.steps; ++progress.step) {
        const long step = progress.step;
        const PreparedScene &scene = scenes[static_cast<std::size_t>(step) % scenes.size()];
        std::vector<const View *> views;
        const int vps = std::max(1, config.views_per_step);
        for (int k = 0; k < vps && k < static_cast<int>(scene.views.size()); ++k) {
            views.push_back(&scene.views[static_cast<std::size_t>(step * vps + k) % scene.views.size()]);
        }
        for (auto *p : params) p->zero_grad();
        LossReport rep = stage1_step(scene, model, views);
        if (!std::isfinite(rep.total)) throw NumericalError(fmt::format("non-finite stage-1 loss at step {}", step));
        progress.adam.update(params);
        rep.step = step;
        rep.wall_time = seconds_since(start);
        history.push_back(rep);
        if (log) *log << rep.to_json_line() << "\n";
        if (hook) {
            TrainProgress next = progress;
            ++next.step;
            hook(next);
        }
    }
    return history;
}

Stage2Step stage2_timestep(const PreparedScene &scene, Model &model, const SparseGrid &grid, int t,
                           const Stage2Config &config, std::mt19937_64 &rng, long iteration) {
    const LoopConfig &loop = config.loop;
    const LossWeights w = LossWeights::stage2();
    const auto acc_views = accumulation_views(scene.views, loop.views_per_accum, t);
    const Accumulated acc = accumulate_gradients(grid, model.decoder, acc_views);
    Tape tape;
    Var feats = tape.constant(grid.features);
    Var occ = tape.constant(column(grid.occupancy));
    std::vector<VoxelKey> keys = grid.keys;
    Var occ_loss;
    if (loop.use_densifier) {
        if (scene.gt.empty()) throw MissingGroundTruth("densifier occupancy supervision needs ground-truth meshes");
        ForwardOptions opts;
        opts.train = true;
        opts.gt = &scene.gt;
        GeneratorOutput d = model.densifier.forward(tape, grid.keys, feats, gradient_input(acc.grad), t, opts);
        const Matrix &dv = tape.value(d.occupancy);
        const std::vector<double> occ_values(dv.data(), dv.data() + dv.size());
        const auto sel = importance_sample(d.keys, occ_values, t, loop, SampleMode::Train, rng);
        for (int r : sel) keys.push_back(d.keys[r]);
        feats = ad::concat_rows(tape, {feats, ad::gather_rows(tape, d.features, sel)});
        occ = ad::concat_rows(tape, {occ, ad::gather_rows(tape, d.occupancy, sel)});
        occ_loss = occupancy_loss_var(tape, d.levels, scene.gt);
    }
    GradBuffer ext = GradBuffer::zeros(keys.size(), grid.width());
    ext.values.topRows(static_cast<Eigen::Index>(grid.size())) = acc.grad.values;
    Var delta = model.optimizer.forward(tape, keys, feats, gradient_input(ext), t, true);
    Var next = ad::add(tape, feats, delta);
    const SparseGrid layout = make_grid(grid, keys, Matrix(), Matrix());
    std::vector<const View *> loss_views;
    const std::size_t nv = scene.views.size();
    const std::size_t lv = config.loss_views <= 0 ? nv : std::min<std::size_t>(config.loss_views, nv);
    const std::size_t base = static_cast<std::size_t>(iteration * loop.timesteps + t) * lv;
    for (std::size_t k = 0; k < lv; ++k) loss_views.push_back(&scene.views[(base + k) % nv]);
    Stage2Step out;
    Var total = scene_loss(tape, layout, next, occ, model.decoder, false, loss_views, w, nullptr, &out.report);
    if (occ_loss.valid()) {
        out.report.occupancy = tape.value(occ_loss)(0, 0);
        total = ad::add(tape, total, occ_loss);
    }
    out.report.total = tape.value(total)(0, 0);
    out.report.timestep = t;
    check_finite(out.report.total, "stage 2 loss");
    tape.backward(total);
    out.next = make_grid(grid, keys, tape.value(next), tape.value(occ));
    return out;
}

std::vector<LossReport> train_stage2(const std::vector<PreparedScene> &scenes, Model &model,
                                     const Stage2Config &config, std::ostream *log) {
    TrainProgress progress;
    progress.adam.lr = config.lr;
    progress.rng.seed(config.loop.seed);
    return train_stage2(scenes, model, config, progress, log);
}

std::vector<LossReport> train_stage2(const std::vector<PreparedScene> &scenes, Model &model,
                                     const Stage2Config &config, TrainProgress &progress, std::ostream *log,
                                     const ProgressHook &hook) {
    if (scenes.empty()) throw EmptyInput("stage 2 needs at least one scene");
    const LoopConfig &loop = config.loop;
    loop.validate();
    std::vector<Parameter *> params = model.optimizer.parameters();
    if (loop.use_densifier) {
        for (auto *p : model.densifier.parameters()) params.push_back(p);
    }
    std::vector<LossReport> history;
    const auto start = Clock::now();
    for (; progress.step < config.iterations; ++progress.step) {
        const long it = progress.step;
        const PreparedScene &scene = scenes[static_cast<std::size_t>(it) % scenes.size()];
        SparseGrid grid = initial_grid(scene, model, loop);
        for (auto *p : params) p->zero_grad();
        for (int t = 0; t < loop.timesteps; ++t) {
            Stage2Step step = stage2_timestep(scene, model, grid, t, config, progress.rng, it);
            if (!std::isfinite(step.report.total)) {
                throw NumericalError(fmt::format("non-finite stage-2 loss at iteration {}, timestep {}", it, t));
            }
            grid = std::move(step.next);
            step.report.step = it;
            step.report.wall_time = seconds_since(start);
            history.push_back(step.report);
            if (log) *log << step.report.to_json_line() << "\n";
        }
        progress.adam.update(params);
        if (hook) {
            TrainProgress next = progress;
            ++next.step;
            hook(next);
        }
    }
    return history;
}

} // namespace splatprior
