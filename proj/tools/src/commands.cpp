// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include "commands.hpp"
#include "run_config.hpp"

#include <splatprior/errors.hpp>
#include <splatprior/meshing.hpp>
#include <splatprior/pipeline.hpp>
#include <splatprior/scene_io.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <chrono>
#include <fstream>
#include <optional>
#include <ostream>

namespace splatprior::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct CommonOptions {
    std::string config_file;
    std::vector<std::string> assignments;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

void add_common(CLI::App &cmd, CommonOptions &o) {
    cmd.add_option("--config", o.config_file, "JSON object with run configuration keys");
    cmd.add_option("--set", o.assignments, "override one key, e.g. --set timesteps=3 (repeatable)");
    cmd.add_option("--seed", o.seed, "shorthand for --set seed=N");
    cmd.add_option("--threads", o.threads, "shorthand for --set threads=N");
}

RunConfig resolve(const CommonOptions &o) {
    RunConfig cfg;
    if (!o.config_file.empty()) cfg.merge_file(o.config_file);
    for (const auto &a : o.assignments) cfg.merge_assignment(a);
    if (o.seed) cfg.set("seed", *o.seed);
    if (o.threads) cfg.set("threads", *o.threads);
    cfg.validate();
#ifdef _OPENMP
    if (const int n = cfg.get<int>("threads"); n > 0) omp_set_num_threads(n);
#endif
    return cfg;
}

std::ofstream open_out(const fs::path &path, std::ios::openmode mode = std::ios::trunc) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::out | mode);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out = open_out(path);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

/// A scene directory itself, or its subdirectories holding scenes, sorted by name.
std::vector<fs::path> scene_dirs(const fs::path &root) {
    if (fs::exists(root / "cameras.json")) return {root};
    std::vector<fs::path> dirs;
    if (fs::is_directory(root)) {
        for (const auto &e : fs::directory_iterator(root)) {
            if (e.is_directory() && fs::exists(e.path() / "cameras.json")) dirs.push_back(e.path());
        }
    }
    if (dirs.empty()) throw MissingAsset("no scene (cameras.json) under " + root.string());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

struct Split {
    std::vector<int> train, eval;
};

Split split(const SceneBundle &scene, const RunConfig &cfg) {
    Split s;
    split_views(scene.views.size(), cfg.get<int>("holdout_every"), s.train, s.eval);
    if (s.eval.empty()) s.eval = s.train;
    if (s.train.empty()) throw EmptyInput("no training views left after the hold-out split");
    return s;
}

std::string depth_file(const View &v) { return fs::path(v.name).stem().string() + ".png"; }

// ---------------------------------------------------------------------------

RoomSpec room_spec_from_file(const fs::path &path) {
    std::ifstream in(path);
    if (!in) throw MissingAsset("cannot open room spec " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception &e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ValidationError("room spec must be a JSON object");
    RoomSpec s;
    try {
        for (const auto &[key, v] : j.items()) {
            if (key == "dimensions") {
                const auto d = v.get<std::array<double, 3>>();
                s.dimensions = Vec3(d[0], d[1], d[2]);
            } else if (key == "object_count") {
                s.object_count = v.get<int>();
            } else if (key == "camera_count") {
                s.camera_count = v.get<int>();
            } else if (key == "image_width") {
                s.image_width = v.get<int>();
            } else if (key == "image_height") {
                s.image_height = v.get<int>();
            } else if (key == "noise") {
                s.noise = v.get<double>();
            } else if (key == "texture_threshold") {
                s.texture_threshold = v.get<double>();
            } else if (key == "sample_density") {
                s.sample_density = v.get<double>();
            } else if (key == "horizontal_fov_deg") {
                s.horizontal_fov_deg = v.get<double>();
            } else if (key == "seed") {
                s.seed = v.get<std::uint64_t>();
            } else {
                throw ValidationError("unknown room spec key '" + key + "'");
            }
        }
    } catch (const json::exception &e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return s;
}

int gen_scene(const fs::path &spec_path, const fs::path &out_dir, std::optional<std::uint64_t> seed, std::ostream &out) {
    RoomSpec spec = room_spec_from_file(spec_path);
    if (seed) spec.seed = *seed;
    const SceneBundle scene = generate_synthetic_room(spec);
    save_scene(scene, out_dir);
    out << fmt::format("wrote {} views, {} points, {} mesh triangles to {}\n", scene.views.size(), scene.points.size(),
                       scene.gt_mesh ? scene.gt_mesh->faces.size() : 0, out_dir.string());
    return kOk;
}

// ---------------------------------------------------------------------------

const char *kResumeDir = "resume";

void write_resume(const fs::path &out_dir, const Model &model, const TrainProgress &progress, int stage) {
    const fs::path tmp = out_dir / "resume.tmp", dst = out_dir / kResumeDir;
    fs::remove_all(tmp);
    save_model(model, tmp);
    save_adam(progress.adam, tmp / "adam.bin");
    ordered_json j;
    j["stage"] = stage;
    j["step"] = progress.step;
    j["rng"] = progress.rng_state();
    write_text(tmp / "progress.json", j.dump() + "\n");
    fs::remove_all(dst);
    fs::rename(tmp, dst);
}

// Restores model and progress from out_dir/resume when it belongs to `stage`.
bool read_resume(const fs::path &out_dir, int stage, std::optional<Model> &model, TrainProgress &progress) {
    const fs::path dir = out_dir / kResumeDir;
    std::ifstream in(dir / "progress.json");
    if (!in) return false;
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception &e) {
        throw ParseError((dir / "progress.json").string() + ": " + e.what());
    }
    if (j.at("stage").get<int>() != stage) return false;
    model.emplace(load_model(dir));
    progress.adam = load_adam(dir / "adam.bin");
    progress.step = j.at("step").get<long>();
    progress.set_rng_state(j.at("rng").get<std::string>());
    return true;
}

// Keeps the records of steps before `step` so a resumed log reads as one run.
void truncate_log(const fs::path &path, long step) {
    std::ifstream in(path);
    std::string kept, line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (LossReport::from_json_line(line).step < step) kept += line + "\n";
    }
    in.close();
    write_text(path, kept);
}

struct TrainArgs {
    int stage = 1;
    std::string scenes, out, init;
    std::optional<int> steps;
    bool resume = false;
};

int train(const TrainArgs &a, const RunConfig &cfg, std::ostream &out) {
    if (a.stage != 1 && a.stage != 2) throw ValidationError("--stage must be 1 or 2");
    const fs::path out_dir = a.out;
    std::optional<Model> model;
    TrainProgress progress;
    const bool resumed = a.resume && read_resume(out_dir, a.stage, model, progress);
    if (!resumed) {
        if (a.stage == 1) {
            model.emplace(cfg.model());
        } else {
            if (a.init.empty()) throw MissingAsset("stage 2 needs the stage-1 checkpoint (--init)");
            model.emplace(load_model(a.init));
        }
        progress.adam.lr = a.stage == 1 ? cfg.get<double>("stage1_lr") : cfg.get<double>("stage2_lr");
        progress.rng.seed(cfg.get<std::uint64_t>("seed"));
    }

    std::vector<PreparedScene> scenes;
    for (const auto &dir : scene_dirs(a.scenes)) {
        const SceneBundle bundle = load_scene(dir);
        scenes.push_back(prepare_scene(bundle, split(bundle, cfg).train, model->config.decoder.voxel_size));
    }

    const fs::path log_path = out_dir / fmt::format("train_stage{}.log", a.stage);
    if (resumed) {
        truncate_log(log_path, progress.step);
    } else {
        write_text(log_path, "");
    }
    std::ofstream log = open_out(log_path, std::ios::app);
    const long every = cfg.get<long>("checkpoint_every");
    std::vector<LossReport> history;
    if (a.stage == 1) {
        Stage1Config c = cfg.stage1();
        if (a.steps) c.steps = *a.steps;
        const ProgressHook hook = [&](const TrainProgress &p) {
            log.flush();
            if (p.step % every == 0 || p.step == c.steps) write_resume(out_dir, *model, p, 1);
        };
        history = train_stage1(scenes, *model, c, progress, &log, hook);
    } else {
        Stage2Config c = cfg.stage2();
        if (a.steps) c.iterations = *a.steps;
        const ProgressHook hook = [&](const TrainProgress &p) {
            log.flush();
            if (p.step % every == 0 || p.step == c.iterations) write_resume(out_dir, *model, p, 2);
        };
        history = train_stage2(scenes, *model, c, progress, &log, hook);
    }
    save_model(*model, out_dir);
    write_text(out_dir / "run_config.json", cfg.values().dump(2) + "\n");
    out << fmt::format("stage {}: {} records, checkpoint in {}\n", a.stage, history.size(), out_dir.string());
    if (!history.empty()) out << "last: " << history.back().to_json_line() << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct ReconstructArgs {
    std::string scene, checkpoint, out;
    std::optional<int> refine;
};

std::string log_line(LossReport r) {
    r.wall_time = 0.0; // run logs stay byte-identical across runs
    return r.to_json_line();
}

int reconstruct(const ReconstructArgs &a, RunConfig cfg, std::ostream &out) {
    if (a.refine) cfg.set("refine_steps", *a.refine);
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const SceneBundle scene = load_scene(a.scene);
    const Model model = load_model(a.checkpoint);
    const Split s = split(scene, cfg);
    const PreparedScene prepared = prepare_scene(scene, s.train, model.config.decoder.voxel_size);

    const fs::path out_dir = a.out;
    std::ofstream log = open_out(out_dir / "run.log");
    ordered_json header;
    header["event"] = "config";
    header["config"] = cfg.values();
    header["train_views"] = s.train;
    header["eval_views"] = s.eval;
    log << header.dump() << "\n";

    const LoopState state = run_loop(prepared, model, cfg.loop());
    for (const auto &e : state.trace) {
        ordered_json j;
        j["event"] = "trace";
        j["t"] = e.timestep;
        j["op"] = e.op;
        j["count"] = e.count;
        log << j.dump() << "\n";
    }
    for (const auto &r : state.history) log << log_line(r) << "\n";

    const std::vector<Gaussian2D> decoded = decode(state.grid, model.decoder).gaussians;
    std::vector<LossReport> refine_history;
    const std::vector<Gaussian2D> gaussians = sgd_refine(decoded, prepared.views, cfg.refine(), &refine_history);
    for (const auto &r : refine_history) {
        if (!std::isfinite(r.total)) throw NumericalError(fmt::format("non-finite refinement loss at step {}", r.step));
    }
    for (const auto &r : refine_history) log << log_line(r) << "\n";
    ordered_json counts;
    counts["event"] = "gaussians";
    counts["voxels"] = state.grid.size();
    counts["before_refine"] = decoded.size();
    counts["after_refine"] = gaussians.size();
    log << counts.dump() << "\n";

    const TriangleMesh mesh = extract_mesh(gaussians, prepared.views, scene.bbox, cfg.get<double>("tsdf_voxel"),
                                           cfg.get<double>("tsdf_truncation"));
    std::vector<View> eval_views;
    std::vector<Image> depths;
    for (int i : s.eval) {
        const View &v = scene.views[static_cast<std::size_t>(i)];
        eval_views.push_back(v);
        depths.push_back(render(gaussians, v).depth);
    }
    const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    save_mesh(mesh, out_dir / "mesh.ply");
    fs::create_directories(out_dir / "depth");
    for (std::size_t i = 0; i < eval_views.size(); ++i) {
        write_depth_png(out_dir / "depth" / depth_file(eval_views[i]), depths[i]);
    }
    ordered_json report;
    report["refine_steps"] = cfg.get<int>("refine_steps");
    report["voxels"] = state.grid.size();
    report["gaussians"] = gaussians.size();
    report["mesh_vertices"] = mesh.vertices.size();
    report["mesh_faces"] = mesh.faces.size();
    if (scene.gt_mesh && !scene.gt_mesh->empty() && std::all_of(eval_views.begin(), eval_views.end(),
                                                                 [](const View &v) { return v.has_depth(); })) {
        EvalReport r = evaluate(mesh, depths, eval_views, scene, cfg.eval());
        r.runtime = runtime;
        report["metrics"] = json::parse(r.to_json());
        out << r.table();
    } else {
        report["metrics"] = nullptr;
    }
    report["runtime"] = runtime;
    write_text(out_dir / "eval.json", report.dump(2) + "\n");
    log << json{{"event", "done"}, {"mesh_faces", mesh.faces.size()}}.dump() << "\n";
    out << fmt::format("{} Gaussians, mesh with {} faces, {:.1f} s; outputs in {}\n", gaussians.size(),
                       mesh.faces.size(), runtime, out_dir.string());
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string scene, mesh, depths, out;
};

int eval(const EvalArgs &a, const RunConfig &cfg, std::ostream &out) {
    const SceneBundle scene = load_scene(a.scene);
    const Split s = split(scene, cfg);
    const TriangleMesh mesh = load_mesh(a.mesh);
    std::vector<View> views;
    std::vector<Image> depths;
    for (int i : s.eval) {
        const View &v = scene.views[static_cast<std::size_t>(i)];
        const fs::path p = fs::path(a.depths) / depth_file(v);
        if (!fs::exists(p)) throw MissingAsset("missing predicted depth " + p.string());
        views.push_back(v);
        depths.push_back(read_depth_png(p));
    }
    const EvalReport r = evaluate(mesh, depths, views, scene, cfg.eval());
    out << r.table();
    if (!a.out.empty()) write_text(a.out, r.to_json() + "\n");
    return kOk;
}

int exit_code_of(const std::exception &e) {
    if (dynamic_cast<const NumericalError *>(&e)) return kNumerical;
    if (dynamic_cast<const MissingAsset *>(&e) || dynamic_cast<const MissingGroundTruth *>(&e) ||
        dynamic_cast<const CheckpointMismatch *>(&e)) {
        return kMissingArtifact;
    }
    if (dynamic_cast<const ValidationError *>(&e) || dynamic_cast<const ParseError *>(&e) ||
        dynamic_cast<const ShapeError *>(&e) || dynamic_cast<const EmptyInput *>(&e) ||
        dynamic_cast<const KeyError *>(&e) || dynamic_cast<const BudgetExceeded *>(&e)) {
        return kInvalid;
    }
    return kFailure;
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"splatprior: sparse-voxel splat reconstruction with learned densification and optimization"};
    app.footer(RunConfig::describe() +
               "\nExit codes: 0 ok, 2 invalid input, 3 missing artifact, 4 non-finite numbers, 1 other failure.");
    app.require_subcommand(1);

    std::string spec_path, scene_out;
    std::optional<std::uint64_t> gen_seed;
    CLI::App *gen = app.add_subcommand("gen-scene", "generate a synthetic room scene directory");
    gen->add_option("--spec", spec_path, "room spec JSON (dimensions, object_count, camera_count, ...)")->required();
    gen->add_option("--out", scene_out, "output scene directory")->required();
    gen->add_option("--seed", gen_seed, "overrides the seed in the room description");

    TrainArgs ta;
    CommonOptions train_opts;
    CLI::App *tr = app.add_subcommand("train", "train stage 1 (initializer, decoder) or stage 2 (densifier, optimizer)");
    tr->add_option("--stage", ta.stage, "1 or 2")->required();
    tr->add_option("--scenes", ta.scenes, "a scene directory or a directory of scenes")->required();
    tr->add_option("--out", ta.out, "checkpoint directory")->required();
    tr->add_option("--init", ta.init, "stage-1 checkpoint to start stage 2 from");
    tr->add_option("--steps", ta.steps, "overrides stage1_steps or stage2_iterations");
    tr->add_flag("--resume", ta.resume, "continue from the last checkpoint in --out");
    add_common(*tr, train_opts);

    ReconstructArgs ra;
    CommonOptions rec_opts;
    CLI::App *rec = app.add_subcommand("reconstruct", "run the loop, refine, fuse a mesh and evaluate");
    rec->add_option("--scene", ra.scene, "scene directory")->required();
    rec->add_option("--checkpoint", ra.checkpoint, "trained checkpoint directory")->required();
    rec->add_option("--out", ra.out, "output directory")->required();
    rec->add_option("--refine", ra.refine, "refinement steps, 0 skips refinement (overrides refine_steps)");
    add_common(*rec, rec_opts);

    EvalArgs ea;
    CommonOptions eval_opts;
    CLI::App *ev = app.add_subcommand("eval", "score a mesh and depth renders against the scene ground truth");
    ev->add_option("--scene", ea.scene, "scene directory")->required();
    ev->add_option("--mesh", ea.mesh, "predicted mesh.ply")->required();
    ev->add_option("--depths", ea.depths, "directory of predicted depth PNGs named after the views")->required();
    ev->add_option("--out", ea.out, "write the report as JSON here");
    add_common(*ev, eval_opts);

    std::vector<const char *> argv;
    for (const auto &a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kInvalid;
    }

    try {
        if (*gen) return gen_scene(spec_path, scene_out, gen_seed, out);
        if (*tr) return train(ta, resolve(train_opts), out);
        if (*rec) return reconstruct(ra, resolve(rec_opts), out);
        if (*ev) return eval(ea, resolve(eval_opts), out);
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return exit_code_of(e);
    }
    return kFailure;
}

} // namespace splatprior::cli
