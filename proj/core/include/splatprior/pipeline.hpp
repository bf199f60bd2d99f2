// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <splatprior/autodiff.hpp>
#include <splatprior/bvh.hpp>
#include <splatprior/losses.hpp>
#include <splatprior/nets.hpp>
#include <splatprior/renderer.hpp>
#include <splatprior/scene_io.hpp>
#include <splatprior/splat_model.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace splatprior {

struct LoopConfig {
    int timesteps = 5;          // T
    long densify_base = 20000;  // s
    int views_per_accum = 100;  // 0 uses every view
    std::uint64_t seed = 0;
    bool use_initializer = true;
    bool use_densifier = true;

    /// Laptop-scale defaults: s = 2000 and every available view.
    static LoopConfig desk();
    void validate() const;
    /// n(t) = floor(s / 2^t).
    std::size_t budget(int t) const;
};

struct TraceEvent {
    int timestep = -1;
    std::string op;
    std::size_t count = 0;
};

struct LoopState {
    int t = 0;
    SparseGrid grid;
    GradBuffer grad;
    std::vector<LossReport> history;    // one record per timestep, measured on G_t
    std::vector<TraceEvent> trace;
    std::vector<std::size_t> voxel_counts; // |G_t| for t = 0..T
    std::vector<std::size_t> selected;     // |selected_t| per timestep
    std::vector<bool> zero_new_rows;       // gradient rows of densified voxels were exactly zero
};

struct ModelConfig {
    int feature_dim = 64;
    std::array<int, kNetLevels> channels{32, 64, 96, 128};
    int timesteps = 5;
    DecoderConfig decoder;
    std::int64_t dense_budget = 1 << 16;
    std::uint64_t seed = 0;

    NetConfig initializer() const;
    NetConfig densifier() const;
    NetConfig optimizer() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string &text);
};

struct Model {
    ModelConfig config;
    InitializerNet initializer;
    DensifierNet densifier;
    OptimizerNet optimizer;
    DecoderParams decoder;

    explicit Model(const ModelConfig &config);
};

/// Checkpoint directory: model.json, stage1/{initializer,decoder}.bin and
/// stage2/{densifier,optimizer}.bin.
void save_model(const Model &model, const std::filesystem::path &dir);
/// Throws MissingAsset for absent files and CheckpointMismatch on architecture drift.
Model load_model(const std::filesystem::path &dir);

/// Views of a scene used for training or reconstruction with ground truth
/// derived once: the SfM grid and the GT key pyramid.
struct PreparedScene {
    std::vector<View> views;
    std::vector<SfMPoint> points;
    Bbox bbox;
    SparseGrid sfm_grid;
    KeyPyramid gt;
    std::shared_ptr<const TriangleBvh> mesh;
};

PreparedScene prepare_scene(const SceneBundle &scene, const std::vector<int> &view_ids, double voxel_size);

// ---------------------------------------------------------------------------

/// Scene loss as a tape node: decodes the voxels, renders every view and
/// returns w_c L_c + w_d L_d + w_n L_n + w_dist L_dist with each term averaged
/// over views. Decoder parameters are differentiable when `train_decoder` is set.
Var scene_loss(Tape &t, const SparseGrid &layout, Var features, Var occupancy, DecoderParams &decoder,
               bool train_decoder, const std::vector<const View *> &views, const LossWeights &weights,
               const TriangleBvh *mesh, LossReport *report = nullptr, const RenderSettings &settings = {});

struct Accumulated {
    GradBuffer grad;
    LossReport report; // view-averaged L_c, L_d and L_dist of the current state
};

/// Sum over views of dL_c/dG, visiting views in the given order.
Accumulated accumulate_gradients(const SparseGrid &grid, const DecoderParams &decoder,
                                 const std::vector<const View *> &views, std::vector<TraceEvent> *trace = nullptr,
                                 int timestep = -1);

enum class SampleMode { Train, Inference };

/// Indices into `occupancy` of the selected candidates, ascending.
std::vector<int> importance_sample(const std::vector<VoxelKey> &keys, const std::vector<double> &occupancy, int t,
                                   const LoopConfig &config, SampleMode mode, std::mt19937_64 &rng);

/// Deterministic strided subset of at most `count` views for timestep t.
std::vector<const View *> accumulation_views(const std::vector<View> &views, int count, int t);

/// G_0 from the initializer, or from the raw SfM grid when the initializer is disabled.
SparseGrid initial_grid(const PreparedScene &scene, const Model &model, const LoopConfig &config);

/// Densification-optimization loop in inference mode.
LoopState run_loop(const PreparedScene &scene, const Model &model, const LoopConfig &config);
/// Loop continuing from an explicit G_0.
LoopState run_loop_from(SparseGrid g0, const std::vector<View> &views, const Model &model, const LoopConfig &config);

struct RefineConfig {
    int steps = 2000;
    double center_lr = 1.6e-4; // multiplied by the scene extent
    double scale_lr = 5e-3;
    double rotation_lr = 1e-3;
    double opacity_lr = 5e-2;
    double color_lr = 2.5e-3;
};

/// Radius of the camera centers around their mean, times 1.1.
double scene_extent(const std::vector<View> &views);

/// Adam on decoded Gaussian attributes, one view per step in cyclic order.
std::vector<Gaussian2D> sgd_refine(std::vector<Gaussian2D> gaussians, const std::vector<View> &views,
                                   const RefineConfig &config, std::vector<LossReport> *history = nullptr);

// ---------------------------------------------------------------------------

struct Stage1Config {
    int steps = 1000;
    int views_per_step = 1;
    double lr = 1e-4;
    std::uint64_t seed = 0;
};

struct Stage2Config {
    int iterations = 100;     // loop unrolls per scene
    int loss_views = 0;       // views per timestep loss, 0 uses every view
    double lr = 1e-4;
    LoopConfig loop = LoopConfig::desk();
};

/// One stage-1 step on the given views: adds the gradients of the stage-1 loss
/// to the initializer and decoder parameters and returns the loss terms.
LossReport stage1_step(const PreparedScene &scene, Model &model, const std::vector<const View *> &views);

struct Stage2Step {
    SparseGrid next; // G_{t+1}, detached
    LossReport report;
};

/// One timestep of stage 2 from a detached state: densify, update, and add the
/// gradients of the timestep loss to the densifier and optimizer parameters.
Stage2Step stage2_timestep(const PreparedScene &scene, Model &model, const SparseGrid &grid, int t,
                           const Stage2Config &config, std::mt19937_64 &rng, long iteration = 0);

/// Resumable position of a training run: the next step (stage 1) or iteration
/// (stage 2), the Adam moments and the sampling generator.
struct TrainProgress {
    long step = 0;
    AdamState adam;
    std::mt19937_64 rng;

    std::string rng_state() const;
    void set_rng_state(const std::string &text);
};

/// Called after every completed step with the progress to resume from.
using ProgressHook = std::function<void(const TrainProgress &)>;

/// Trains the initializer and decoder; returns one record per step.
std::vector<LossReport> train_stage1(const std::vector<PreparedScene> &scenes, Model &model,
                                     const Stage1Config &config, std::ostream *log = nullptr);
/// Continues from `progress` up to config.steps.
std::vector<LossReport> train_stage1(const std::vector<PreparedScene> &scenes, Model &model,
                                     const Stage1Config &config, TrainProgress &progress, std::ostream *log,
                                     const ProgressHook &hook = {});

/// Trains the densifier and optimizer with the initializer and decoder frozen;
/// returns one record per timestep of every iteration.
std::vector<LossReport> train_stage2(const std::vector<PreparedScene> &scenes, Model &model,
                                     const Stage2Config &config, std::ostream *log = nullptr);
std::vector<LossReport> train_stage2(const std::vector<PreparedScene> &scenes, Model &model,
                                     const Stage2Config &config, TrainProgress &progress, std::ostream *log,
                                     const ProgressHook &hook = {});

} // namespace splatprior
