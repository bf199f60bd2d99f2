// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <splatprior/autodiff.hpp>
#include <splatprior/parameter.hpp>
#include <splatprior/voxel_grid.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace splatprior {

inline constexpr int kNetLevels = 4;

struct NetConfig {
    int input_width = kDescriptorWidth;     // per-voxel input channels before the time embedding
    int feature_dim = 64;                   // latent width F of the output features
    std::array<int, kNetLevels> channels{32, 64, 96, 128};
    int time_dim = 0;                       // 0 disables timestep conditioning
    int timesteps = 5;
    int dense_blocks = 0;                   // residual blocks on the dense coarsest grid
    std::int64_t dense_budget = 1 << 16;    // cell limit of the dense coarsest grid
    int coarse_dilation = 0;                // sparse growth radius at the coarsest level
    double leaky_slope = 0.01;
    double output_gain = 0.1;               // init gain of the output layer
    double occupancy_prior = 0.5;           // initial finest-level occupancy, set through its bias

    /// Channels at level l in [0, kNetLevels]; the coarsest level reuses the last entry.
    int level_channels(int level) const { return channels[std::min(level, kNetLevels - 1)]; }
    /// Canonical text of every field; its hash guards checkpoints.
    std::string describe() const;
    std::uint64_t hash() const;
    void validate() const;
};

NetConfig initializer_config(int feature_dim = 64);
NetConfig densifier_config(int feature_dim = 64, int timesteps = 5);
NetConfig optimizer_config(int feature_dim = 64, int timesteps = 5);

/// Sorted keys at levels 0..kNetLevels, each level the parents of the previous.
using KeyPyramid = std::vector<std::vector<VoxelKey>>;
KeyPyramid key_pyramid(std::vector<VoxelKey> level0);

struct ForwardOptions {
    bool train = false;                 // keep ground-truth children in addition to predictions
    const KeyPyramid *gt = nullptr;     // required when train is set
    bool trainable = true;              // bind parameters as differentiable tape inputs
};

/// Occupancy predictions of one up block over every proposed child.
struct LevelOccupancy {
    int level = 0;
    std::vector<VoxelKey> keys;
    Var occupancy; // n x 1
};

struct GeneratorOutput {
    std::vector<VoxelKey> keys; // level-0 output voxels
    Var features;               // n x F
    Var occupancy;              // n x 1
    std::vector<LevelOccupancy> levels; // coarse to fine
};

/// Owns named parameters; layers refer to them by index.
class SparseNet {
  public:
    const NetConfig &config() const { return config_; }
    std::vector<Parameter *> parameters();
    std::vector<const Parameter *> parameters() const;
    std::size_t parameter_count() const;
    void zero_grad();
    virtual ~SparseNet() = default;

  protected:
    struct Layer {
        int w = -1;
        int b = -1;
    };

    SparseNet(NetConfig config, std::uint64_t seed) : config_(std::move(config)), rng_(seed) {}
    Layer add_layer(const std::string &name, int fan_in, int rows, int cols, double gain);
    Var bind(Tape &t, int index, bool trainable) const;
    Var apply_linear(Tape &t, Var x, Layer l, bool trainable) const;
    Var apply_conv(Tape &t, Var x, Layer l, const KernelMap &map, bool trainable) const;
    Var act(Tape &t, Var x) const { return ad::leaky_relu(t, x, config_.leaky_slope); }
    /// Appends the broadcast time embedding as extra columns when enabled.
    Var with_time(Tape &t, Var x, Var temb) const;
    Var time_embedding(Tape &t, int timestep, bool trainable) const;

    NetConfig config_;
    mutable std::vector<Parameter> params_;
    std::mt19937_64 rng_;
    Layer time_;
};

/// Encoder-decoder generator shared by the initializer and the densifier. Each
/// up block proposes all children of the surviving parents and predicts their
/// occupancy with a sigmoid head.
class GeneratorNet : public SparseNet {
  public:
    GeneratorNet(NetConfig config, std::uint64_t seed);

  protected:
    /// `x0` holds the level-0 inputs of `keys0` (n x input_width); `frame` and
    /// `edge0` place the dense bottleneck. When
    /// `final_threshold` is false the level-0 block returns every proposal.
    GeneratorOutput generate(Tape &t, const std::vector<VoxelKey> &keys0, Var x0, int timestep, const Bbox &frame,
                             double edge0, const ForwardOptions &opts, bool final_threshold) const;

  private:
    Layer in_, out_;
    std::array<Layer, kNetLevels> enc_, down_, up_, fuse_, occ_;
    std::vector<std::array<Layer, 2>> res_;
    Layer coarse_;
};

class InitializerNet : public GeneratorNet {
  public:
    explicit InitializerNet(NetConfig config = initializer_config(), std::uint64_t seed = 1)
        : GeneratorNet(std::move(config), seed) {}
    /// `input` is a level-0 descriptor grid; the dense bottleneck covers `bbox`.
    GeneratorOutput forward(Tape &t, const SparseGrid &input, const Bbox &bbox, const ForwardOptions &opts) const;
};

class DensifierNet : public GeneratorNet {
  public:
    explicit DensifierNet(NetConfig config = densifier_config(), std::uint64_t seed = 2)
        : GeneratorNet(std::move(config), seed) {}
    /// Returns level-0 candidates that are not among `keys`.
    GeneratorOutput forward(Tape &t, const std::vector<VoxelKey> &keys, Var features, const Matrix &grad_input,
                            int timestep, const ForwardOptions &opts) const;
};

/// Sparse UNet on a fixed key set with a tanh output.
class OptimizerNet : public SparseNet {
  public:
    explicit OptimizerNet(NetConfig config = optimizer_config(), std::uint64_t seed = 3);
    /// Per-voxel update aligned with `keys`, each entry in [-1, 1].
    Var forward(Tape &t, const std::vector<VoxelKey> &keys, Var features, const Matrix &grad_input, int timestep,
                bool trainable = true) const;

  private:
    Layer in_, out_, mid_;
    std::array<Layer, kNetLevels> enc_, down_, up_, fuse_;
};

/// Per-voxel gradient channels: g / (|g| + 1e-8) followed by log10(|g| + 1e-8) / 8.
Matrix gradient_input(const GradBuffer &grad);

/// Mean over levels of the per-level binary cross-entropy against `gt`.
Var occupancy_loss_var(Tape &t, const std::vector<LevelOccupancy> &levels, const KeyPyramid &gt);

struct InitializerResult {
    SparseGrid grid; // level-0 features and occupancy
    std::vector<std::vector<VoxelKey>> level_keys;
    std::vector<std::vector<double>> level_occupancy;
};

struct Candidates {
    std::vector<VoxelKey> keys;
    Matrix features;
    std::vector<double> occupancy;
};

/// Inference wrappers without gradient tracking.
InitializerResult initializer_forward(const SparseGrid &sfm_grid, const InitializerNet &net, const Bbox &bbox);
Candidates densifier_forward(const SparseGrid &grid, const GradBuffer &grad, int timestep, const DensifierNet &net);
Matrix optimizer_forward(const SparseGrid &grid, const GradBuffer &grad, int timestep, const OptimizerNet &net);

/// Checkpoint container: magic, kind tag, config hash and named blobs.
/// Loading throws CheckpointMismatch when the tag, hash or parameter shapes differ.
void save_net(const SparseNet &net, const std::string &kind, const std::filesystem::path &path);
void load_net(SparseNet &net, const std::string &kind, const std::filesystem::path &path);

void save_adam(const AdamState &state, const std::filesystem::path &path);
AdamState load_adam(const std::filesystem::path &path);

} // namespace splatprior
