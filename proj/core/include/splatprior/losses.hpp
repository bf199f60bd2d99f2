// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <splatprior/bvh.hpp>
#include <splatprior/image.hpp>
#include <splatprior/renderer.hpp>
#include <splatprior/splat_model.hpp>
#include <splatprior/voxel_grid.hpp>

#include <optional>
#include <string>
#include <vector>

namespace splatprior {

struct ImageLoss {
    double value = 0.0;
    Image grad; // dL/d(rendered), same shape as the input
};

/// SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
/// zero padding at the border, averaged over pixels and channels.
double ssim(const Image &a, const Image &b);
/// SSIM value and its gradient with respect to `a`.
ImageLoss ssim_with_grad(const Image &a, const Image &b);

/// 0.8 * mean |rendered - target| + 0.2 * (1 - SSIM(rendered, target)).
ImageLoss rendering_loss(const Image &rendered, const Image &target);

struct DepthLoss {
    double value = 0.0;
    Image grad;
    std::size_t valid = 0;
    bool empty_mask = false; // set when no pixel was valid
};

/// Mean |rendered - gt| over pixels with gt > 0 (and mask > 0.5 when given).
DepthLoss depth_loss(const Image &rendered_depth, const Image &gt_depth, const Image *mask = nullptr);

struct NormalLoss {
    double value = 0.0;
    std::vector<Vec4> rotation_grad; // per Gaussian, dL/d(unit quaternion)
    std::vector<double> opacity_grad;
};

/// Opacity-weighted mean of 1 - n_g . n_m, where n_m is the face normal at the
/// point of the mesh nearest to the Gaussian center.
NormalLoss normal_loss(const std::vector<Gaussian2D> &gaussians, const TriangleBvh &mesh);

struct DistortionLoss {
    double value = 0.0;
    std::vector<double> weight_grad; // dL/d(alpha_i T_i), aligned with fragments
    std::vector<double> depth_grad;  // dL/dz_i, aligned with fragments
    std::size_t rays = 0;
};

/// Sum over i, j of w_i w_j |z_i - z_j| for one depth-sorted ray, by prefix sums.
double ray_distortion(std::span<const Fragment> fragments);

/// Mean ray distortion over pixels whose alpha exceeds `alpha_threshold`.
DistortionLoss distortion_loss(const RenderOutput &output, double alpha_threshold = 0.5);

struct OccupancyLoss {
    double value = 0.0;
    std::vector<double> grad;
    std::size_t positives = 0;
};

/// Mean binary cross-entropy of predictions over candidate keys against a
/// ground-truth key set of the same level; probabilities clamped to [1e-6, 1 - 1e-6].
OccupancyLoss occupancy_loss(const std::vector<VoxelKey> &candidates, const std::vector<double> &predicted,
                             int level, const std::vector<VoxelKey> &gt_keys, int gt_level);

struct LossWeights {
    double color = 1.0;
    double depth = 1.0;
    double occupancy = 1.0;
    double normal = 0.01;
    double distortion = 10.0;

    static LossWeights stage1() { return {}; }
    /// Occupancy of densifier levels is added separately; normals are unused.
    static LossWeights stage2() { return {1.0, 1.0, 0.0, 0.0, 10.0}; }
};

/// Scalar loss values of one step; serialized as one JSON record per line.
struct LossReport {
    long step = 0;
    int timestep = -1;
    std::size_t voxels = 0;
    std::size_t gaussians = 0;
    double color = 0.0;
    double depth = 0.0;
    double normal = 0.0;
    double distortion = 0.0;
    double occupancy = 0.0;
    double total = 0.0;
    double wall_time = 0.0;

    std::string to_json_line() const;
    static LossReport from_json_line(const std::string &line);
};

double assemble(const LossReport &r, const LossWeights &w);
double assemble_stage1(const LossReport &r);
double assemble_stage2(const LossReport &r);

} // namespace splatprior
