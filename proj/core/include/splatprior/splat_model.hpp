// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <splatprior/geometry.hpp>
#include <splatprior/parameter.hpp>
#include <splatprior/voxel_grid.hpp>

#include <filesystem>
#include <vector>

namespace splatprior {

/// A flat elliptical splat: two tangent scales and a unit quaternion (w, x, y, z)
/// whose rotation columns are (tangent u, tangent v, normal).
struct Gaussian2D {
    Vec3 center = Vec3::Zero();
    Vec2 scales = Vec2::Constant(0.01);
    Vec4 rotation = Vec4(1, 0, 0, 0);
    double opacity = 1.0;
    Vec3 color = Vec3::Zero();
};

/// Third rotation column, the disk normal.
Vec3 gaussian_normal(const Gaussian2D &g);

/// Per-Gaussian partial derivatives, aligned with a Gaussian list.
struct GaussianGrad {
    Vec3 center = Vec3::Zero();
    Vec2 scales = Vec2::Zero();
    Vec4 rotation = Vec4::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();

    GaussianGrad &operator+=(const GaussianGrad &o) {
        center += o.center;
        scales += o.scales;
        rotation += o.rotation;
        opacity += o.opacity;
        color += o.color;
        return *this;
    }
};
using GaussianGrads = std::vector<GaussianGrad>;

/// Raw decoder outputs per Gaussian: position 3, scale 2, rotation 4,
/// opacity logit 1 (carried but unused), color 3.
inline constexpr int kRawPerGaussian = 13;
/// Positional encoding: level, normalized center (3), sin (3), cos (3).
inline constexpr int kPositionalWidth = 10;

struct DecoderConfig {
    int feature_dim = 64;
    int hidden = 128;
    int gaussians_per_voxel = 2; // v_g
    double voxel_size = 0.04;    // v_d, meters
    double leaky_slope = 0.01;

    /// Reach of the center offset around the voxel center.
    double offset_radius() const { return 4.0 * voxel_size; }
    double min_scale() const { return 1e-4; }
    double max_scale() const { return 4.0 * voxel_size; }
    int input_width() const { return feature_dim + kPositionalWidth; }
    int output_width() const { return kRawPerGaussian * gaussians_per_voxel; }
};

/// Three-layer MLP from [feature, positional encoding] to raw Gaussian values.
struct DecoderParams {
    DecoderConfig config;
    Parameter w0, b0, w1, b1, w2, b2;

    static DecoderParams create(const DecoderConfig &config, std::uint64_t seed);
    std::vector<Parameter *> parameters();
    std::vector<const Parameter *> parameters() const;
    void validate() const;
};

/// Encodings of the slot centers of `grid` relative to its frame.
Matrix positional_encoding(const SparseGrid &grid);

/// Maps one Gaussian's raw values to its attributes.
Gaussian2D activate_raw(const double *raw, const Vec3 &voxel_center, double occupancy, const DecoderConfig &config);

struct DecodedSplats {
    std::vector<Gaussian2D> gaussians;
    std::vector<int> slot; // provenance: voxel slot of each Gaussian
};

/// v_g Gaussians per voxel, ordered by slot then by index within the voxel.
DecodedSplats decode(const SparseGrid &grid, const DecoderParams &params);

struct DecoderGrads {
    GradBuffer features;
    std::vector<double> occupancy;
    std::vector<Matrix> params; // aligned with DecoderParams::parameters()
};

DecoderGrads decode_backward(const SparseGrid &grid, const DecoderParams &params, const GaussianGrads &grads);

/// Binary container of layer shapes and row-major weights.
void save_decoder(const DecoderParams &params, const std::filesystem::path &path);
DecoderParams load_decoder(const std::filesystem::path &path);

} // namespace splatprior
