// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <splatprior/image.hpp>
#include <splatprior/scene_io.hpp>
#include <splatprior/splat_model.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace splatprior {

/// Local disk coordinates of a ray-splat intersection and the ray parameter.
struct SplatHit {
    double u = 0.0;
    double v = 0.0;
    double z = 0.0;
};

/// Intersects a unit-direction ray with the splat plane. None when the ray is
/// parallel (|n . dir| < 1e-8) or the hit lies at or before `near`.
std::optional<SplatHit> ray_splat_intersect(const Gaussian2D &g, const Ray &ray, double near = 0.01);

struct RenderSettings {
    double near = 0.01;    // camera-z near plane, meters
    double cutoff = 3.0;   // radius cutoff in units of the splat scales
    int tile = 16;         // tile edge in pixels
};

inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kMinTransmittance = 1e-4;

/// A retained, depth-sorted fragment. T is the transmittance in front of it.
struct Fragment {
    int gaussian = 0;
    double alpha = 0.0;
    double z = 0.0; // camera-space depth
    double T = 1.0;
};

struct RenderOutput {
    Image color;  // H x W x 3, composited over black
    Image depth;  // H x W, sum(z w) / max(alpha, 1e-6)
    Image normal; // H x W x 3, blended world normals
    Image alpha;  // H x W
    std::vector<std::size_t> offsets; // pixels + 1 entries into fragments
    std::vector<Fragment> fragments;
    std::uint64_t input_hash = 0;
    RenderSettings settings;

    std::span<const Fragment> pixel_fragments(std::size_t pixel) const {
        return {fragments.data() + offsets[pixel], offsets[pixel + 1] - offsets[pixel]};
    }
};

/// Upstream gradients of a scalar loss. Empty images and vectors count as zero.
struct PixelGrads {
    Image color;
    Image depth;
    Image normal;
    Image alpha;
    std::vector<double> fragment_weight; // dL/d(alpha_i T_i), aligned with RenderOutput::fragments
    std::vector<double> fragment_depth;  // dL/dz_i, aligned with RenderOutput::fragments
};

std::uint64_t render_hash(const std::vector<Gaussian2D> &gaussians, const View &view, const RenderSettings &settings);

RenderOutput render(const std::vector<Gaussian2D> &gaussians, const View &view, const RenderSettings &settings = {});

/// Analytic reverse pass over the stored fragments. Throws StaleCache when the
/// inputs differ from the ones `output` was rendered from.
GaussianGrads render_backward(const std::vector<Gaussian2D> &gaussians, const View &view, const RenderOutput &output,
                              const PixelGrads &grads);

/// Debug dumps: color and normal (mapped to [0,1]) as PNG, depth as 16-bit millimeters.
void dump_render(const RenderOutput &output, const std::filesystem::path &stem);

} // namespace splatprior
