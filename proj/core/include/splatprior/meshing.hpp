// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <splatprior/geometry.hpp>
#include <splatprior/image.hpp>
#include <splatprior/scene_io.hpp>
#include <splatprior/splat_model.hpp>

#include <array>
#include <string>
#include <vector>

namespace splatprior {

/// Dense truncated signed distance volume. Samples sit on lattice points
/// origin + (i, j, k) * voxel_size, x fastest. sdf is normalized by the
/// truncation distance; cells with weight 0 have never been observed.
struct TSDFVolume {
    Vec3 origin = Vec3::Zero();
    double voxel_size = 0.02;
    double truncation = 0.08;
    std::array<int, 3> dims{0, 0, 0};
    std::vector<double> sdf;
    std::vector<double> weight;

    /// Volume whose lattice covers `box` with unobserved cells.
    static TSDFVolume covering(const Bbox &box, double voxel_size = 0.02, double truncation = 0.08);

    std::size_t cells() const { return sdf.size(); }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
    }
    Vec3 point(int i, int j, int k) const { return origin + voxel_size * Vec3(i, j, k); }
    /// Throws ValidationError when shapes or value ranges are broken.
    void validate() const;
};

/// Projective update with one unit of weight per view. A cell is skipped when it
/// projects outside the image, onto an invalid depth (0, or alpha < 0.5 when an
/// alpha image is given), or lies more than the truncation behind the surface.
void tsdf_integrate(TSDFVolume &volume, const Image &depth, const View &view, const Image *alpha = nullptr);

/// Triangle mesh of the iso level over cubes whose 8 corners are observed.
/// Vertices are shared along cube edges and emitted in scan order (z, y, x).
/// Triangle normals point toward increasing sdf.
TriangleMesh marching_cubes(const TSDFVolume &volume, double iso = 0.0);

/// Fuses the depth renders of `gaussians` from every view, then extracts the
/// zero level over `box` grown by the truncation.
TriangleMesh extract_mesh(const std::vector<Gaussian2D> &gaussians, const std::vector<View> &views, const Bbox &box,
                          double voxel_size = 0.02, double truncation = 0.08);

/// Camera-z depth of the first mesh hit per pixel center; 0 on a miss.
Image rasterize_depth(const TriangleMesh &mesh, const View &view);

/// Repeated 1-to-4 midpoint subdivision until every edge is at most `max_edge`.
TriangleMesh subdivide_mesh(const TriangleMesh &mesh, double max_edge);

/// Distance from each query point to its nearest reference point.
std::vector<double> nearest_distances(const std::vector<Vec3> &query, const std::vector<Vec3> &reference);

/// 0.5 * (mean_a d(a, B) + mean_b d(b, A)); 0 when both are empty.
double chamfer_distance(const std::vector<Vec3> &a, const std::vector<Vec3> &b);

struct EvalReport {
    double abs_err = 0.0;
    double acc_2cm = 0.0;
    double acc_5cm = 0.0;
    double acc_10cm = 0.0;
    double chamfer = 0.0;
    double runtime = 0.0;
    std::size_t pixels = 0;

    std::string to_json() const;
    /// Two-line table with the columns Abs Err, Acc@2cm, Acc@5cm, Acc@10cm, Chamfer, Runtime.
    std::string table() const;
};

struct EvalOptions {
    double crop_margin = 0.02; // predicted vertices are kept inside the GT bbox grown by this
    double max_edge = 0.02;    // both meshes are subdivided to this edge length before taking vertices
};

/// Depth metrics over valid ground-truth pixels of `views` (pred_depths aligned
/// with them) and vertex Chamfer between `pred_mesh` and the scene mesh.
EvalReport evaluate(const TriangleMesh &pred_mesh, const std::vector<Image> &pred_depths,
                    const std::vector<View> &views, const SceneBundle &scene, const EvalOptions &options = {});

} // namespace splatprior
