// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <splatprior/geometry.hpp>
#include <splatprior/image.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace splatprior {

struct View {
    std::string name; // image file name relative to images/
    Image image;      // H x W x 3 in [0,1]
    Intrinsics intrinsics;
    Pose pose;
    Image gt_depth;  // optional: H x W meters, 0 = invalid
    Image gt_normal; // optional: H x W x 3 unit camera-frame normals

    bool has_depth() const { return !gt_depth.empty(); }
    bool has_normal() const { return !gt_normal.empty(); }
};

struct SfMPoint {
    Vec3 position = Vec3::Zero();
    Vec3 color = Vec3::Zero();
};

struct SceneBundle {
    std::vector<View> views;
    std::vector<SfMPoint> points;
    std::optional<TriangleMesh> gt_mesh;
    Bbox bbox;
};

/// Throws ValidationError when a View or bundle-level invariant is broken.
void validate_view(const View &view);
void validate_scene(const SceneBundle &scene);

/// Loads a scene directory: cameras.json, points.ply, images/, and optionally
/// mesh.ply and depth/<image stem>.png. The bbox comes from mesh.ply when present,
/// otherwise from the point cloud.
SceneBundle load_scene(const std::filesystem::path &dir);

/// Writes the directory layout read by load_scene.
void save_scene(const SceneBundle &scene, const std::filesystem::path &dir);

/// Binary little-endian PLY with double x,y,z, optional double nx,ny,nz,
/// optional uchar red,green,blue, and an int face list.
void save_mesh(const TriangleMesh &mesh, const std::filesystem::path &path);
TriangleMesh load_mesh(const std::filesystem::path &path);

void save_pointcloud(const std::vector<SfMPoint> &points, const std::filesystem::path &path);
std::vector<SfMPoint> load_pointcloud(const std::filesystem::path &path);

/// cameras.json: list of {image, fx, fy, cx, cy, width, height, R[9] row-major, t[3]}.
void save_cameras(const std::vector<View> &views, const std::filesystem::path &path);
std::vector<View> load_cameras(const std::filesystem::path &path);

struct RoomSpec {
    Vec3 dimensions{4.0, 3.0, 2.5};
    int object_count = 0;
    int camera_count = 8;
    int image_width = 192;
    int image_height = 128;
    double noise = 0.0;                 // SfM position noise, meters (std dev)
    double texture_threshold = 10.0;    // albedo luminance gradient, 1/m
    double sample_density = 10000.0;    // surface samples per m^2 before filtering
    double horizontal_fov_deg = 100.0;
    std::uint64_t seed = 0;
};

/// Per-sample bookkeeping of the SfM emulation, kept for diagnostics.
struct SamplingRecord {
    std::vector<Vec3> candidates;   // every surface sample drawn
    std::vector<int> surface;       // 0..5 room faces (x-, x+, y-, y+, floor, ceiling), 6+ objects
    std::vector<double> gradient;   // texture gradient magnitude per candidate
    std::vector<bool> kept;         // survived threshold and visibility
    std::vector<double> surface_area; // per surface id, m^2
};

/// Axis-aligned room [0, dims] with textured walls, boxes and spheres inside,
/// cameras inside looking outward, and ray-cast ground-truth depth/normals.
SceneBundle generate_synthetic_room(const RoomSpec &spec, SamplingRecord *record = nullptr);

/// Splits views into training and held-out sets: view i is held out when
/// holdout_every > 0 and i % holdout_every == holdout_every - 1.
void split_views(std::size_t count, int holdout_every, std::vector<int> &train, std::vector<int> &heldout);

} // namespace splatprior
