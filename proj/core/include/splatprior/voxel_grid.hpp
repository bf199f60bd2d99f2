// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <splatprior/geometry.hpp>
#include <splatprior/scene_io.hpp>

#include <absl/container/flat_hash_map.h>

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace splatprior {

/// Integer lattice coordinate at some level; level L cells have edge v_d * 2^L.
struct VoxelKey {
    std::int32_t i = 0;
    std::int32_t j = 0;
    std::int32_t k = 0;

    auto operator<=>(const VoxelKey &) const = default;
    bool operator==(const VoxelKey &) const = default;

    VoxelKey operator+(const VoxelKey &o) const { return {i + o.i, j + o.j, k + o.k}; }

    template <typename H> friend H AbslHashValue(H h, const VoxelKey &key) {
        return H::combine(std::move(h), key.i, key.j, key.k);
    }
};

/// Floor division that rounds toward negative infinity.
inline std::int32_t floor_div(std::int32_t a, std::int32_t b) {
    const std::int32_t q = a / b;
    return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

VoxelKey key_of_point(const Vec3 &p, double edge);
Vec3 key_center(const VoxelKey &key, double edge);
VoxelKey parent_key(const VoxelKey &key, int levels = 1);
/// Child index c in [0,8) has offsets (c & 1, (c >> 1) & 1, (c >> 2) & 1).
VoxelKey child_key(const VoxelKey &parent, int child);
int child_index(const VoxelKey &child);

/// Sparse voxels with per-slot features and occupancy. Slot order is the order
/// of `keys`; every grid built by this module stores its keys sorted.
struct SparseGrid {
    double edge = 0.04; // cell edge at this grid's level, meters
    int level = 0;
    Bbox frame;         // normalization frame for positional encodings
    std::vector<VoxelKey> keys;
    Matrix features;    // |keys| x width
    std::vector<double> occupancy;

    std::size_t size() const { return keys.size(); }
    bool empty() const { return keys.empty(); }
    int width() const { return static_cast<int>(features.cols()); }
    Vec3 center(std::size_t slot) const { return key_center(keys[slot], edge); }

    /// Slot of `key`, or -1.
    int find(const VoxelKey &key) const;
    bool contains(const VoxelKey &key) const { return find(key) >= 0; }

    /// Rebuilds the key-to-slot index after keys were edited in place.
    void reindex();
    /// Throws ValidationError when shapes, uniqueness or occupancy range are broken.
    void validate() const;

    /// Grid with the given keys (sorted and deduplicated), zero features and occupancy.
    static SparseGrid from_keys(std::vector<VoxelKey> keys, int width, double edge, int level, const Bbox &frame);

  private:
    absl::flat_hash_map<VoxelKey, int> slots_;
};

/// Per-slot gradient of a loss with respect to latent features.
struct GradBuffer {
    Matrix values; // |slots| x width

    static GradBuffer zeros(std::size_t slots, int width) {
        GradBuffer g;
        g.values = Matrix::Zero(static_cast<Eigen::Index>(slots), width);
        return g;
    }
};

/// Number of input channels of the voxel descriptor built by voxelize_points:
/// mean color (3), log(1 + count) (1), mean offset from the center in edge units (3).
inline constexpr int kDescriptorWidth = 7;

/// One voxel per occupied cell with descriptor features and occupancy 1. The
/// frame is the supplied scene bbox when valid, else the points' bounds.
SparseGrid voxelize_points(const std::vector<SfMPoint> &points, double edge, const Bbox &frame = Bbox{Vec3::Zero(), Vec3::Zero()});

/// Keys of cells at `edge` touched by surface samples of a mesh, sampled at a
/// spacing of at most edge / 4.
std::vector<VoxelKey> voxelize_mesh(const TriangleMesh &mesh, double edge);

/// Merges children into parents `levels` times; features and occupancy are averaged.
SparseGrid downsample(const SparseGrid &grid, int levels = 1);

/// Allocates the children selected by `mask` (8 entries per parent slot, in
/// child_index order); children copy their parent's feature and occupancy.
SparseGrid upsample(const SparseGrid &grid, const std::vector<std::uint8_t> &mask);

/// Adds every key within Chebyshev distance `radius`; new slots are zero.
SparseGrid dilate(const SparseGrid &grid, int radius);

/// Keys within Chebyshev distance `radius` of `keys`, sorted and unique.
std::vector<VoxelKey> dilate_keys(const std::vector<VoxelKey> &keys, int radius);

/// Sorted unique parents of `keys`.
std::vector<VoxelKey> parent_keys(const std::vector<VoxelKey> &keys);

/// Sorted unique children of `keys` (all 8 per key).
std::vector<VoxelKey> child_keys(const std::vector<VoxelKey> &keys);

/// Gather/scatter pairs of a sparse convolution: for kernel offset o,
/// output row out[o][n] receives input row in[o][n].
struct KernelMap {
    int volume = 0;
    std::vector<std::vector<int>> in;
    std::vector<std::vector<int>> out;
    std::size_t in_rows = 0;
    std::size_t out_rows = 0;
};

/// Same-level 3x3x3 neighborhood map (27 offsets ordered dz, dy, dx from -1).
KernelMap neighbor_map(const std::vector<VoxelKey> &in_keys, const std::vector<VoxelKey> &out_keys);
/// Stride-2 map from children (level l) to parents (level l+1); 8 offsets by child_index.
KernelMap down_map(const std::vector<VoxelKey> &child_keys, const std::vector<VoxelKey> &parent_keys);
/// Transposed stride-2 map from parents to children; 8 offsets by child_index.
KernelMap up_map(const std::vector<VoxelKey> &parent_keys, const std::vector<VoxelKey> &child_keys);

/// Binary grid container: magic, edge, level, slot count, width, frame, keys,
/// features and occupancy.
void save_grid(const SparseGrid &grid, const std::filesystem::path &path);
SparseGrid load_grid(const std::filesystem::path &path);

/// Index of each key of `keys` in `lookup`, or -1 when absent.
std::vector<int> lookup_rows(const SparseGrid &lookup, const std::vector<VoxelKey> &keys);

} // namespace splatprior
