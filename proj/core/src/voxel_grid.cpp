// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/errors.hpp>
#include <splatprior/voxel_grid.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace splatprior {

namespace {

using KeyIndex = absl::flat_hash_map<VoxelKey, int>;

KeyIndex index_of(const std::vector<VoxelKey> &keys) {
    KeyIndex idx;
    idx.reserve(keys.size());
    for (std::size_t s = 0; s < keys.size(); ++s) {
        idx.emplace(keys[s], static_cast<int>(s));
    }
    return idx;
}

void sort_unique(std::vector<VoxelKey> &keys) {
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
}

constexpr char kGridMagic[8] = {'S', 'P', 'G', 'R', 'I', 'D', '1', '\0'};

} // namespace

VoxelKey key_of_point(const Vec3 &p, double edge) {
    return {static_cast<std::int32_t>(std::floor(p.x() / edge)), static_cast<std::int32_t>(std::floor(p.y() / edge)),
            static_cast<std::int32_t>(std::floor(p.z() / edge))};
}

Vec3 key_center(const VoxelKey &key, double edge) {
    return Vec3(key.i + 0.5, key.j + 0.5, key.k + 0.5) * edge;
}

VoxelKey parent_key(const VoxelKey &key, int levels) {
    const std::int32_t f = 1 << levels;
    return {floor_div(key.i, f), floor_div(key.j, f), floor_div(key.k, f)};
}

VoxelKey child_key(const VoxelKey &parent, int child) {
    return {2 * parent.i + (child & 1), 2 * parent.j + ((child >> 1) & 1), 2 * parent.k + ((child >> 2) & 1)};
}

int child_index(const VoxelKey &child) {
    const VoxelKey p = parent_key(child);
    return (child.i - 2 * p.i) | ((child.j - 2 * p.j) << 1) | ((child.k - 2 * p.k) << 2);
}

int SparseGrid::find(const VoxelKey &key) const {
    const auto it = slots_.find(key);
    return it == slots_.end() ? -1 : it->second;
}

void SparseGrid::reindex() {
    slots_ = index_of(keys);
    if (slots_.size() != keys.size()) {
        throw ValidationError("duplicate voxel keys");
    }
}

void SparseGrid::validate() const {
    if (static_cast<std::size_t>(features.rows()) != keys.size() || occupancy.size() != keys.size()) {
        throw ValidationError("feature/occupancy rows disagree with the slot count");
    }
    if (slots_.size() != keys.size()) {
        throw ValidationError("slot index out of date or keys not unique");
    }
    for (std::size_t s = 0; s < keys.size(); ++s) {
        if (find(keys[s]) != static_cast<int>(s)) {
            throw ValidationError("slot index inconsistent with key order");
        }
        if (!(occupancy[s] >= 0.0 && occupancy[s] <= 1.0)) {
            throw ValidationError("occupancy outside [0,1]");
        }
    }
    if (!features.allFinite()) {
        throw ValidationError("non-finite features");
    }
}

SparseGrid SparseGrid::from_keys(std::vector<VoxelKey> keys, int width, double edge, int level, const Bbox &frame) {
    sort_unique(keys);
    SparseGrid g;
    g.edge = edge;
    g.level = level;
    g.frame = frame;
    g.keys = std::move(keys);
    g.features = Matrix::Zero(static_cast<Eigen::Index>(g.keys.size()), width);
    g.occupancy.assign(g.keys.size(), 0.0);
    g.reindex();
    return g;
}

SparseGrid voxelize_points(const std::vector<SfMPoint> &points, double edge, const Bbox &frame) {
    if (!(edge > 0.0)) {
        throw ValidationError("voxel edge must be positive");
    }
    if (points.empty()) {
        throw EmptyInput("cannot voxelize an empty point set");
    }
    // Accumulate in a key-sorted order so the result does not depend on the input order.
    std::vector<std::pair<VoxelKey, std::size_t>> order(points.size());
    for (std::size_t n = 0; n < points.size(); ++n) {
        order[n] = {key_of_point(points[n].position, edge), n};
    }
    std::sort(order.begin(), order.end(), [&](const auto &a, const auto &b) {
        if (a.first != b.first) return a.first < b.first;
        const Vec3 &pa = points[a.second].position, &pb = points[b.second].position;
        if (pa != pb) return std::lexicographical_compare(pa.data(), pa.data() + 3, pb.data(), pb.data() + 3);
        const Vec3 &ca = points[a.second].color, &cb = points[b.second].color;
        return std::lexicographical_compare(ca.data(), ca.data() + 3, cb.data(), cb.data() + 3);
    });
    std::vector<VoxelKey> keys;
    for (const auto &o : order) {
        if (keys.empty() || keys.back() != o.first) keys.push_back(o.first);
    }
    Bbox f = frame;
    if (!f.valid()) {
        f = {points[0].position, points[0].position};
        for (const auto &p : points) {
            f.min = f.min.cwiseMin(p.position);
            f.max = f.max.cwiseMax(p.position);
        }
        f = f.expanded(edge);
    }
    SparseGrid g = SparseGrid::from_keys(keys, kDescriptorWidth, edge, 0, f);
    std::vector<int> counts(g.size(), 0);
    std::size_t slot = 0;
    for (const auto &o : order) {
        while (g.keys[slot] != o.first) ++slot;
        const SfMPoint &p = points[o.second];
        const Vec3 off = (p.position - key_center(o.first, edge)) / edge;
        g.features.row(slot).segment<3>(0) += p.color.transpose();
        g.features.row(slot).segment<3>(4) += off.transpose();
        ++counts[slot];
    }
    for (std::size_t s = 0; s < g.size(); ++s) {
        g.features.row(s).segment<3>(0) /= counts[s];
        g.features.row(s).segment<3>(4) /= counts[s];
        g.features(s, 3) = std::log1p(static_cast<double>(counts[s]));
        g.occupancy[s] = 1.0;
    }
    return g;
}

std::vector<VoxelKey> voxelize_mesh(const TriangleMesh &mesh, double edge) {
    std::vector<VoxelKey> keys;
    const double spacing = edge / 4.0;
    for (const auto &f : mesh.faces) {
        const Vec3 &a = mesh.vertices[f[0]], &b = mesh.vertices[f[1]], &c = mesh.vertices[f[2]];
        const double longest = std::max({(b - a).norm(), (c - a).norm(), (c - b).norm()});
        const int n = std::max(1, static_cast<int>(std::ceil(longest / spacing)));
        for (int i = 0; i <= n; ++i) {
            for (int j = 0; i + j <= n; ++j) {
                const Vec3 p = a + (b - a) * (static_cast<double>(i) / n) + (c - a) * (static_cast<double>(j) / n);
                keys.push_back(key_of_point(p, edge));
            }
        }
        sort_unique(keys);
    }
    sort_unique(keys);
    return keys;
}

std::vector<VoxelKey> parent_keys(const std::vector<VoxelKey> &keys) {
    std::vector<VoxelKey> out;
    out.reserve(keys.size());
    for (const auto &k : keys) out.push_back(parent_key(k));
    sort_unique(out);
    return out;
}

std::vector<VoxelKey> child_keys(const std::vector<VoxelKey> &keys) {
    std::vector<VoxelKey> out;
    out.reserve(keys.size() * 8);
    for (const auto &k : keys) {
        for (int c = 0; c < 8; ++c) out.push_back(child_key(k, c));
    }
    sort_unique(out);
    return out;
}

SparseGrid downsample(const SparseGrid &grid, int levels) {
    if (levels < 1) {
        throw ValidationError("downsample needs levels >= 1");
    }
    SparseGrid cur = grid;
    for (int l = 0; l < levels; ++l) {
        SparseGrid next =
            SparseGrid::from_keys(parent_keys(cur.keys), cur.width(), cur.edge * 2.0, cur.level + 1, cur.frame);
        std::vector<int> counts(next.size(), 0);
        for (std::size_t s = 0; s < cur.size(); ++s) {
            const int p = next.find(parent_key(cur.keys[s]));
            next.features.row(p) += cur.features.row(s);
            next.occupancy[p] += cur.occupancy[s];
            ++counts[p];
        }
        for (std::size_t p = 0; p < next.size(); ++p) {
            next.features.row(p) /= counts[p];
            next.occupancy[p] /= counts[p];
        }
        cur = std::move(next);
    }
    return cur;
}

SparseGrid upsample(const SparseGrid &grid, const std::vector<std::uint8_t> &mask) {
    if (mask.size() != 8 * grid.size()) {
        throw ShapeError("upsample mask needs 8 entries per parent");
    }
    std::vector<VoxelKey> keys;
    for (std::size_t s = 0; s < grid.size(); ++s) {
        for (int c = 0; c < 8; ++c) {
            if (mask[8 * s + c]) keys.push_back(child_key(grid.keys[s], c));
        }
    }
    SparseGrid out = SparseGrid::from_keys(keys, grid.width(), grid.edge * 0.5, grid.level - 1, grid.frame);
    for (std::size_t s = 0; s < out.size(); ++s) {
        const int p = grid.find(parent_key(out.keys[s]));
        out.features.row(s) = grid.features.row(p);
        out.occupancy[s] = grid.occupancy[p];
    }
    return out;
}

std::vector<VoxelKey> dilate_keys(const std::vector<VoxelKey> &keys, int radius) {
    std::vector<VoxelKey> out;
    const std::size_t side = 2 * radius + 1;
    out.reserve(keys.size() * side * side * side);
    for (const auto &k : keys) {
        for (int dz = -radius; dz <= radius; ++dz) {
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    out.push_back({k.i + dx, k.j + dy, k.k + dz});
                }
            }
        }
    }
    sort_unique(out);
    return out;
}

SparseGrid dilate(const SparseGrid &grid, int radius) {
    if (radius < 1) {
        throw ValidationError("dilation radius must be >= 1");
    }
    SparseGrid out = SparseGrid::from_keys(dilate_keys(grid.keys, radius), grid.width(), grid.edge, grid.level,
                                           grid.frame);
    for (std::size_t s = 0; s < grid.size(); ++s) {
        const int d = out.find(grid.keys[s]);
        out.features.row(d) = grid.features.row(s);
        out.occupancy[d] = grid.occupancy[s];
    }
    return out;
}

KernelMap neighbor_map(const std::vector<VoxelKey> &in_keys, const std::vector<VoxelKey> &out_keys) {
    const KeyIndex idx = index_of(in_keys);
    KernelMap m;
    m.volume = 27;
    m.in.resize(27);
    m.out.resize(27);
    m.in_rows = in_keys.size();
    m.out_rows = out_keys.size();
    int o = 0;
    for (int dz = -1; dz <= 1; ++dz) {
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx, ++o) {
                const VoxelKey d{dx, dy, dz};
                for (std::size_t r = 0; r < out_keys.size(); ++r) {
                    const auto it = idx.find(out_keys[r] + d);
                    if (it != idx.end()) {
                        m.in[o].push_back(it->second);
                        m.out[o].push_back(static_cast<int>(r));
                    }
                }
            }
        }
    }
    return m;
}

KernelMap down_map(const std::vector<VoxelKey> &child_keys_in, const std::vector<VoxelKey> &parent_keys_out) {
    const KeyIndex idx = index_of(parent_keys_out);
    KernelMap m;
    m.volume = 8;
    m.in.resize(8);
    m.out.resize(8);
    m.in_rows = child_keys_in.size();
    m.out_rows = parent_keys_out.size();
    for (std::size_t r = 0; r < child_keys_in.size(); ++r) {
        const auto it = idx.find(parent_key(child_keys_in[r]));
        if (it == idx.end()) continue;
        const int c = child_index(child_keys_in[r]);
        m.in[c].push_back(static_cast<int>(r));
        m.out[c].push_back(it->second);
    }
    return m;
}

KernelMap up_map(const std::vector<VoxelKey> &parent_keys_in, const std::vector<VoxelKey> &child_keys_out) {
    const KeyIndex idx = index_of(parent_keys_in);
    KernelMap m;
    m.volume = 8;
    m.in.resize(8);
    m.out.resize(8);
    m.in_rows = parent_keys_in.size();
    m.out_rows = child_keys_out.size();
    for (std::size_t r = 0; r < child_keys_out.size(); ++r) {
        const auto it = idx.find(parent_key(child_keys_out[r]));
        if (it == idx.end()) continue;
        const int c = child_index(child_keys_out[r]);
        m.in[c].push_back(it->second);
        m.out[c].push_back(static_cast<int>(r));
    }
    return m;
}

std::vector<int> lookup_rows(const SparseGrid &lookup, const std::vector<VoxelKey> &keys) {
    std::vector<int> rows(keys.size());
    for (std::size_t n = 0; n < keys.size(); ++n) rows[n] = lookup.find(keys[n]);
    return rows;
}

void save_grid(const SparseGrid &grid, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    auto put = [&](const auto &v) { out.write(reinterpret_cast<const char *>(&v), sizeof(v)); };
    out.write(kGridMagic, sizeof(kGridMagic));
    put(grid.edge);
    put(static_cast<std::int32_t>(grid.level));
    put(static_cast<std::uint64_t>(grid.size()));
    put(static_cast<std::uint64_t>(grid.width()));
    for (int a = 0; a < 3; ++a) put(grid.frame.min[a]);
    for (int a = 0; a < 3; ++a) put(grid.frame.max[a]);
    for (const auto &k : grid.keys) {
        put(k.i);
        put(k.j);
        put(k.k);
    }
    out.write(reinterpret_cast<const char *>(grid.features.data()),
              static_cast<std::streamsize>(grid.features.size() * sizeof(double)));
    out.write(reinterpret_cast<const char *>(grid.occupancy.data()),
              static_cast<std::streamsize>(grid.occupancy.size() * sizeof(double)));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

SparseGrid load_grid(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingAsset("cannot open " + path.string());
    }
    auto get = [&](auto &v) {
        in.read(reinterpret_cast<char *>(&v), sizeof(v));
        if (!in) throw ParseError("truncated grid file " + path.string());
    };
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kGridMagic, sizeof(magic)) != 0) {
        throw ParseError("not a grid file: " + path.string());
    }
    SparseGrid g;
    std::int32_t level = 0;
    std::uint64_t count = 0, width = 0;
    get(g.edge);
    get(level);
    get(count);
    get(width);
    g.level = level;
    for (int a = 0; a < 3; ++a) get(g.frame.min[a]);
    for (int a = 0; a < 3; ++a) get(g.frame.max[a]);
    if (count > (1ull << 31) || width > (1ull << 20)) {
        throw ParseError("implausible grid header in " + path.string());
    }
    g.keys.resize(count);
    for (auto &k : g.keys) {
        get(k.i);
        get(k.j);
        get(k.k);
    }
    g.features.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(width));
    in.read(reinterpret_cast<char *>(g.features.data()), static_cast<std::streamsize>(g.features.size() * sizeof(double)));
    g.occupancy.resize(count);
    in.read(reinterpret_cast<char *>(g.occupancy.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) {
        throw ParseError("truncated grid file " + path.string());
    }
    g.reindex();
    return g;
}

} // namespace splatprior
