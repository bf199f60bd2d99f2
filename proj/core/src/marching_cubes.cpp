// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/errors.hpp>
#include <splatprior/meshing.hpp>

#include <absl/container/flat_hash_map.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

namespace splatprior {

namespace {

// Corners 0..3 go around the bottom face, 4..7 around the top.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {3, 2}, {0, 3}, {4, 5}, {5, 6},
                              {7, 6}, {4, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
// Lattice axis of each edge; the edge starts at its first corner.
constexpr int kEdgeAxis[12] = {0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2};
constexpr int kFace[6][4] = {{0, 3, 7, 4}, {1, 2, 6, 5}, {0, 1, 5, 4}, {3, 2, 6, 7}, {0, 1, 2, 3}, {4, 5, 6, 7}};
constexpr int kFaceNormal[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};

int edge_between(int a, int b) {
    for (int e = 0; e < 12; ++e) {
        if ((kEdge[e][0] == a && kEdge[e][1] == b) || (kEdge[e][0] == b && kEdge[e][1] == a)) return e;
    }
    return -1;
}

Vec3 corner_pos(int c) { return Vec3(kCorner[c][0], kCorner[c][1], kCorner[c][2]); }
Vec3 edge_mid(int e) { return 0.5 * (corner_pos(kEdge[e][0]) + corner_pos(kEdge[e][1])); }

// Bit f is set when edge e lies on face f.
int face_mask(int e) {
    int m = 0;
    for (int f = 0; f < 6; ++f) {
        for (int i = 0; i < 4; ++i) {
            if (edge_between(kFace[f][i], kFace[f][(i + 1) % 4]) == e) m |= 1 << f;
        }
    }
    return m;
}

using Triangles = std::vector<std::array<int, 3>>;

// Triangulation of a polygon of cube edges whose diagonals stay off the cube
// faces, where they could coincide with the neighbor cube's diagonals.
// Depth-first over the apex of the triangle on the closing side.
bool triangulate(const std::vector<int> &poly, Triangles &out) {
    const std::size_t n = poly.size();
    if (n < 3) return true;
    for (std::size_t k = 1; k + 1 < n; ++k) {
        const bool chord_a = k > 1 && (face_mask(poly.front()) & face_mask(poly[k])) != 0;
        const bool chord_b = k + 2 < n && (face_mask(poly[k]) & face_mask(poly.back())) != 0;
        if (chord_a || chord_b) continue;
        const std::size_t mark = out.size();
        out.push_back({poly.front(), poly[k], poly.back()});
        const std::vector<int> left(poly.begin(), poly.begin() + static_cast<std::ptrdiff_t>(k) + 1);
        const std::vector<int> right(poly.begin() + static_cast<std::ptrdiff_t>(k), poly.end());
        if (triangulate(left, out) && triangulate(right, out)) return true;
        out.resize(mark);
    }
    return false;
}

// Triangulation of one sign configuration. Bit f of `joined` marks face f as
// having its two diagonal inside corners connected through the face center.
struct CaseEntry {
    Triangles tris;                       // ids 0..11 are edges, 12 + c is centers[c]
    std::vector<std::vector<int>> centers; // edges averaged into each extra vertex
};

CaseEntry build_case(int config, int joined) {
    auto inside = [&](int c) { return (config >> c & 1) != 0; };
    std::array<int, 12> next;
    next.fill(-1);
    auto add_segment = [&](int f, int ea, int eb, const Vec3 &ref, double side) {
        const Vec3 n(kFaceNormal[f][0], kFaceNormal[f][1], kFaceNormal[f][2]);
        const Vec3 a = edge_mid(ea), b = edge_mid(eb);
        // Orient so that the inside lies to the right when seen from outside the cube.
        if (n.cross(b - a).dot(side * (ref - a)) > 0) std::swap(ea, eb);
        next[ea] = eb;
    };
    for (int f = 0; f < 6; ++f) {
        const int *q = kFace[f];
        std::vector<int> cross;
        for (int i = 0; i < 4; ++i) {
            if (inside(q[i]) != inside(q[(i + 1) % 4])) cross.push_back(i);
        }
        if (cross.size() == 2) {
            Vec3 ref = Vec3::Zero();
            int count = 0;
            for (int i = 0; i < 4; ++i) {
                if (inside(q[i])) {
                    ref += corner_pos(q[i]);
                    ++count;
                }
            }
            ref /= count;
            const int ea = edge_between(q[cross[0]], q[(cross[0] + 1) % 4]);
            const int eb = edge_between(q[cross[1]], q[(cross[1] + 1) % 4]);
            add_segment(f, ea, eb, ref, 1.0);
        } else if (cross.size() == 4) {
            const bool cut_inside = (joined >> f & 1) == 0;
            for (int i = 0; i < 4; ++i) {
                if (inside(q[i]) != cut_inside) continue;
                const int ea = edge_between(q[(i + 3) % 4], q[i]);
                const int eb = edge_between(q[i], q[(i + 1) % 4]);
                add_segment(f, ea, eb, corner_pos(q[i]), inside(q[i]) ? 1.0 : -1.0);
            }
        }
    }
    CaseEntry out;
    std::array<bool, 12> seen{};
    for (int start = 0; start < 12; ++start) {
        if (next[start] < 0 || seen[start]) continue;
        std::vector<int> loop;
        for (int e = start; !seen[e]; e = next[e]) {
            seen[e] = true;
            loop.push_back(e);
        }
        // Triangulate a canonical copy (smallest edge first, smaller neighbor
        // second) so both windings of a loop give the same triangles.
        const auto lo = std::min_element(loop.begin(), loop.end());
        std::rotate(loop.begin(), lo, loop.end());
        const bool flipped = loop.size() > 2 && loop.back() < loop[1];
        if (flipped) std::reverse(loop.begin() + 1, loop.end());
        Triangles part;
        if (!triangulate(loop, part)) {
            // Fan around an extra vertex at the mean of the loop.
            part.clear();
            const int center = 12 + static_cast<int>(out.centers.size());
            out.centers.push_back(loop);
            for (std::size_t i = 0; i < loop.size(); ++i) part.push_back({center, loop[i], loop[(i + 1) % loop.size()]});
        }
        for (auto tri : part) {
            if (flipped) std::swap(tri[1], tri[2]);
            out.tris.push_back(tri);
        }
    }
    return out;
}

const std::vector<CaseEntry> &case_table() {
    static const std::vector<CaseEntry> table = [] {
        std::vector<CaseEntry> t(256 * 64);
        for (int config = 0; config < 256; ++config) {
            for (int joined = 0; joined < 64; ++joined) t[config * 64 + joined] = build_case(config, joined);
        }
        return t;
    }();
    return table;
}

} // namespace

TriangleMesh marching_cubes(const TSDFVolume &volume, double iso) {
    volume.validate();
    TriangleMesh mesh;
    const auto &table = case_table();
    const auto [nx, ny, nz] = volume.dims;
    absl::flat_hash_map<std::uint64_t, int> vertex_of_edge;
    for (int k = 0; k + 1 < nz; ++k) {
        for (int j = 0; j + 1 < ny; ++j) {
            for (int i = 0; i + 1 < nx; ++i) {
                double v[8];
                std::size_t idx[8];
                bool observed = true;
                int config = 0;
                for (int c = 0; c < 8; ++c) {
                    idx[c] = volume.index(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]);
                    if (volume.weight[idx[c]] <= 0.0) {
                        observed = false;
                        break;
                    }
                    v[c] = volume.sdf[idx[c]] - iso;
                    if (v[c] < 0.0) config |= 1 << c;
                }
                if (!observed || config == 0 || config == 255) continue;
                int joined = 0;
                for (int f = 0; f < 6; ++f) {
                    const int *q = kFace[f];
                    const bool a = v[q[0]] < 0, b = v[q[1]] < 0, c = v[q[2]] < 0, d = v[q[3]] < 0;
                    if (a == c && b == d && a != b) {
                        // Bilinear saddle value decides which diagonal pair is connected.
                        const double den = v[q[0]] + v[q[2]] - v[q[1]] - v[q[3]];
                        const double saddle = den != 0.0 ? (v[q[0]] * v[q[2]] - v[q[1]] * v[q[3]]) / den : 0.0;
                        if (saddle < 0.0) joined |= 1 << f;
                    }
                }
                const CaseEntry &entry = table[config * 64 + joined];
                int local[12];
                for (int e = 0; e < 12; ++e) local[e] = -1;
                auto edge_vertex = [&](int e) {
                    if (local[e] >= 0) return local[e];
                    const int c0 = kEdge[e][0], c1 = kEdge[e][1];
                    const std::uint64_t key = static_cast<std::uint64_t>(idx[c0]) * 3 + kEdgeAxis[e];
                    auto [it, fresh] = vertex_of_edge.try_emplace(key, static_cast<int>(mesh.vertices.size()));
                    if (fresh) {
                        const double tt = v[c0] / (v[c0] - v[c1]);
                        const Vec3 p0 = volume.point(i + kCorner[c0][0], j + kCorner[c0][1], k + kCorner[c0][2]);
                        const Vec3 p1 = volume.point(i + kCorner[c1][0], j + kCorner[c1][1], k + kCorner[c1][2]);
                        mesh.vertices.push_back(p0 + tt * (p1 - p0));
                    }
                    return local[e] = it->second;
                };
                std::vector<int> center_ids(entry.centers.size(), -1);
                for (const auto &tri : entry.tris) {
                    std::array<int, 3> face;
                    for (int s = 0; s < 3; ++s) {
                        if (tri[s] < 12) {
                            face[s] = edge_vertex(tri[s]);
                            continue;
                        }
                        int &id = center_ids[static_cast<std::size_t>(tri[s] - 12)];
                        if (id < 0) {
                            Vec3 c = Vec3::Zero();
                            const auto &ring = entry.centers[static_cast<std::size_t>(tri[s] - 12)];
                            for (int e : ring) c += mesh.vertices[static_cast<std::size_t>(edge_vertex(e))];
                            id = static_cast<int>(mesh.vertices.size());
                            mesh.vertices.push_back(c / static_cast<double>(ring.size()));
                        }
                        face[s] = id;
                    }
                    mesh.faces.push_back(face);
                }
            }
        }
    }
    return mesh;
}

} // namespace splatprior
