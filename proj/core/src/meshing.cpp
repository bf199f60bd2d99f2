// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/bvh.hpp>
#include <splatprior/errors.hpp>
#include <splatprior/meshing.hpp>
#include <splatprior/renderer.hpp>

#include <absl/container/flat_hash_map.h>
#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace splatprior {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;

TSDFVolume TSDFVolume::covering(const Bbox &box, double voxel_size, double truncation) {
    if (!box.valid()) throw ValidationError("TSDF bounds must satisfy min < max per axis");
    if (!(voxel_size > 0.0) || !(truncation > 0.0)) throw ValidationError("TSDF voxel and truncation must be positive");
    TSDFVolume v;
    v.origin = box.min;
    v.voxel_size = voxel_size;
    v.truncation = truncation;
    const Vec3 e = box.extent();
    std::size_t n = 1;
    for (int a = 0; a < 3; ++a) {
        v.dims[a] = static_cast<int>(std::ceil(e[a] / voxel_size)) + 1;
        n *= static_cast<std::size_t>(v.dims[a]);
    }
    if (n > (std::size_t{1} << 30)) throw BudgetExceeded(fmt::format("TSDF volume of {} cells", n));
    v.sdf.assign(n, 1.0);
    v.weight.assign(n, 0.0);
    return v;
}

void TSDFVolume::validate() const {
    const std::size_t n = static_cast<std::size_t>(std::max(dims[0], 0)) * std::max(dims[1], 0) * std::max(dims[2], 0);
    if (sdf.size() != n || weight.size() != n) throw ValidationError("TSDF arrays do not match dims");
    for (std::size_t i = 0; i < n; ++i) {
        if (!(std::abs(sdf[i]) <= 1.0)) throw ValidationError("TSDF value outside [-1, 1]");
        if (!(weight[i] >= 0.0)) throw ValidationError("negative TSDF weight");
    }
}

void tsdf_integrate(TSDFVolume &vol, const Image &depth, const View &view, const Image *alpha) {
    const Intrinsics &K = view.intrinsics;
    if (depth.height != K.height || depth.width != K.width || depth.channels != 1) {
        throw ShapeError("depth map does not match the view intrinsics");
    }
    if (alpha && (alpha->height != depth.height || alpha->width != depth.width)) {
        throw ShapeError("alpha map does not match the depth map");
    }
    const int nx = vol.dims[0], ny = vol.dims[1], nz = vol.dims[2];
#pragma omp parallel for schedule(static)
    for (int k = 0; k < nz; ++k) {
        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                const Vec3 pc = view.pose.to_camera(vol.point(i, j, k));
                if (pc.z() <= 1e-6) continue;
                const double u = K.fx * pc.x() / pc.z() + K.cx, w = K.fy * pc.y() / pc.z() + K.cy;
                const int col = static_cast<int>(std::floor(u)), row = static_cast<int>(std::floor(w));
                if (col < 0 || row < 0 || col >= K.width || row >= K.height) continue;
                const double d = depth.at(row, col);
                if (!(d > 0.0)) continue;
                if (alpha && alpha->at(row, col) < 0.5) continue;
                const double dist = d - pc.z();
                if (dist < -vol.truncation) continue;
                const double tsdf = std::min(1.0, dist / vol.truncation);
                const std::size_t c = vol.index(i, j, k);
                const double wt = vol.weight[c];
                vol.sdf[c] = (vol.sdf[c] * wt + tsdf) / (wt + 1.0);
                vol.weight[c] = wt + 1.0;
            }
        }
    }
}

TriangleMesh extract_mesh(const std::vector<Gaussian2D> &gaussians, const std::vector<View> &views, const Bbox &box,
                          double voxel_size, double truncation) {
    TSDFVolume vol = TSDFVolume::covering(box.expanded(truncation), voxel_size, truncation);
    for (const auto &v : views) {
        const RenderOutput out = render(gaussians, v);
        tsdf_integrate(vol, out.depth, v, &out.alpha);
    }
    return marching_cubes(vol);
}

Image rasterize_depth(const TriangleMesh &mesh, const View &view) {
    const Intrinsics &K = view.intrinsics;
    Image depth(K.height, K.width, 1);
    if (mesh.faces.empty()) return depth;
    const TriangleBvh bvh(mesh);
#pragma omp parallel for schedule(dynamic, 4)
    for (int r = 0; r < K.height; ++r) {
        for (int c = 0; c < K.width; ++c) {
            const Ray ray = pixel_ray(K, view.pose, r, c);
            if (const auto hit = bvh.intersect(ray)) depth.at(r, c) = hit->t * (view.pose.R * ray.dir).z();
        }
    }
    return depth;
}

TriangleMesh subdivide_mesh(const TriangleMesh &mesh, double max_edge) {
    if (!(max_edge > 0.0)) throw ValidationError("subdivision edge length must be positive");
    TriangleMesh out;
    // Vertices shared by neighboring triangles are merged on a 1e-9 m lattice.
    absl::flat_hash_map<std::array<std::int64_t, 3>, int> index;
    auto vertex = [&](const Vec3 &p) {
        const std::array<std::int64_t, 3> key{std::llround(p.x() * 1e9), std::llround(p.y() * 1e9),
                                              std::llround(p.z() * 1e9)};
        auto [it, fresh] = index.try_emplace(key, static_cast<int>(out.vertices.size()));
        if (fresh) out.vertices.push_back(p);
        return it->second;
    };
    for (const auto &f : mesh.faces) {
        const Vec3 &a = mesh.vertices[f[0]], &b = mesh.vertices[f[1]], &c = mesh.vertices[f[2]];
        const double longest = std::max({(b - a).norm(), (c - b).norm(), (a - c).norm()});
        const int n = std::max(1, static_cast<int>(std::ceil(longest / max_edge)));
        // Lattice row r holds n - r + 1 points a + (i (b - a) + r (c - a)) / n.
        std::vector<std::vector<int>> ids(static_cast<std::size_t>(n) + 1);
        for (int r = 0; r <= n; ++r) {
            for (int i = 0; i <= n - r; ++i) {
                const int j = n - r - i;
                ids[r].push_back(vertex((static_cast<double>(j) * a + i * b + static_cast<double>(r) * c) / n));
            }
        }
        for (int r = 0; r < n; ++r) {
            for (int i = 0; i < n - r; ++i) {
                out.faces.push_back({ids[r][i], ids[r][i + 1], ids[r + 1][i]});
                if (i + 1 < n - r) out.faces.push_back({ids[r][i + 1], ids[r + 1][i + 1], ids[r + 1][i]});
            }
        }
    }
    return out;
}

std::vector<double> nearest_distances(const std::vector<Vec3> &query, const std::vector<Vec3> &reference) {
    using Point = bg::model::point<double, 3, bg::cs::cartesian>;
    std::vector<double> out(query.size(), std::numeric_limits<double>::infinity());
    if (reference.empty()) return out;
    std::vector<Point> pts;
    pts.reserve(reference.size());
    for (const auto &p : reference) pts.emplace_back(p.x(), p.y(), p.z());
    const bgi::rtree<Point, bgi::rstar<16>> tree(pts.begin(), pts.end());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < query.size(); ++i) {
        const Point q(query[i].x(), query[i].y(), query[i].z());
        for (auto it = tree.qbegin(bgi::nearest(q, 1)); it != tree.qend(); ++it) out[i] = bg::distance(q, *it);
    }
    return out;
}

double chamfer_distance(const std::vector<Vec3> &a, const std::vector<Vec3> &b) {
    if (a.empty() && b.empty()) return 0.0;
    if (a.empty() || b.empty()) return std::numeric_limits<double>::infinity();
    auto mean = [](const std::vector<double> &d) {
        double s = 0.0;
        for (double x : d) s += x;
        return s / static_cast<double>(d.size());
    };
    return 0.5 * (mean(nearest_distances(a, b)) + mean(nearest_distances(b, a)));
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["abs_err"] = abs_err;
    j["acc_2cm"] = acc_2cm;
    j["acc_5cm"] = acc_5cm;
    j["acc_10cm"] = acc_10cm;
    j["chamfer"] = chamfer;
    j["runtime"] = runtime;
    j["pixels"] = pixels;
    return j.dump();
}

std::string EvalReport::table() const {
    return fmt::format("{:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n{:>10.4f} {:>10.4f} {:>10.4f} {:>10.4f} {:>10.4f} {:>10.2f}\n",
                       "Abs Err", "Acc@2cm", "Acc@5cm", "Acc@10cm", "Chamfer", "Runtime", abs_err, acc_2cm, acc_5cm,
                       acc_10cm, chamfer, runtime);
}

EvalReport evaluate(const TriangleMesh &pred_mesh, const std::vector<Image> &pred_depths,
                    const std::vector<View> &views, const SceneBundle &scene, const EvalOptions &options) {
    if (!scene.gt_mesh || scene.gt_mesh->empty()) throw MissingGroundTruth("evaluation needs the ground-truth mesh");
    if (pred_depths.size() != views.size()) throw ShapeError("one predicted depth map per evaluated view is required");
    EvalReport r;
    std::size_t n2 = 0, n5 = 0, n10 = 0;
    double sum = 0.0;
    for (std::size_t v = 0; v < views.size(); ++v) {
        const View &view = views[v];
        if (!view.has_depth()) throw MissingGroundTruth("view '" + view.name + "' has no ground-truth depth");
        const Image &pred = pred_depths[v];
        if (pred.height != view.gt_depth.height || pred.width != view.gt_depth.width) {
            throw ShapeError("predicted depth of view '" + view.name + "' has the wrong size");
        }
        for (std::size_t p = 0; p < pred.pixels(); ++p) {
            const double gt = view.gt_depth.data[p];
            if (!(gt > 0.0)) continue;
            const double e = std::abs(pred.data[p] - gt);
            sum += e;
            n2 += e <= 0.02;
            n5 += e <= 0.05;
            n10 += e <= 0.10;
            ++r.pixels;
        }
    }
    if (r.pixels > 0) {
        const double n = static_cast<double>(r.pixels);
        r.abs_err = sum / n;
        r.acc_2cm = static_cast<double>(n2) / n;
        r.acc_5cm = static_cast<double>(n5) / n;
        r.acc_10cm = static_cast<double>(n10) / n;
    }
    const Bbox box = scene.gt_mesh->bounds();
    std::vector<Vec3> pred;
    for (const auto &p : subdivide_mesh(pred_mesh, options.max_edge).vertices) {
        if (box.contains(p, options.crop_margin)) pred.push_back(p);
    }
    const TriangleMesh gt = subdivide_mesh(*scene.gt_mesh, options.max_edge);
    r.chamfer = chamfer_distance(pred, gt.vertices);
    return r;
}

} // namespace splatprior
