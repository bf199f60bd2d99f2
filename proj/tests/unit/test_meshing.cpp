// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/errors.hpp>
#include <splatprior/meshing.hpp>
#include <splatprior/renderer.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

using namespace splatprior;

namespace {

TSDFVolume sphere_volume(double radius, double voxel, double sign = 1.0) {
    TSDFVolume v = TSDFVolume::covering({Vec3::Constant(-1.0), Vec3::Constant(1.0)}, voxel, 4 * voxel);
    for (int k = 0; k < v.dims[2]; ++k) {
        for (int j = 0; j < v.dims[1]; ++j) {
            for (int i = 0; i < v.dims[0]; ++i) {
                const double d = (v.point(i, j, k).norm() - radius) / v.truncation;
                v.sdf[v.index(i, j, k)] = sign * std::clamp(d, -1.0, 1.0);
                v.weight[v.index(i, j, k)] = 1.0;
            }
        }
    }
    return v;
}

View frontal_view(int w = 64, int h = 48) {
    View v;
    v.name = "frontal.png";
    v.intrinsics = {50.0, 50.0, w / 2.0, h / 2.0, w, h};
    return v;
}

// Directed edge counts of a triangle soup; interior edges of a closed,
// consistently wound surface appear once per direction.
std::map<std::pair<int, int>, int> directed_edges(const TriangleMesh &m) {
    std::map<std::pair<int, int>, int> e;
    for (const auto &f : m.faces) {
        for (int s = 0; s < 3; ++s) ++e[{f[s], f[(s + 1) % 3]}];
    }
    return e;
}

using TriKey = std::array<std::array<long long, 3>, 3>;

std::array<long long, 3> quantized(const Vec3 &p) {
    return {std::llround(p.x() * 1e9), std::llround(p.y() * 1e9), std::llround(p.z() * 1e9)};
}

// Triangles by vertex position, rotated so the smallest corner comes first.
std::multiset<TriKey> triangle_set(const TriangleMesh &m, bool reverse) {
    std::multiset<TriKey> out;
    for (const auto &f : m.faces) {
        TriKey t{quantized(m.vertices[f[0]]), quantized(m.vertices[f[1]]), quantized(m.vertices[f[2]])};
        if (reverse) std::swap(t[1], t[2]);
        std::rotate(t.begin(), std::min_element(t.begin(), t.end()), t.end());
        out.insert(t);
    }
    return out;
}

double brute_chamfer(const std::vector<Vec3> &a, const std::vector<Vec3> &b) {
    auto one = [](const std::vector<Vec3> &x, const std::vector<Vec3> &y) {
        double s = 0;
        for (const auto &p : x) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto &q : y) best = std::min(best, (p - q).norm());
            s += best;
        }
        return s / static_cast<double>(x.size());
    };
    return 0.5 * (one(a, b) + one(b, a));
}

SceneBundle small_scene() {
    RoomSpec r;
    r.dimensions = Vec3(1.6, 1.2, 1.0);
    r.camera_count = 2;
    r.image_width = 32;
    r.image_height = 24;
    r.sample_density = 2000.0;
    return generate_synthetic_room(r);
}

} // namespace

TEST(Meshing, SphereVerticesLieOnTheSphere) {
    const double voxel = 0.02;
    const TriangleMesh m = marching_cubes(sphere_volume(0.5, voxel));
    ASSERT_GT(m.faces.size(), 1000u);
    double mean = 0.0;
    for (const auto &p : m.vertices) {
        EXPECT_LT(std::abs(p.norm() - 0.5), voxel);
        mean += std::abs(p.norm() - 0.5);
    }
    mean /= static_cast<double>(m.vertices.size());
    EXPECT_LT(mean, 0.25 * voxel);
}

TEST(Meshing, SphereIsClosedAndWoundOutward) {
    const TriangleMesh m = marching_cubes(sphere_volume(0.47, 0.05));
    const auto edges = directed_edges(m);
    for (const auto &[e, n] : edges) {
        EXPECT_EQ(n, 1);
        EXPECT_EQ(edges.count({e.second, e.first}), 1u);
    }
    for (std::size_t f = 0; f < m.faces.size(); ++f) {
        const Vec3 c = (m.vertices[m.faces[f][0]] + m.vertices[m.faces[f][1]] + m.vertices[m.faces[f][2]]) / 3.0;
        const Vec3 &a = m.vertices[m.faces[f][0]], &b = m.vertices[m.faces[f][1]], &d = m.vertices[m.faces[f][2]];
        EXPECT_GT((b - a).cross(d - a).dot(c), 0.0);
    }
}

TEST(Meshing, RandomFieldsGiveConsistentlyWoundSurfaces) {
    // Exercises every cube configuration, ambiguous faces included.
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        TSDFVolume v = TSDFVolume::covering({Vec3::Zero(), Vec3::Constant(0.7)}, 0.1, 0.4);
        for (std::size_t c = 0; c < v.cells(); ++c) {
            v.sdf[c] = u(rng);
            v.weight[c] = 1.0;
        }
        const TriangleMesh m = marching_cubes(v);
        const auto edges = directed_edges(m);
        auto on_boundary = [&](int a, int b) {
            const Vec3 p = m.vertices[a], q = m.vertices[b];
            for (int ax = 0; ax < 3; ++ax) {
                for (double wall : {0.0, 0.7}) {
                    if (std::abs(p[ax] - wall) < 1e-12 && std::abs(q[ax] - wall) < 1e-12) return true;
                }
            }
            return false;
        };
        for (const auto &[e, n] : edges) {
            EXPECT_EQ(n, 1) << "trial " << trial;
            if (!on_boundary(e.first, e.second)) {
                EXPECT_EQ(edges.count({e.second, e.first}), 1u) << "trial " << trial;
            }
        }
    }
}

TEST(Meshing, AllPositiveVolumeIsEmpty) {
    TSDFVolume v = TSDFVolume::covering({Vec3::Zero(), Vec3::Ones()}, 0.1, 0.4);
    std::fill(v.weight.begin(), v.weight.end(), 1.0);
    EXPECT_TRUE(marching_cubes(v).empty());
    // Unobserved cells are never meshed.
    for (std::size_t c = 0; c < v.cells(); ++c) v.sdf[c] = (c % 2) ? 0.5 : -0.5;
    std::fill(v.weight.begin(), v.weight.end(), 0.0);
    EXPECT_TRUE(marching_cubes(v).empty());
}

TEST(Meshing, FlippedSignInvertsWinding) {
    const TriangleMesh a = marching_cubes(sphere_volume(0.43, 0.05, 1.0));
    const TriangleMesh b = marching_cubes(sphere_volume(0.43, 0.05, -1.0));
    ASSERT_EQ(a.faces.size(), b.faces.size());
    EXPECT_EQ(triangle_set(a, false), triangle_set(b, true));
}

TEST(Meshing, MarchingCubesIsDeterministic) {
    const TSDFVolume v = sphere_volume(0.3, 0.05);
    const TriangleMesh a = marching_cubes(v), b = marching_cubes(v);
    EXPECT_EQ(a.vertices, b.vertices);
    EXPECT_EQ(a.faces, b.faces);
}

TEST(Meshing, FrontalPlaneCrossesAtItsDepth) {
    const View view = frontal_view();
    const Image depth(48, 64, 1, 1.0);
    TSDFVolume v = TSDFVolume::covering({Vec3(-0.3, -0.2, 0.8), Vec3(0.3, 0.2, 1.2)}, 0.02, 0.08);
    tsdf_integrate(v, depth, view, nullptr);
    int columns = 0;
    for (int j = 0; j < v.dims[1]; ++j) {
        for (int i = 0; i < v.dims[0]; ++i) {
            for (int k = 0; k + 1 < v.dims[2]; ++k) {
                const std::size_t a = v.index(i, j, k), b = v.index(i, j, k + 1);
                if (v.weight[a] == 0 || v.weight[b] == 0) continue;
                if ((v.sdf[a] >= 0) != (v.sdf[b] >= 0)) {
                    const double za = v.point(i, j, k).z();
                    const double z = za + v.voxel_size * v.sdf[a] / (v.sdf[a] - v.sdf[b]);
                    EXPECT_LT(std::abs(z - 1.0), 0.5 * v.voxel_size);
                    ++columns;
                }
            }
        }
    }
    EXPECT_EQ(columns, v.dims[0] * v.dims[1]);
    const TriangleMesh m = marching_cubes(v);
    ASSERT_FALSE(m.empty());
    for (const auto &p : m.vertices) EXPECT_NEAR(p.z(), 1.0, 1e-9);
}

TEST(Meshing, IntegratingTwiceDoublesWeight) {
    const View view = frontal_view();
    Image depth(48, 64, 1);
    for (int r = 0; r < 48; ++r) {
        for (int c = 0; c < 64; ++c) depth.at(r, c) = 0.9 + 0.003 * c;
    }
    TSDFVolume a = TSDFVolume::covering({Vec3(-0.3, -0.2, 0.8), Vec3(0.3, 0.2, 1.2)}, 0.02, 0.08);
    tsdf_integrate(a, depth, view);
    TSDFVolume b = a;
    tsdf_integrate(b, depth, view);
    EXPECT_EQ(a.sdf, b.sdf);
    for (std::size_t c = 0; c < a.cells(); ++c) EXPECT_EQ(b.weight[c], 2.0 * a.weight[c]);
}

TEST(Meshing, InvalidDepthLeavesVolumeUnchanged) {
    const View view = frontal_view();
    const TSDFVolume fresh = TSDFVolume::covering({Vec3(-0.3, -0.2, 0.8), Vec3(0.3, 0.2, 1.2)}, 0.02, 0.08);
    TSDFVolume v = fresh;
    tsdf_integrate(v, Image(48, 64, 1, 0.0), view);
    EXPECT_EQ(v.sdf, fresh.sdf);
    EXPECT_EQ(v.weight, fresh.weight);
    const Image alpha(48, 64, 1, 0.49);
    tsdf_integrate(v, Image(48, 64, 1, 1.0), view, &alpha);
    EXPECT_EQ(v.weight, fresh.weight);
    EXPECT_THROW(tsdf_integrate(v, Image(10, 10, 1, 1.0), view), ShapeError);
}

TEST(Meshing, FusionIsOrderInvariant) {
    View v1 = frontal_view(), v2 = frontal_view();
    v2.pose = look_at(Vec3(0.3, 0.1, -0.2), Vec3(0, 0, 1), Vec3(0, -1, 0));
    Image d1(48, 64, 1), d2(48, 64, 1);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.9, 1.1);
    for (auto &x : d1.data) x = u(rng);
    for (auto &x : d2.data) x = u(rng);
    TSDFVolume a = TSDFVolume::covering({Vec3(-0.3, -0.2, 0.8), Vec3(0.3, 0.2, 1.2)}, 0.02, 0.08), b = a;
    tsdf_integrate(a, d1, v1);
    tsdf_integrate(a, d2, v2);
    tsdf_integrate(b, d2, v2);
    tsdf_integrate(b, d1, v1);
    EXPECT_EQ(a.weight, b.weight);
    for (std::size_t c = 0; c < a.cells(); ++c) EXPECT_NEAR(a.sdf[c], b.sdf[c], 1e-9);
    EXPECT_NO_THROW(a.validate());
}

TEST(Meshing, VolumeValidation) {
    TSDFVolume v = TSDFVolume::covering({Vec3::Zero(), Vec3::Ones()}, 0.25, 0.5);
    EXPECT_EQ(v.dims[0], 5);
    EXPECT_NO_THROW(v.validate());
    v.sdf[3] = 1.5;
    EXPECT_THROW(v.validate(), ValidationError);
    v.sdf[3] = 0.0;
    v.weight[2] = -1.0;
    EXPECT_THROW(v.validate(), ValidationError);
    EXPECT_THROW(TSDFVolume::covering({Vec3::Ones(), Vec3::Zero()}), ValidationError);
}

TEST(Meshing, ExtractedPlaneFromSplats) {
    std::vector<Gaussian2D> splats;
    for (double x = -0.9; x <= 0.9; x += 0.02) {
        for (double y = -0.7; y <= 0.7; y += 0.02) {
            Gaussian2D g;
            g.center = Vec3(x, y, 1.0);
            g.scales = Vec2(0.02, 0.02);
            g.color = Vec3(0.5, 0.5, 0.5);
            splats.push_back(g);
        }
    }
    const TriangleMesh m = extract_mesh(splats, {frontal_view()}, {Vec3(-0.3, -0.2, 0.9), Vec3(0.3, 0.2, 1.1)});
    ASSERT_FALSE(m.empty());
    for (const auto &p : m.vertices) EXPECT_NEAR(p.z(), 1.0, 0.01);
}

TEST(Meshing, RasterizedDepthOfPlane) {
    TriangleMesh plane;
    plane.vertices = {Vec3(-5, -5, 2), Vec3(5, -5, 2), Vec3(5, 5, 2), Vec3(-5, 5, 2)};
    plane.faces = {{0, 1, 2}, {0, 2, 3}};
    const Image d = rasterize_depth(plane, frontal_view());
    for (double x : d.data) EXPECT_NEAR(x, 2.0, 1e-9);
    EXPECT_EQ(rasterize_depth(TriangleMesh{}, frontal_view()).data, Image(48, 64, 1).data);
}

TEST(Meshing, SubdivisionBoundsEdgesAndKeepsArea) {
    TriangleMesh t;
    t.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 0.5, 0), Vec3(1, 1, 0)};
    t.faces = {{0, 1, 2}, {1, 3, 2}};
    const TriangleMesh s = subdivide_mesh(t, 0.1);
    double area = 0, sub_area = 0;
    for (std::size_t f = 0; f < t.faces.size(); ++f) area += t.face_area(f);
    for (std::size_t f = 0; f < s.faces.size(); ++f) {
        sub_area += s.face_area(f);
        for (int e = 0; e < 3; ++e) {
            EXPECT_LE((s.vertices[s.faces[f][e]] - s.vertices[s.faces[f][(e + 1) % 3]]).norm(), 0.1 + 1e-12);
        }
    }
    EXPECT_NEAR(sub_area, area, 1e-12);
    // Every original corner survives once.
    for (const auto &p : t.vertices) EXPECT_EQ(std::count(s.vertices.begin(), s.vertices.end(), p), 1);
    EXPECT_THROW(subdivide_mesh(t, 0.0), ValidationError);
}

TEST(Meshing, ChamferMatchesBruteForce) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<Vec3> a(100), b(100);
        for (auto &p : a) p = Vec3(u(rng), u(rng), u(rng));
        for (auto &p : b) p = Vec3(u(rng), u(rng), u(rng));
        const double c = chamfer_distance(a, b);
        EXPECT_LT(std::abs(c - brute_chamfer(a, b)), 1e-9);
        EXPECT_EQ(c, chamfer_distance(b, a));
        EXPECT_EQ(chamfer_distance(a, a), 0.0);
    }
    EXPECT_EQ(chamfer_distance({}, {}), 0.0);
    EXPECT_TRUE(std::isinf(chamfer_distance({Vec3::Zero()}, {})));
}

TEST(Meshing, EvaluatePerfectPrediction) {
    const SceneBundle s = small_scene();
    std::vector<Image> depths;
    for (const auto &v : s.views) depths.push_back(v.gt_depth);
    const EvalReport r = evaluate(*s.gt_mesh, depths, s.views, s);
    EXPECT_EQ(r.abs_err, 0.0);
    EXPECT_EQ(r.acc_2cm, 1.0);
    EXPECT_EQ(r.acc_5cm, 1.0);
    EXPECT_EQ(r.acc_10cm, 1.0);
    EXPECT_EQ(r.chamfer, 0.0);
    EXPECT_EQ(r.pixels, 2u * 32u * 24u);
}

TEST(Meshing, EvaluateConstantDepthBias) {
    const SceneBundle s = small_scene();
    std::vector<Image> depths;
    for (const auto &v : s.views) {
        Image d = v.gt_depth;
        for (auto &x : d.data) x += 0.03;
        depths.push_back(d);
    }
    const EvalReport r = evaluate(*s.gt_mesh, depths, s.views, s);
    EXPECT_NEAR(r.abs_err, 0.03, 1e-12);
    EXPECT_EQ(r.acc_2cm, 0.0);
    EXPECT_EQ(r.acc_5cm, 1.0);
    EXPECT_EQ(r.acc_10cm, 1.0);
}

TEST(Meshing, AccuracyIsMonotoneInThreshold) {
    const SceneBundle s = small_scene();
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 0.05);
    std::vector<Image> depths;
    for (const auto &v : s.views) {
        Image d = v.gt_depth;
        for (auto &x : d.data) x = std::max(0.0, x + n(rng));
        depths.push_back(d);
    }
    const EvalReport r = evaluate(*s.gt_mesh, depths, s.views, s);
    EXPECT_LE(r.acc_2cm, r.acc_5cm);
    EXPECT_LE(r.acc_5cm, r.acc_10cm);
    EXPECT_GE(r.acc_2cm, 0.0);
    EXPECT_LE(r.acc_10cm, 1.0);
}

TEST(Meshing, EvaluateCropsOutsideVertices) {
    const SceneBundle s = small_scene();
    std::vector<Image> depths;
    for (const auto &v : s.views) depths.push_back(v.gt_depth);
    TriangleMesh pred = *s.gt_mesh;
    const int base = static_cast<int>(pred.vertices.size());
    pred.vertices.push_back(Vec3(10, 10, 10));
    pred.vertices.push_back(Vec3(10, 10.01, 10));
    pred.vertices.push_back(Vec3(10, 10, 10.01));
    pred.faces.push_back({base, base + 1, base + 2});
    EXPECT_EQ(evaluate(pred, depths, s.views, s).chamfer, 0.0);
}

TEST(Meshing, EvaluateNeedsGroundTruth) {
    SceneBundle s = small_scene();
    std::vector<Image> depths;
    for (const auto &v : s.views) depths.push_back(v.gt_depth);
    const TriangleMesh mesh = *s.gt_mesh;
    s.gt_mesh.reset();
    EXPECT_THROW(evaluate(mesh, depths, s.views, s), MissingGroundTruth);
    SceneBundle t = small_scene();
    t.views[0].gt_depth = Image();
    EXPECT_THROW(evaluate(mesh, depths, t.views, t), MissingGroundTruth);
    EXPECT_THROW(evaluate(mesh, {}, s.views, t), ShapeError);
}

TEST(Meshing, ReportFormats) {
    EvalReport r;
    r.abs_err = 0.05;
    r.chamfer = 0.07;
    EXPECT_NE(r.table().find("Acc@5cm"), std::string::npos);
    EXPECT_NE(r.to_json().find("\"chamfer\""), std::string::npos);
}
