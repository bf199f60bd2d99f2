// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/meshing.hpp>
#include <splatprior/nets.hpp>
#include <splatprior/renderer.hpp>

#include <benchmark/benchmark.h>

#include <algorithm>
#include <random>

using namespace splatprior;

namespace {

View bench_view(int width, int height) {
    View v;
    v.name = "bench.png";
    const double f = 0.8 * width;
    v.intrinsics = {f, f, 0.5 * width, 0.5 * height, width, height};
    v.image = Image(height, width, 3);
    return v;
}

// Splats on a jittered wall two meters in front of the camera.
std::vector<Gaussian2D> wall(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Gaussian2D> gs(n);
    for (auto &g : gs) {
        g.center = Vec3(1.6 * u(rng), 1.1 * u(rng), 2.0 + 0.02 * u(rng));
        g.scales = Vec2(0.02, 0.02) * (1.5 + u(rng));
        g.opacity = 0.7 + 0.25 * u(rng);
        g.color = Vec3(0.5 + 0.5 * u(rng), 0.5, 0.5 - 0.4 * u(rng));
    }
    return gs;
}

void BM_Render(benchmark::State &state) {
    const auto gs = wall(static_cast<std::size_t>(state.range(0)), 1);
    const View v = bench_view(192, 128);
    for (auto _ : state) benchmark::DoNotOptimize(render(gs, v));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Render)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_RenderBackward(benchmark::State &state) {
    const auto gs = wall(static_cast<std::size_t>(state.range(0)), 2);
    const View v = bench_view(192, 128);
    const RenderOutput out = render(gs, v);
    PixelGrads g;
    g.color = Image(128, 192, 3, 0.1);
    g.depth = Image(128, 192, 1, 0.1);
    for (auto _ : state) benchmark::DoNotOptimize(render_backward(gs, v, out, g));
}
BENCHMARK(BM_RenderBackward)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

// A slab of voxels two cells thick, like a wall surface.
SparseGrid slab(int side, int width) {
    SparseGrid g;
    g.edge = 0.04;
    g.frame = Bbox{Vec3::Zero(), Vec3::Constant(0.04 * side)};
    for (int i = 0; i < side; ++i) {
        for (int j = 0; j < side; ++j) {
            for (int k = 0; k < 2; ++k) g.keys.push_back({i, j, k});
        }
    }
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    g.features = Matrix(static_cast<Eigen::Index>(g.keys.size()), width);
    for (Eigen::Index r = 0; r < g.features.rows(); ++r) {
        for (Eigen::Index c = 0; c < width; ++c) g.features(r, c) = 0.1 * n(rng);
    }
    g.occupancy.assign(g.keys.size(), 0.9);
    g.reindex();
    return g;
}

void BM_OptimizerForward(benchmark::State &state) {
    const int F = 16;
    const SparseGrid g = slab(static_cast<int>(state.range(0)), F);
    OptimizerNet net(optimizer_config(F, 5), 4);
    GradBuffer grad = GradBuffer::zeros(g.size(), F);
    grad.values.setConstant(1e-3);
    for (auto _ : state) benchmark::DoNotOptimize(optimizer_forward(g, grad, 2, net));
    state.SetItemsProcessed(state.iterations() * static_cast<long>(g.size()));
}
BENCHMARK(BM_OptimizerForward)->Arg(16)->Arg(48)->Unit(benchmark::kMillisecond);

void BM_DensifierForward(benchmark::State &state) {
    const int F = 16;
    const SparseGrid g = slab(static_cast<int>(state.range(0)), F);
    DensifierNet net(densifier_config(F, 5), 5);
    const GradBuffer grad = GradBuffer::zeros(g.size(), F);
    for (auto _ : state) benchmark::DoNotOptimize(densifier_forward(g, grad, 0, net));
}
BENCHMARK(BM_DensifierForward)->Arg(16)->Arg(48)->Unit(benchmark::kMillisecond);

TSDFVolume sphere_volume(int n) {
    const double voxel = 1.2 / n;
    TSDFVolume v = TSDFVolume::covering(Bbox{Vec3::Constant(-0.6), Vec3::Constant(0.6)}, voxel, 4 * voxel);
    for (int k = 0; k < v.dims[2]; ++k) {
        for (int j = 0; j < v.dims[1]; ++j) {
            for (int i = 0; i < v.dims[0]; ++i) {
                const std::size_t c = v.index(i, j, k);
                v.sdf[c] = std::clamp((v.point(i, j, k).norm() - 0.45) / v.truncation, -1.0, 1.0);
                v.weight[c] = 1.0;
            }
        }
    }
    return v;
}

void BM_MarchingCubes(benchmark::State &state) {
    const TSDFVolume v = sphere_volume(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(marching_cubes(v));
    state.SetItemsProcessed(state.iterations() * static_cast<long>(v.cells()));
}
BENCHMARK(BM_MarchingCubes)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_TsdfIntegrate(benchmark::State &state) {
    const View v = bench_view(192, 128);
    const Image depth(128, 192, 1, 2.0);
    TSDFVolume vol = TSDFVolume::covering(Bbox{Vec3(-1.5, -1.0, 1.0), Vec3(1.5, 1.0, 3.0)}, 0.02, 0.08);
    for (auto _ : state) tsdf_integrate(vol, depth, v);
    state.SetItemsProcessed(state.iterations() * static_cast<long>(vol.cells()));
}
BENCHMARK(BM_TsdfIntegrate)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
