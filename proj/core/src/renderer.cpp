// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/errors.hpp>
#include <splatprior/renderer.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace splatprior {

namespace {

struct Prepared {
    Vec3 c, tu, tv, n;
    double su = 1, sv = 1, opacity = 0;
    Vec3 color;
    Mat3 R;
};

Prepared prepare(const Gaussian2D &g) {
    Prepared p;
    p.R = quat_to_matrix(g.rotation);
    p.c = g.center;
    p.tu = p.R.col(0);
    p.tv = p.R.col(1);
    p.n = p.R.col(2);
    p.su = g.scales[0];
    p.sv = g.scales[1];
    p.opacity = g.opacity;
    p.color = g.color;
    return p;
}

struct Hit {
    double t, u, v, gauss, denom;
    Vec3 delta;
};

// Plane intersection in ray-parameter units; the caller applies its near test.
bool intersect_plane(const Prepared &p, const Vec3 &o, const Vec3 &d, Hit &h) {
    h.denom = p.n.dot(d);
    if (std::abs(h.denom) < 1e-8) {
        return false;
    }
    h.t = p.n.dot(p.c - o) / h.denom;
    h.delta = o + h.t * d - p.c;
    h.u = h.delta.dot(p.tu) / p.su;
    h.v = h.delta.dot(p.tv) / p.sv;
    return true;
}

struct PixelRay {
    Vec3 o, d;
    double dz; // camera-z per unit ray parameter
};

PixelRay make_ray(const View &view, int row, int col) {
    const Ray r = pixel_ray(view.intrinsics, view.pose, row, col);
    return {r.origin, r.dir, view.pose.R.row(2).dot(r.dir)};
}

// Fragment test shared by render and render_backward.
bool fragment(const Prepared &p, const PixelRay &ray, const RenderSettings &s, Hit &h, double &alpha, double &z) {
    if (!intersect_plane(p, ray.o, ray.d, h)) {
        return false;
    }
    z = h.t * ray.dz;
    if (z <= s.near) {
        return false;
    }
    const double rho = h.u * h.u + h.v * h.v;
    if (rho > s.cutoff * s.cutoff) {
        return false;
    }
    h.gauss = std::exp(-0.5 * rho);
    alpha = p.opacity * h.gauss;
    return alpha >= kMinAlpha;
}

// Conservative pixel bounds of a splat's cutoff parallelogram; false when off screen.
// zmin receives a lower bound of the camera z over the quad.
bool screen_bounds(const Prepared &p, const View &view, const RenderSettings &s, int &x0, int &x1, int &y0, int &y1,
                   double &zmin) {
    const auto &K = view.intrinsics;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    Vec3 q[4];
    int behind = 0;
    for (int c = 0; c < 4; ++c) {
        const double a = (c & 1) ? s.cutoff : -s.cutoff, b = (c & 2) ? s.cutoff : -s.cutoff;
        q[c] = view.pose.to_camera(p.c + a * p.su * p.tu + b * p.sv * p.tv);
        behind += q[c].z() <= s.near;
    }
    // Camera z is affine over the quad, so a quad behind the near plane at all
    // four corners cannot produce a fragment.
    if (behind == 4) return false;
    zmin = -std::numeric_limits<double>::infinity();
    if (behind > 0) {
        x0 = 0;
        y0 = 0;
        x1 = K.width - 1;
        y1 = K.height - 1;
        return true;
    }
    zmin = std::min({q[0].z(), q[1].z(), q[2].z(), q[3].z()});
    zmin -= 1e-9 * (1.0 + zmin);
    for (int c = 0; c < 4; ++c) {
        const double x = K.fx * q[c].x() / q[c].z() + K.cx, y = K.fy * q[c].y() / q[c].z() + K.cy;
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
    }
    // Pixel centers sit at +0.5; one pixel of slack absorbs rounding.
    x0 = static_cast<int>(std::max(0.0, std::floor(xmin - 1.5)));
    x1 = static_cast<int>(std::min<double>(K.width - 1, std::ceil(xmax + 0.5)));
    y0 = static_cast<int>(std::max(0.0, std::floor(ymin - 1.5)));
    y1 = static_cast<int>(std::min<double>(K.height - 1, std::ceil(ymax + 0.5)));
    return x0 <= x1 && y0 <= y1;
}

template <typename T> void hash_value(std::uint64_t &h, const T &v) { h = fnv1a(&v, sizeof(T), h); }

} // namespace

std::optional<SplatHit> ray_splat_intersect(const Gaussian2D &g, const Ray &ray, double near) {
    const Prepared p = prepare(g);
    Hit h;
    if (!intersect_plane(p, ray.origin, ray.dir, h) || h.t <= near) {
        return std::nullopt;
    }
    return SplatHit{h.u, h.v, h.t};
}

std::uint64_t render_hash(const std::vector<Gaussian2D> &gaussians, const View &view, const RenderSettings &s) {
    std::uint64_t h = fnv1a(nullptr, 0);
    for (const auto &g : gaussians) {
        h = fnv1a(g.center.data(), 3 * sizeof(double), h);
        h = fnv1a(g.scales.data(), 2 * sizeof(double), h);
        h = fnv1a(g.rotation.data(), 4 * sizeof(double), h);
        hash_value(h, g.opacity);
        h = fnv1a(g.color.data(), 3 * sizeof(double), h);
    }
    const auto &K = view.intrinsics;
    hash_value(h, K.fx);
    hash_value(h, K.fy);
    hash_value(h, K.cx);
    hash_value(h, K.cy);
    hash_value(h, K.width);
    hash_value(h, K.height);
    h = fnv1a(view.pose.R.data(), 9 * sizeof(double), h);
    h = fnv1a(view.pose.t.data(), 3 * sizeof(double), h);
    hash_value(h, s.near);
    hash_value(h, s.cutoff);
    hash_value(h, s.tile);
    return h;
}

RenderOutput render(const std::vector<Gaussian2D> &gaussians, const View &view, const RenderSettings &settings) {
    const auto &K = view.intrinsics;
    const int H = K.height, W = K.width;
    if (H <= 0 || W <= 0) {
        throw ValidationError("view has an empty image size");
    }
    const int ts = std::max(1, settings.tile);
    RenderOutput out;
    out.settings = settings;
    out.color = Image(H, W, 3);
    out.depth = Image(H, W, 1);
    out.normal = Image(H, W, 3);
    out.alpha = Image(H, W, 1);
    out.input_hash = render_hash(gaussians, view, settings);

    std::vector<Prepared> prep(gaussians.size());
    for (std::size_t g = 0; g < gaussians.size(); ++g) {
        const Gaussian2D &q = gaussians[g];
        if (!q.center.allFinite() || !q.scales.allFinite() || !q.rotation.allFinite() || !std::isfinite(q.opacity) ||
            !q.color.allFinite()) {
            throw NumericalError(fmt::format("Gaussian {} has non-finite parameters", g));
        }
        prep[g] = prepare(q);
    }

    const int tiles_x = (W + ts - 1) / ts, tiles_y = (H + ts - 1) / ts;
    std::vector<std::vector<int>> bins(static_cast<std::size_t>(tiles_x) * tiles_y);
    std::vector<double> zmin(prep.size(), 0.0);
    std::vector<std::array<int, 4>> rect(prep.size());
    for (std::size_t g = 0; g < prep.size(); ++g) {
        if (prep[g].opacity < kMinAlpha) continue;
        int x0, x1, y0, y1;
        if (!screen_bounds(prep[g], view, settings, x0, x1, y0, y1, zmin[g])) continue;
        rect[g] = {x0, x1, y0, y1};
        for (int ty = y0 / ts; ty <= y1 / ts; ++ty) {
            for (int tx = x0 / ts; tx <= x1 / ts; ++tx) {
                bins[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(static_cast<int>(g));
            }
        }
    }
    auto later = [](const Fragment &a, const Fragment &b) {
        return a.z != b.z ? a.z > b.z : a.gaussian > b.gaussian;
    };

    std::vector<std::vector<Fragment>> tile_frags(bins.size());
    std::vector<std::size_t> counts(static_cast<std::size_t>(H) * W, 0);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t tile = 0; tile < static_cast<std::ptrdiff_t>(bins.size()); ++tile) {
        const int tx = static_cast<int>(tile % tiles_x), ty = static_cast<int>(tile / tiles_x);
        auto &bin = bins[tile];
        // Splats are visited by their depth lower bound, so a candidate can be
        // composited once no unvisited splat could land in front of it.
        std::sort(bin.begin(), bin.end(), [&](int a, int b) { return zmin[a] != zmin[b] ? zmin[a] < zmin[b] : a < b; });
        auto &frags = tile_frags[tile];
        std::vector<Fragment> heap;
        for (int i = ty * ts; i < std::min(H, (ty + 1) * ts); ++i) {
            for (int j = tx * ts; j < std::min(W, (tx + 1) * ts); ++j) {
                const PixelRay ray = make_ray(view, i, j);
                heap.clear();
                double T = 1.0, A = 0.0, D = 0.0;
                Vec3 C = Vec3::Zero(), N = Vec3::Zero();
                std::size_t kept = 0;
                bool done = false;
                auto flush = [&](double bound) {
                    while (!heap.empty() && heap.front().z < bound) {
                        if (T < kMinTransmittance) {
                            done = true;
                            return;
                        }
                        std::pop_heap(heap.begin(), heap.end(), later);
                        Fragment f = heap.back();
                        heap.pop_back();
                        f.T = T;
                        const double w = f.alpha * T;
                        C += w * prep[f.gaussian].color;
                        N += w * prep[f.gaussian].n;
                        D += w * f.z;
                        A += w;
                        T *= 1.0 - f.alpha;
                        frags.push_back(f);
                        ++kept;
                    }
                    if (T < kMinTransmittance) done = true;
                };
                for (int g : bin) {
                    flush(zmin[g]);
                    if (done) break;
                    const auto &r = rect[g];
                    if (j < r[0] || j > r[1] || i < r[2] || i > r[3]) continue;
                    Hit h;
                    double a, z;
                    if (fragment(prep[g], ray, settings, h, a, z)) {
                        heap.push_back({g, a, z, 1.0});
                        std::push_heap(heap.begin(), heap.end(), later);
                    }
                }
                if (!done) flush(std::numeric_limits<double>::infinity());
                const std::size_t pix = static_cast<std::size_t>(i) * W + j;
                counts[pix] = kept;
                for (int c = 0; c < 3; ++c) {
                    out.color.data[pix * 3 + c] = C[c];
                    out.normal.data[pix * 3 + c] = N[c];
                }
                out.alpha.data[pix] = A;
                out.depth.data[pix] = D / std::max(A, 1e-6);
            }
        }
    }

    out.offsets.assign(counts.size() + 1, 0);
    for (std::size_t p = 0; p < counts.size(); ++p) out.offsets[p + 1] = out.offsets[p] + counts[p];
    out.fragments.resize(out.offsets.back());
    for (std::size_t tile = 0; tile < bins.size(); ++tile) {
        const int tx = static_cast<int>(tile % tiles_x), ty = static_cast<int>(tile / tiles_x);
        std::size_t cursor = 0;
        for (int i = ty * ts; i < std::min(H, (ty + 1) * ts); ++i) {
            for (int j = tx * ts; j < std::min(W, (tx + 1) * ts); ++j) {
                const std::size_t pix = static_cast<std::size_t>(i) * W + j;
                std::copy_n(tile_frags[tile].begin() + cursor, counts[pix], out.fragments.begin() + out.offsets[pix]);
                cursor += counts[pix];
            }
        }
    }
    return out;
}

GaussianGrads render_backward(const std::vector<Gaussian2D> &gaussians, const View &view, const RenderOutput &output,
                              const PixelGrads &grads) {
    if (render_hash(gaussians, view, output.settings) != output.input_hash) {
        throw StaleCache("render output was produced from different inputs");
    }
    const auto &K = view.intrinsics;
    const int W = K.width;
    const std::size_t pixels = static_cast<std::size_t>(K.height) * W;
    const bool has_c = !grads.color.empty(), has_d = !grads.depth.empty(), has_n = !grads.normal.empty(),
               has_a = !grads.alpha.empty(), has_fw = !grads.fragment_weight.empty(),
               has_fz = !grads.fragment_depth.empty();
    if ((has_c && grads.color.pixels() != pixels) || (has_d && grads.depth.pixels() != pixels) ||
        (has_n && grads.normal.pixels() != pixels) || (has_a && grads.alpha.pixels() != pixels) ||
        (has_fw && grads.fragment_weight.size() != output.fragments.size()) ||
        (has_fz && grads.fragment_depth.size() != output.fragments.size())) {
        throw ShapeError("pixel gradients do not match the render output");
    }
    std::vector<Prepared> prep(gaussians.size());
    for (std::size_t g = 0; g < gaussians.size(); ++g) prep[g] = prepare(gaussians[g]);

    std::vector<GaussianGrad> contrib(output.fragments.size());
#pragma omp parallel for schedule(dynamic, 64)
    for (std::ptrdiff_t pix = 0; pix < static_cast<std::ptrdiff_t>(pixels); ++pix) {
        const std::size_t begin = output.offsets[pix], end = output.offsets[pix + 1];
        if (begin == end) continue;
        const int i = static_cast<int>(pix / W), j = static_cast<int>(pix % W);
        const PixelRay ray = make_ray(view, i, j);
        const Vec3 gC = has_c ? Vec3(grads.color.data[pix * 3], grads.color.data[pix * 3 + 1], grads.color.data[pix * 3 + 2])
                              : Vec3::Zero();
        const Vec3 gN = has_n ? Vec3(grads.normal.data[pix * 3], grads.normal.data[pix * 3 + 1],
                                     grads.normal.data[pix * 3 + 2])
                              : Vec3::Zero();
        double A = 0.0, D = 0.0;
        for (std::size_t f = begin; f < end; ++f) {
            const auto &fr = output.fragments[f];
            A += fr.alpha * fr.T;
            D += fr.alpha * fr.T * fr.z;
        }
        const double gdepth = has_d ? grads.depth.data[pix] : 0.0;
        const double gD = gdepth / std::max(A, 1e-6);
        const double gA = (has_a ? grads.alpha.data[pix] : 0.0) + (A > 1e-6 ? -gdepth * D / (A * A) : 0.0);

        // Back-to-front: B accumulates the value of everything behind fragment f.
        double B = 0.0;
        for (std::size_t f = end; f-- > begin;) {
            const auto &fr = output.fragments[f];
            const Prepared &p = prep[fr.gaussian];
            const double w = fr.alpha * fr.T;
            const double g_w = gC.dot(p.color) + gD * fr.z + gN.dot(p.n) + gA + (has_fw ? grads.fragment_weight[f] : 0.0);
            const double d_alpha = fr.T * (g_w - B);
            B = g_w * fr.alpha + (1.0 - fr.alpha) * B;

            Hit h{};
            double a_chk, z_chk;
            fragment(p, ray, output.settings, h, a_chk, z_chk);
            GaussianGrad &out = contrib[f];
            out.color = gC * w;
            out.opacity = d_alpha * h.gauss;
            const double d_gauss = d_alpha * p.opacity;
            const double du = -d_gauss * h.u * h.gauss, dv = -d_gauss * h.v * h.gauss;
            const Vec3 d_delta = du * p.tu / p.su + dv * p.tv / p.sv;
            out.scales = Vec2(-du * h.u / p.su, -dv * h.v / p.sv);
            const Vec3 d_tu = du * h.delta / p.su, d_tv = dv * h.delta / p.sv;
            const double dz = gD * w + (has_fz ? grads.fragment_depth[f] : 0.0);
            const double dt = dz * ray.dz + d_delta.dot(ray.d);
            out.center = -d_delta + dt * p.n / h.denom;
            const Vec3 d_n = gN * w - dt * h.delta / h.denom;
            Mat3 dR;
            dR.col(0) = d_tu;
            dR.col(1) = d_tv;
            dR.col(2) = d_n;
            out.rotation = quat_matrix_backward(gaussians[fr.gaussian].rotation, dR);
        }
    }
    GaussianGrads result(gaussians.size());
    for (std::size_t f = 0; f < output.fragments.size(); ++f) {
        result[output.fragments[f].gaussian] += contrib[f];
    }
    return result;
}

void dump_render(const RenderOutput &output, const std::filesystem::path &stem) {
    write_png(stem.string() + "_color.png", output.color);
    Image n = output.normal;
    for (auto &v : n.data) v = std::clamp(0.5 * (v + 1.0), 0.0, 1.0);
    write_png(stem.string() + "_normal.png", n);
    write_depth_png(stem.string() + "_depth.png", output.depth);
}

} // namespace splatprior
