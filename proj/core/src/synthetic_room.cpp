// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
// Procedural indoor scenes standing in for scanned rooms: a textured box room,
// a few objects, outward-looking cameras, ray-cast depth and normals, and an
// SfM-like point cloud that is sparse on textureless surfaces.

#include <splatprior/bvh.hpp>
#include <splatprior/errors.hpp>
#include <splatprior/scene_io.hpp>

#include <fmt/format.h>

#include <cmath>
#include <numbers>
#include <random>

namespace splatprior {

namespace {

constexpr int kRoomSurfaces = 6;
constexpr double kTrimWidth = 0.12;
constexpr double kStripe = 0.015;

struct Rect {
    double a0, a1, b0, b1;
    bool contains(double a, double b) const { return a >= a0 && a <= a1 && b >= b0 && b <= b1; }
};

enum class Shape { Box, Sphere };

struct Object {
    Shape shape;
    Vec3 lo, hi;   // box extent
    Vec3 center;   // sphere
    double radius = 0;
    Vec3 color_a, color_b;
};

struct TextureModel {
    Vec3 dims;
    std::array<Vec3, kRoomSurfaces> base;
    std::array<std::optional<Rect>, kRoomSurfaces> poster;
    std::array<Vec3, kRoomSurfaces> poster_a, poster_b;
    std::vector<Object> objects;

    // In-plane coordinates (a, b) and their extents for a room surface.
    void plane_coords(int sid, const Vec3 &p, double &a, double &b, double &amax, double &bmax) const {
        switch (sid / 2) {
        case 0: a = p.y(); b = p.z(); amax = dims.y(); bmax = dims.z(); break;
        case 1: a = p.x(); b = p.z(); amax = dims.x(); bmax = dims.z(); break;
        default: a = p.x(); b = p.y(); amax = dims.x(); bmax = dims.y(); break;
        }
    }

    Vec3 albedo(const Vec3 &p, int sid) const {
        if (sid < kRoomSurfaces) {
            double a, b, amax, bmax;
            plane_coords(sid, p, a, b, amax, bmax);
            const double border = std::min(std::min(a, amax - a), std::min(b, bmax - b));
            if (border < kTrimWidth) {
                const bool dark = static_cast<long>(std::floor(std::max(border, 0.0) / kStripe)) % 2 == 1;
                return dark ? Vec3(0.25, 0.2, 0.18) : Vec3(0.85, 0.8, 0.7);
            }
            if (poster[sid] && poster[sid]->contains(a, b)) {
                const long cell = static_cast<long>(std::floor(a / 0.04)) + static_cast<long>(std::floor(b / 0.04));
                return (cell & 1) ? poster_a[sid] : poster_b[sid];
            }
            return base[sid];
        }
        const Object &o = objects[sid - kRoomSurfaces];
        if (o.shape == Shape::Box) {
            const long cell = static_cast<long>(std::floor(p.x() / 0.03)) + static_cast<long>(std::floor(p.y() / 0.03)) +
                              static_cast<long>(std::floor(p.z() / 0.03));
            return (cell & 1) ? o.color_a : o.color_b;
        }
        const Vec3 d = (p - o.center).normalized();
        const double lon = std::atan2(d.y(), d.x());
        const long band = static_cast<long>(std::floor((lon + std::numbers::pi) / (std::numbers::pi / 12)));
        return (band & 1) ? o.color_a : o.color_b;
    }
};

double luminance(const Vec3 &c) { return 0.299 * c.x() + 0.587 * c.y() + 0.114 * c.z(); }

double quantize(double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

void add_quad(TriangleMesh &m, std::vector<int> &surface, int sid, const Vec3 &a, const Vec3 &b, const Vec3 &c,
              const Vec3 &d, const Vec3 &normal) {
    const int base = static_cast<int>(m.vertices.size());
    m.vertices.insert(m.vertices.end(), {a, b, c, d});
    const Vec3 n = (b - a).cross(c - a);
    if (n.dot(normal) >= 0) {
        m.faces.push_back({base, base + 1, base + 2});
        m.faces.push_back({base, base + 2, base + 3});
    } else {
        m.faces.push_back({base, base + 2, base + 1});
        m.faces.push_back({base, base + 3, base + 2});
    }
    surface.push_back(sid);
    surface.push_back(sid);
}

void add_box(TriangleMesh &m, std::vector<int> &surface, int sid, const Vec3 &lo, const Vec3 &hi, bool inward) {
    const double s = inward ? 1.0 : -1.0;
    auto P = [&](int i) {
        return Vec3((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z());
    };
    // Order matches surface ids 0..5 for the room: x-, x+, y-, y+, z-, z+.
    add_quad(m, surface, inward ? 0 : sid, P(0), P(2), P(6), P(4), Vec3(s, 0, 0));
    add_quad(m, surface, inward ? 1 : sid, P(1), P(3), P(7), P(5), Vec3(-s, 0, 0));
    add_quad(m, surface, inward ? 2 : sid, P(0), P(1), P(5), P(4), Vec3(0, s, 0));
    add_quad(m, surface, inward ? 3 : sid, P(2), P(3), P(7), P(6), Vec3(0, -s, 0));
    add_quad(m, surface, inward ? 4 : sid, P(0), P(1), P(3), P(2), Vec3(0, 0, s));
    add_quad(m, surface, inward ? 5 : sid, P(4), P(5), P(7), P(6), Vec3(0, 0, -s));
}

void add_sphere(TriangleMesh &m, std::vector<int> &surface, int sid, const Vec3 &c, double r) {
    constexpr int stacks = 12, slices = 24;
    const int base = static_cast<int>(m.vertices.size());
    for (int i = 0; i <= stacks; ++i) {
        const double th = std::numbers::pi * i / stacks;
        for (int j = 0; j < slices; ++j) {
            const double ph = 2 * std::numbers::pi * j / slices;
            m.vertices.push_back(c + r * Vec3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)));
        }
    }
    auto idx = [&](int i, int j) { return base + i * slices + (j % slices); };
    auto push = [&](int a, int b, int d) {
        const Vec3 n = (m.vertices[b] - m.vertices[a]).cross(m.vertices[d] - m.vertices[a]);
        if (n.norm() < 1e-14) return; // degenerate at the poles
        const Vec3 out = (m.vertices[a] + m.vertices[b] + m.vertices[d]) / 3.0 - c;
        if (n.dot(out) >= 0) {
            m.faces.push_back({a, b, d});
        } else {
            m.faces.push_back({a, d, b});
        }
        surface.push_back(sid);
    };
    for (int i = 0; i < stacks; ++i) {
        for (int j = 0; j < slices; ++j) {
            push(idx(i, j), idx(i + 1, j), idx(i + 1, j + 1));
            push(idx(i, j), idx(i + 1, j + 1), idx(i, j + 1));
        }
    }
}

Vec3 tangent_of(const Vec3 &n) {
    const Vec3 ref = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    return n.cross(ref).normalized();
}

} // namespace

SceneBundle generate_synthetic_room(const RoomSpec &spec, SamplingRecord *record) {
    if (!(spec.dimensions.array() > 0.0).all()) {
        throw ValidationError("room dimensions must be positive");
    }
    if (spec.camera_count < 2) {
        throw ValidationError("need at least 2 cameras");
    }
    if (spec.image_width <= 0 || spec.image_height <= 0) {
        throw ValidationError("image size must be positive");
    }
    if (spec.object_count < 0 || spec.noise < 0 || spec.sample_density < 0 ||
        !(spec.horizontal_fov_deg > 0 && spec.horizontal_fov_deg < 170)) {
        throw ValidationError("invalid room spec");
    }

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const Vec3 dims = spec.dimensions;
    const Vec3 center = 0.5 * dims;

    TextureModel tex;
    tex.dims = dims;
    const std::array<Vec3, kRoomSurfaces> palette = {Vec3(0.78, 0.74, 0.66), Vec3(0.70, 0.76, 0.80),
                                                     Vec3(0.82, 0.70, 0.62), Vec3(0.66, 0.78, 0.68),
                                                     Vec3(0.56, 0.50, 0.44), Vec3(0.92, 0.92, 0.90)};
    for (int s = 0; s < kRoomSurfaces; ++s) {
        tex.base[s] = palette[s];
        if (s == 5) {
            continue; // plain ceiling
        }
        double a, b, amax, bmax;
        tex.plane_coords(s, Vec3::Zero(), a, b, amax, bmax);
        const double inner_a = amax - 2 * (kTrimWidth + 0.05), inner_b = bmax - 2 * (kTrimWidth + 0.05);
        if (inner_a <= 0.1 || inner_b <= 0.1) {
            continue;
        }
        const double w = std::min(inner_a, 0.25 + 0.2 * U(rng)), h = std::min(inner_b, 0.2 + 0.15 * U(rng));
        const double a0 = kTrimWidth + 0.05 + (inner_a - w) * U(rng);
        const double b0 = kTrimWidth + 0.05 + (inner_b - h) * U(rng);
        tex.poster[s] = Rect{a0, a0 + w, b0, b0 + h};
        tex.poster_a[s] = Vec3(0.15 + 0.3 * U(rng), 0.15 + 0.3 * U(rng), 0.15 + 0.3 * U(rng));
        tex.poster_b[s] = Vec3(0.65 + 0.3 * U(rng), 0.65 + 0.3 * U(rng), 0.65 + 0.3 * U(rng));
    }

    TriangleMesh mesh;
    std::vector<int> surface;
    add_box(mesh, surface, 0, Vec3::Zero(), dims, /*inward=*/true);

    const double min_dim = dims.minCoeff();
    for (int i = 0; i < spec.object_count; ++i) {
        Object o;
        o.shape = (i % 2 == 0) ? Shape::Box : Shape::Sphere;
        o.color_a = Vec3(0.1 + 0.3 * U(rng), 0.1 + 0.3 * U(rng), 0.1 + 0.3 * U(rng));
        o.color_b = Vec3(0.6 + 0.35 * U(rng), 0.6 + 0.35 * U(rng), 0.6 + 0.35 * U(rng));
        // Objects stand in the corner quadrants so the cameras near the center stay clear.
        const int quadrant = i % 4;
        const double sx = (quadrant & 1) ? 1.0 : -1.0, sy = (quadrant & 2) ? 1.0 : -1.0;
        const double fx = 0.5 + sx * (0.22 + 0.08 * U(rng)), fy = 0.5 + sy * (0.22 + 0.08 * U(rng));
        const Vec3 base(fx * dims.x(), fy * dims.y(), 0.0);
        const int sid = kRoomSurfaces + i;
        if (o.shape == Shape::Box) {
            const Vec3 half(min_dim * (0.08 + 0.05 * U(rng)), min_dim * (0.08 + 0.05 * U(rng)), 0.0);
            const double height = min_dim * (0.2 + 0.2 * U(rng));
            o.lo = Vec3(base.x() - half.x(), base.y() - half.y(), 0.0);
            o.hi = Vec3(base.x() + half.x(), base.y() + half.y(), height);
            add_box(mesh, surface, sid, o.lo, o.hi, /*inward=*/false);
        } else {
            o.radius = min_dim * (0.08 + 0.05 * U(rng));
            o.center = Vec3(base.x(), base.y(), o.radius);
            add_sphere(mesh, surface, sid, o.center, o.radius);
        }
        tex.objects.push_back(o);
    }
    mesh.normals.assign(mesh.vertices.size(), Vec3::Zero());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const Vec3 n = mesh.face_normal(f);
        for (int v : mesh.faces[f]) {
            mesh.normals[v] += n;
        }
    }
    for (auto &n : mesh.normals) {
        n.normalize();
    }

    SceneBundle scene;
    scene.bbox = Bbox{Vec3::Zero(), dims};
    const TriangleBvh bvh(mesh);

    // Cameras on a small ring around the center, looking outward with varying pitch.
    const int W = spec.image_width, H = spec.image_height;
    const double f = 0.5 * W / std::tan(0.5 * spec.horizontal_fov_deg * std::numbers::pi / 180.0);
    const double pitch[4] = {-0.35, 0.3, -0.1, 0.15};
    for (int i = 0; i < spec.camera_count; ++i) {
        const double yaw = 2 * std::numbers::pi * i / spec.camera_count + 0.3;
        const Vec3 dir(std::cos(yaw), std::sin(yaw), 0.0);
        const Vec3 eye = center - 0.3 * Vec3(dir.x() * 0.5 * dims.x(), dir.y() * 0.5 * dims.y(), 0.0) +
                         Vec3(0, 0, 0.12 * dims.z() * ((i % 2) ? 1.0 : -1.0));
        const Vec3 target = center + Vec3(dir.x() * 0.5 * dims.x(), dir.y() * 0.5 * dims.y(), pitch[i % 4] * dims.z());
        View v;
        v.name = fmt::format("view_{:03d}.png", i);
        v.intrinsics = Intrinsics{f, f, 0.5 * W, 0.5 * H, W, H};
        v.pose = look_at(eye, target);
        v.image = Image(H, W, 3);
        v.gt_depth = Image(H, W, 1);
        v.gt_normal = Image(H, W, 3);
        for (int r = 0; r < H; ++r) {
            for (int c = 0; c < W; ++c) {
                const Ray ray = pixel_ray(v.intrinsics, v.pose, r, c);
                const auto hit = bvh.intersect(ray);
                if (!hit) {
                    continue;
                }
                const Vec3 p = ray.origin + hit->t * ray.dir;
                const Vec3 n_cam = v.pose.R * mesh.face_normal(hit->face);
                const Vec3 albedo = tex.albedo(p, surface[hit->face]);
                for (int k = 0; k < 3; ++k) {
                    v.image.at(r, c, k) = quantize(albedo[k]);
                    v.gt_normal.at(r, c, k) = n_cam[k];
                }
                v.gt_depth.at(r, c) = v.pose.to_camera(p).z();
            }
        }
        scene.views.push_back(std::move(v));
    }

    // SfM emulation: area-uniform surface samples kept where the albedo has
    // strong gradients and at least one camera sees them.
    std::normal_distribution<double> noise(0.0, 1.0);
    const int surface_count = kRoomSurfaces + spec.object_count;
    if (record) {
        *record = SamplingRecord{};
        record->surface_area.assign(surface_count, 0.0);
    }
    constexpr double h = 0.003;
    for (std::size_t fi = 0; fi < mesh.faces.size(); ++fi) {
        const auto &tri = mesh.faces[fi];
        const Vec3 &a = mesh.vertices[tri[0]], &b = mesh.vertices[tri[1]], &c = mesh.vertices[tri[2]];
        const double area = mesh.face_area(fi);
        const int sid = surface[fi];
        if (record) {
            record->surface_area[sid] += area;
        }
        const double expected = area * spec.sample_density;
        const auto count = static_cast<long>(std::floor(expected + U(rng)));
        const Vec3 n = mesh.face_normal(fi);
        const Vec3 t1 = tangent_of(n), t2 = n.cross(t1);
        for (long s = 0; s < count; ++s) {
            double u = U(rng), w = U(rng);
            if (u + w > 1.0) {
                u = 1.0 - u;
                w = 1.0 - w;
            }
            const Vec3 p = a + u * (b - a) + w * (c - a);
            const double g1 = std::abs(luminance(tex.albedo(p + h * t1, sid)) - luminance(tex.albedo(p - h * t1, sid)));
            const double g2 = std::abs(luminance(tex.albedo(p + h * t2, sid)) - luminance(tex.albedo(p - h * t2, sid)));
            const double grad = std::max(g1, g2) / (2 * h);
            bool visible = false;
            if (grad >= spec.texture_threshold) {
                for (const auto &v : scene.views) {
                    const Vec3 pc = v.pose.to_camera(p);
                    if (pc.z() <= 1e-3) continue;
                    const double x = v.intrinsics.fx * pc.x() / pc.z() + v.intrinsics.cx;
                    const double y = v.intrinsics.fy * pc.y() / pc.z() + v.intrinsics.cy;
                    const int col = static_cast<int>(std::floor(x)), row = static_cast<int>(std::floor(y));
                    if (col < 0 || row < 0 || col >= W || row >= H) continue;
                    if (pc.z() <= v.gt_depth.at(row, col) + 0.01) {
                        visible = true;
                        break;
                    }
                }
            }
            const bool keep = grad >= spec.texture_threshold && visible;
            // Draw noise unconditionally so the stream does not depend on visibility.
            const Vec3 jitter(noise(rng), noise(rng), noise(rng));
            if (record) {
                record->candidates.push_back(p);
                record->surface.push_back(sid);
                record->gradient.push_back(grad);
                record->kept.push_back(keep);
            }
            if (!keep) {
                continue;
            }
            SfMPoint pt;
            pt.position = p + spec.noise * jitter;
            const Vec3 albedo = tex.albedo(p, sid);
            pt.color = Vec3(quantize(albedo.x()), quantize(albedo.y()), quantize(albedo.z()));
            scene.points.push_back(pt);
        }
    }
    scene.gt_mesh = std::move(mesh);
    return scene;
}

} // namespace splatprior
