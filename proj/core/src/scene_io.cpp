// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/errors.hpp>
#include <splatprior/scene_io.hpp>

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace splatprior {

namespace fs = std::filesystem;

void validate_view(const View &view) {
    if (!is_rotation(view.pose.R, 1e-6)) {
        throw ValidationError("view '" + view.name + "': rotation is not orthonormal with det +1");
    }
    if (!(view.intrinsics.fx > 0) || !(view.intrinsics.fy > 0)) {
        throw ValidationError("view '" + view.name + "': focal lengths must be positive");
    }
    if (!view.image.empty() &&
        (view.image.height != view.intrinsics.height || view.image.width != view.intrinsics.width)) {
        throw ValidationError("view '" + view.name + "': image size disagrees with intrinsics");
    }
    if (view.has_depth()) {
        for (double d : view.gt_depth.data) {
            if (!(d >= 0.0)) {
                throw ValidationError("view '" + view.name + "': negative or NaN depth");
            }
        }
    }
}

namespace {

bool ray_hits_box(const Vec3 &o, const Vec3 &d, const Bbox &b) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
            if (o[a] < b.min[a] || o[a] > b.max[a]) return false;
            continue;
        }
        double ta = (b.min[a] - o[a]) / d[a], tb = (b.max[a] - o[a]) / d[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t1 < t0) return false;
    }
    return true;
}

bool frustum_meets_box(const View &v, const Bbox &b) {
    const Vec3 c = v.pose.camera_center();
    if (b.contains(c)) {
        return true;
    }
    const auto &K = v.intrinsics;
    const double xs[3] = {0.0, 0.5 * K.width, static_cast<double>(K.width)};
    const double ys[3] = {0.0, 0.5 * K.height, static_cast<double>(K.height)};
    for (double y : ys) {
        for (double x : xs) {
            const Vec3 d_cam((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
            if (ray_hits_box(c, v.pose.R.transpose() * d_cam, b)) {
                return true;
            }
        }
    }
    // Any box corner in front of the camera and inside the image.
    for (int i = 0; i < 8; ++i) {
        const Vec3 p((i & 1) ? b.max.x() : b.min.x(), (i & 2) ? b.max.y() : b.min.y(),
                     (i & 4) ? b.max.z() : b.min.z());
        const Vec3 pc = v.pose.to_camera(p);
        if (pc.z() <= 0) continue;
        const double u = K.fx * pc.x() / pc.z() + K.cx, w = K.fy * pc.y() / pc.z() + K.cy;
        if (u >= 0 && u <= K.width && w >= 0 && w <= K.height) return true;
    }
    return false;
}

} // namespace

void validate_scene(const SceneBundle &scene) {
    if (!scene.bbox.valid()) {
        throw ValidationError("scene bbox must satisfy min < max per axis");
    }
    for (const auto &v : scene.views) {
        validate_view(v);
        if (!frustum_meets_box(v, scene.bbox)) {
            throw ValidationError("view '" + v.name + "' does not see the scene bbox");
        }
    }
    const Bbox outer = scene.bbox.expanded(1.0);
    for (const auto &p : scene.points) {
        if (!outer.contains(p.position)) {
            throw ValidationError("SfM point outside bbox expanded by 1 m");
        }
    }
}

void save_cameras(const std::vector<View> &views, const fs::path &path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto &v : views) {
        nlohmann::json rec;
        rec["image"] = v.name;
        rec["fx"] = v.intrinsics.fx;
        rec["fy"] = v.intrinsics.fy;
        rec["cx"] = v.intrinsics.cx;
        rec["cy"] = v.intrinsics.cy;
        rec["width"] = v.intrinsics.width;
        rec["height"] = v.intrinsics.height;
        std::vector<double> R(9), t(3);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                R[r * 3 + c] = v.pose.R(r, c);
            }
            t[r] = v.pose.t[r];
        }
        rec["R"] = R;
        rec["t"] = t;
        arr.push_back(std::move(rec));
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << arr.dump(2) << "\n";
}

std::vector<View> load_cameras(const fs::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw MissingAsset("cannot open " + path.string());
    }
    nlohmann::json arr;
    try {
        in >> arr;
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!arr.is_array()) {
        throw ParseError(path.string() + ": expected a top-level list");
    }
    std::vector<View> views;
    try {
        for (const auto &rec : arr) {
            View v;
            v.name = rec.at("image").get<std::string>();
            v.intrinsics.fx = rec.at("fx").get<double>();
            v.intrinsics.fy = rec.at("fy").get<double>();
            v.intrinsics.cx = rec.at("cx").get<double>();
            v.intrinsics.cy = rec.at("cy").get<double>();
            v.intrinsics.width = rec.at("width").get<int>();
            v.intrinsics.height = rec.at("height").get<int>();
            const auto R = rec.at("R").get<std::vector<double>>();
            const auto t = rec.at("t").get<std::vector<double>>();
            if (R.size() != 9 || t.size() != 3) {
                throw ParseError(path.string() + ": R needs 9 reals and t needs 3");
            }
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c) {
                    v.pose.R(r, c) = R[r * 3 + c];
                }
                v.pose.t[r] = t[r];
            }
            views.push_back(std::move(v));
        }
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return views;
}

SceneBundle load_scene(const fs::path &dir) {
    const fs::path cams = dir / "cameras.json";
    const fs::path points = dir / "points.ply";
    if (!fs::exists(cams)) throw MissingAsset((cams).string());
    if (!fs::exists(points)) throw MissingAsset((points).string());
    if (!fs::is_directory(dir / "images")) throw MissingAsset((dir / "images").string());

    SceneBundle scene;
    scene.views = load_cameras(cams);
    for (auto &v : scene.views) {
        const fs::path img = dir / "images" / v.name;
        if (!fs::exists(img)) {
            throw MissingAsset(img.string());
        }
        v.image = read_png(img);
        if (v.image.channels == 1) {
            Image rgb(v.image.height, v.image.width, 3);
            for (std::size_t i = 0; i < v.image.pixels(); ++i) {
                for (int c = 0; c < 3; ++c) rgb.data[i * 3 + c] = v.image.data[i];
            }
            v.image = std::move(rgb);
        }
        const fs::path depth = dir / "depth" / (fs::path(v.name).stem().string() + ".png");
        if (fs::exists(depth)) {
            v.gt_depth = read_depth_png(depth);
            if (v.gt_depth.height != v.image.height || v.gt_depth.width != v.image.width) {
                throw ValidationError("depth map size disagrees with image: " + depth.string());
            }
        }
    }
    scene.points = load_pointcloud(points);
    if (fs::exists(dir / "mesh.ply")) {
        scene.gt_mesh = load_mesh(dir / "mesh.ply");
    }
    if (scene.gt_mesh && !scene.gt_mesh->empty()) {
        scene.bbox = scene.gt_mesh->bounds();
    } else if (!scene.points.empty()) {
        Bbox b{scene.points[0].position, scene.points[0].position};
        for (const auto &p : scene.points) {
            b.min = b.min.cwiseMin(p.position);
            b.max = b.max.cwiseMax(p.position);
        }
        scene.bbox = b.expanded(1e-3);
    }
    validate_scene(scene);
    return scene;
}

void save_scene(const SceneBundle &scene, const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (ec) {
        throw IoError("cannot create " + (dir / "images").string());
    }
    save_cameras(scene.views, dir / "cameras.json");
    bool any_depth = false;
    for (const auto &v : scene.views) {
        write_png(dir / "images" / v.name, v.image);
        if (v.has_depth()) {
            if (!any_depth) {
                fs::create_directories(dir / "depth");
                any_depth = true;
            }
            write_depth_png(dir / "depth" / (fs::path(v.name).stem().string() + ".png"), v.gt_depth);
        }
    }
    save_pointcloud(scene.points, dir / "points.ply");
    if (scene.gt_mesh) {
        save_mesh(*scene.gt_mesh, dir / "mesh.ply");
    }
}

void split_views(std::size_t count, int holdout_every, std::vector<int> &train, std::vector<int> &heldout) {
    train.clear();
    heldout.clear();
    for (std::size_t i = 0; i < count; ++i) {
        if (holdout_every > 0 && static_cast<int>(i % holdout_every) == holdout_every - 1) {
            heldout.push_back(static_cast<int>(i));
        } else {
            train.push_back(static_cast<int>(i));
        }
    }
}

} // namespace splatprior
