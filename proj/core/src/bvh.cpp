// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/bvh.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace splatprior {

namespace {

constexpr int kLeafSize = 4;

bool ray_box(const Ray &ray, const Vec3 &inv_dir, const Bbox &box, double t_min, double t_max) {
    for (int a = 0; a < 3; ++a) {
        double t0 = (box.min[a] - ray.origin[a]) * inv_dir[a];
        double t1 = (box.max[a] - ray.origin[a]) * inv_dir[a];
        if (t0 > t1) {
            std::swap(t0, t1);
        }
        // NaN from 0 * inf means the ray lies in the slab plane; keep going.
        if (!std::isnan(t0)) {
            t_min = std::max(t_min, t0);
        }
        if (!std::isnan(t1)) {
            t_max = std::min(t_max, t1);
        }
        if (t_max < t_min) {
            return false;
        }
    }
    return true;
}

double box_distance_sq(const Bbox &box, const Vec3 &p) {
    const Vec3 d = (box.min - p).cwiseMax(Vec3::Zero()).cwiseMax(p - box.max);
    return d.squaredNorm();
}

} // namespace

std::optional<RayHit> intersect_triangle(const Ray &ray, const Vec3 &a, const Vec3 &b, const Vec3 &c) {
    const Vec3 e1 = b - a;
    const Vec3 e2 = c - a;
    const Vec3 p = ray.dir.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) < 1e-15) {
        return std::nullopt;
    }
    const double inv = 1.0 / det;
    const Vec3 s = ray.origin - a;
    const double u = s.dot(p) * inv;
    if (u < 0.0 || u > 1.0) {
        return std::nullopt;
    }
    const Vec3 q = s.cross(e1);
    const double v = ray.dir.dot(q) * inv;
    if (v < 0.0 || u + v > 1.0) {
        return std::nullopt;
    }
    RayHit hit;
    hit.t = e2.dot(q) * inv;
    hit.b1 = u;
    hit.b2 = v;
    return hit;
}

Vec3 closest_point_on_triangle(const Vec3 &p, const Vec3 &a, const Vec3 &b, const Vec3 &c) {
    // Region classification (Ericson, Real-Time Collision Detection 5.1.5).
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0) {
        return a;
    }
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) {
        return b;
    }
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) {
        return a + ab * (d1 / (d1 - d3));
    }
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6) {
        return c;
    }
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) {
        return a + ac * (d2 / (d2 - d6));
    }
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

TriangleBvh::TriangleBvh(TriangleMesh mesh) : mesh_(std::move(mesh)) {
    const int n = static_cast<int>(mesh_.faces.size());
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    tri_boxes_.resize(n);
    centroids_.resize(n);
    for (int f = 0; f < n; ++f) {
        const auto &tri = mesh_.faces[f];
        Bbox b{mesh_.vertices[tri[0]], mesh_.vertices[tri[0]]};
        for (int k = 1; k < 3; ++k) {
            b.min = b.min.cwiseMin(mesh_.vertices[tri[k]]);
            b.max = b.max.cwiseMax(mesh_.vertices[tri[k]]);
        }
        tri_boxes_[f] = b;
        centroids_[f] = b.center();
    }
    if (n > 0) {
        nodes_.reserve(2 * n / kLeafSize + 2);
        build(0, n, 0);
    }
}

int TriangleBvh::build(int first, int count, int depth) {
    const int index = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Bbox box = tri_boxes_[order_[first]];
    for (int i = first + 1; i < first + count; ++i) {
        box.min = box.min.cwiseMin(tri_boxes_[order_[i]].min);
        box.max = box.max.cwiseMax(tri_boxes_[order_[i]].max);
    }
    nodes_[index].box = box;
    if (count <= kLeafSize || depth > 48) {
        nodes_[index].first = first;
        nodes_[index].count = count;
        return index;
    }
    int axis = 0;
    box.extent().maxCoeff(&axis);
    const int mid = first + count / 2;
    std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                     [&](int a, int b) {
                         if (centroids_[a][axis] != centroids_[b][axis]) {
                             return centroids_[a][axis] < centroids_[b][axis];
                         }
                         return a < b;
                     });
    const int left = build(first, mid - first, depth + 1);
    const int right = build(mid, first + count - mid, depth + 1);
    nodes_[index].left = left;
    nodes_[index].right = right;
    return index;
}

std::optional<RayHit> TriangleBvh::intersect(const Ray &ray, double t_min, double t_max) const {
    if (nodes_.empty()) {
        return std::nullopt;
    }
    const Vec3 inv_dir = ray.dir.cwiseInverse();
    std::optional<RayHit> best;
    std::vector<int> stack{0};
    while (!stack.empty()) {
        const Node &node = nodes_[stack.back()];
        stack.pop_back();
        const double limit = best ? best->t : t_max;
        if (!ray_box(ray, inv_dir, node.box, t_min, limit)) {
            continue;
        }
        if (node.count > 0) {
            for (int i = node.first; i < node.first + node.count; ++i) {
                const int f = order_[i];
                const auto &tri = mesh_.faces[f];
                auto hit = intersect_triangle(ray, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]],
                                              mesh_.vertices[tri[2]]);
                if (!hit || hit->t <= t_min || hit->t >= t_max) {
                    continue;
                }
                if (!best || hit->t < best->t || (hit->t == best->t && f < best->face)) {
                    hit->face = f;
                    best = hit;
                }
            }
        } else {
            stack.push_back(node.left);
            stack.push_back(node.right);
        }
    }
    return best;
}

ClosestPoint TriangleBvh::closest_point(const Vec3 &p) const {
    ClosestPoint best;
    best.distance = std::numeric_limits<double>::infinity();
    if (nodes_.empty()) {
        return best;
    }
    double best_sq = std::numeric_limits<double>::infinity();
    std::vector<int> stack{0};
    while (!stack.empty()) {
        const Node &node = nodes_[stack.back()];
        stack.pop_back();
        if (box_distance_sq(node.box, p) > best_sq) {
            continue;
        }
        if (node.count > 0) {
            for (int i = node.first; i < node.first + node.count; ++i) {
                const int f = order_[i];
                const auto &tri = mesh_.faces[f];
                const Vec3 q = closest_point_on_triangle(p, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]],
                                                         mesh_.vertices[tri[2]]);
                const double d = (q - p).squaredNorm();
                if (d < best_sq || (d == best_sq && f < best.face)) {
                    best_sq = d;
                    best.point = q;
                    best.face = f;
                }
            }
        } else {
            const double dl = box_distance_sq(nodes_[node.left].box, p);
            const double dr = box_distance_sq(nodes_[node.right].box, p);
            // Visit the nearer child first.
            if (dl < dr) {
                stack.push_back(node.right);
                stack.push_back(node.left);
            } else {
                stack.push_back(node.left);
                stack.push_back(node.right);
            }
        }
    }
    best.distance = std::sqrt(best_sq);
    return best;
}

} // namespace splatprior
