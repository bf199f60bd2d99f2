// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <splatprior/geometry.hpp>

#include <optional>
#include <vector>

namespace splatprior {

struct RayHit {
    double t = 0.0;
    int face = -1;
    double b1 = 0.0; // barycentric weight of vertex 1
    double b2 = 0.0; // barycentric weight of vertex 2
};

struct ClosestPoint {
    Vec3 point;
    double distance = 0.0;
    int face = -1;
};

/// Median-split bounding volume hierarchy over a triangle mesh. Holds a copy
/// of the mesh so it can outlive the source.
class TriangleBvh {
  public:
    explicit TriangleBvh(TriangleMesh mesh);

    const TriangleMesh &mesh() const { return mesh_; }

    /// Nearest hit with t in (t_min, t_max); ties broken by lower face index.
    std::optional<RayHit> intersect(const Ray &ray, double t_min = 1e-9,
                                    double t_max = std::numeric_limits<double>::infinity()) const;

    ClosestPoint closest_point(const Vec3 &p) const;

  private:
    struct Node {
        Bbox box;
        int left = -1;
        int right = -1;
        int first = 0; // into order_
        int count = 0; // leaf when > 0
    };

    int build(int first, int count, int depth);

    TriangleMesh mesh_;
    std::vector<int> order_;
    std::vector<Bbox> tri_boxes_;
    std::vector<Vec3> centroids_;
    std::vector<Node> nodes_;
};

/// Closest point on triangle (a, b, c) to p.
Vec3 closest_point_on_triangle(const Vec3 &p, const Vec3 &a, const Vec3 &b, const Vec3 &c);

/// Moller-Trumbore; returns t, b1, b2 when the ray hits the triangle.
std::optional<RayHit> intersect_triangle(const Ray &ray, const Vec3 &a, const Vec3 &b, const Vec3 &c);

} // namespace splatprior
