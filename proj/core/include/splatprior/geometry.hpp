// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace splatprior {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Axis-aligned box in world meters.
struct Bbox {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Ones();

    Vec3 extent() const { return max - min; }
    Vec3 center() const { return 0.5 * (min + max); }
    bool contains(const Vec3 &p, double margin = 0.0) const {
        return (p.array() >= min.array() - margin).all() && (p.array() <= max.array() + margin).all();
    }
    Bbox expanded(double margin) const {
        return {min - Vec3::Constant(margin), max + Vec3::Constant(margin)};
    }
    bool valid() const { return (min.array() < max.array()).all(); }
};

/// World-to-camera rigid transform: x_cam = R * x_world + t, +z forward.
struct Pose {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Vec3 to_camera(const Vec3 &x) const { return R * x + t; }
    Vec3 camera_center() const { return -R.transpose() * t; }
};

/// Pinhole intrinsics; pixel (row i, col j) has its center at (j + 0.5, i + 0.5).
struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;
};

struct Ray {
    Vec3 origin;
    Vec3 dir; // unit length
};

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<Vec3> normals; // optional, per vertex
    std::vector<Vec3> colors;  // optional, per vertex, [0,1]
    std::vector<std::array<int, 3>> faces;

    bool empty() const { return vertices.empty(); }
    Vec3 face_normal(std::size_t f) const;
    double face_area(std::size_t f) const;
    Bbox bounds() const;
};

/// Rotation matrix of a quaternion (w, x, y, z) by the homogeneous polynomial
/// form. Exact for unit quaternions; callers normalize first.
Mat3 quat_to_matrix(const Vec4 &q);

/// Accumulates dL/dq given dL/dR for R = quat_to_matrix(q).
Vec4 quat_matrix_backward(const Vec4 &q, const Mat3 &dR);

/// Quaternion (w, x, y, z) of an orthonormal rotation matrix.
Vec4 matrix_to_quat(const Mat3 &R);

bool is_rotation(const Mat3 &R, double tol = 1e-6);

/// Camera-space ray through the center of pixel (row, col), rotated into world space.
Ray pixel_ray(const Intrinsics &K, const Pose &pose, int row, int col);

/// Look-at pose with +z toward target and image "up" roughly along world `up`.
Pose look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up = Vec3::UnitZ());

} // namespace splatprior
