// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/geometry.hpp>

#include <cmath>

namespace splatprior {

Vec3 TriangleMesh::face_normal(std::size_t f) const {
    const auto &tri = faces[f];
    const Vec3 n = (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]);
    const double len = n.norm();
    return len > 0 ? Vec3(n / len) : Vec3::UnitZ();
}

double TriangleMesh::face_area(std::size_t f) const {
    const auto &tri = faces[f];
    return 0.5 * (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).norm();
}

Bbox TriangleMesh::bounds() const {
    Bbox b{Vec3::Constant(std::numeric_limits<double>::infinity()),
           Vec3::Constant(-std::numeric_limits<double>::infinity())};
    for (const auto &v : vertices) {
        b.min = b.min.cwiseMin(v);
        b.max = b.max.cwiseMax(v);
    }
    return b;
}

Mat3 quat_to_matrix(const Vec4 &q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return R;
}

Vec4 quat_matrix_backward(const Vec4 &q, const Mat3 &dR) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 g;
    g[0] = 2 * (-z * dR(0, 1) + y * dR(0, 2) + z * dR(1, 0) - x * dR(1, 2) - y * dR(2, 0) + x * dR(2, 1));
    g[1] = 2 * (y * dR(0, 1) + z * dR(0, 2) + y * dR(1, 0) - 2 * x * dR(1, 1) - w * dR(1, 2) +
                z * dR(2, 0) + w * dR(2, 1) - 2 * x * dR(2, 2));
    g[2] = 2 * (-2 * y * dR(0, 0) + x * dR(0, 1) + w * dR(0, 2) + x * dR(1, 0) + z * dR(1, 2) -
                w * dR(2, 0) + z * dR(2, 1) - 2 * y * dR(2, 2));
    g[3] = 2 * (-2 * z * dR(0, 0) - w * dR(0, 1) + x * dR(0, 2) + w * dR(1, 0) - 2 * z * dR(1, 1) +
                y * dR(1, 2) + x * dR(2, 0) + y * dR(2, 1));
    return g;
}

Vec4 matrix_to_quat(const Mat3 &R) {
    const Eigen::Quaterniond q(R);
    Vec4 out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < 0) {
        out = -out;
    }
    return out / out.norm();
}

bool is_rotation(const Mat3 &R, double tol) {
    return (R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(R.determinant() - 1.0) <= tol;
}

Ray pixel_ray(const Intrinsics &K, const Pose &pose, int row, int col) {
    const Vec3 d_cam((col + 0.5 - K.cx) / K.fx, (row + 0.5 - K.cy) / K.fy, 1.0);
    return {pose.camera_center(), (pose.R.transpose() * d_cam).normalized()};
}

Pose look_at(const Vec3 &eye, const Vec3 &target, const Vec3 &up) {
    const Vec3 z = (target - eye).normalized();
    Vec3 x = z.cross(up);
    if (x.norm() < 1e-9) {
        x = z.cross(Vec3::UnitX());
    }
    x.normalize();
    // Image y points down, so the camera y axis is z cross x.
    const Vec3 y = z.cross(x);
    Pose p;
    p.R.row(0) = x.transpose();
    p.R.row(1) = y.transpose();
    p.R.row(2) = z.transpose();
    p.t = -p.R * eye;
    return p;
}

} // namespace splatprior
