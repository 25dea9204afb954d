// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace desplat {

// Pinhole camera. Extrinsics map world to camera coordinates (projection is
// the hot path); intrinsics are upper triangular with zero skew. Pixel (x,y)
// spans [x,x+1)x[y,y+1), its center is (x+0.5, y+0.5).
struct Camera {
    Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();  // world -> camera
    Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
    int width = 0;
    int height = 0;

    Camera() = default;
    Camera(const Eigen::Matrix4d& ext, const Eigen::Matrix3d& K, int w, int h)
        : extrinsics(ext), intrinsics(K), width(w), height(h) {
        validate();
    }

    void validate() const {
        if (width <= 0 || height <= 0) throw std::invalid_argument("camera: non-positive image size");
        const Eigen::Matrix3d R = rotation();
        const double ortho_err = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
        if (!(ortho_err < 1e-6)) throw std::invalid_argument("camera: extrinsic rotation not orthonormal");
        if (R.determinant() < 0.0) throw std::invalid_argument("camera: extrinsic rotation is a reflection");
        if (!(fx() > 0.0) || !(fy() > 0.0)) throw std::invalid_argument("camera: focal lengths must be positive");
        if (!(cx() >= 0.0 && cx() < width) || !(cy() >= 0.0 && cy() < height))
            throw std::invalid_argument("camera: principal point outside image");
        if (!extrinsics.allFinite() || !intrinsics.allFinite())
            throw std::invalid_argument("camera: non-finite matrix entries");
    }

    double fx() const { return intrinsics(0, 0); }
    double fy() const { return intrinsics(1, 1); }
    double cx() const { return intrinsics(0, 2); }
    double cy() const { return intrinsics(1, 2); }

    Eigen::Matrix3d rotation() const { return extrinsics.block<3, 3>(0, 0); }
    Eigen::Vector3d translation() const { return extrinsics.block<3, 1>(0, 3); }
    Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }

    Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
        return rotation() * world + translation();
    }

    // Camera looking from `eye` toward `target`; +z forward, +x right, +y down
    // (image y grows downward).
    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up_world, double focal, int w, int h) {
        Eigen::Vector3d fwd = (target - eye).normalized();
        Eigen::Vector3d right = fwd.cross(-up_world).normalized();
        Eigen::Vector3d down = fwd.cross(right).normalized();
        Eigen::Matrix3d R;
        R.row(0) = right;
        R.row(1) = down;
        R.row(2) = fwd;
        Eigen::Matrix4d ext = Eigen::Matrix4d::Identity();
        ext.block<3, 3>(0, 0) = R;
        ext.block<3, 1>(0, 3) = -R * eye;
        Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
        K(0, 0) = K(1, 1) = focal;
        K(0, 2) = w / 2.0;
        K(1, 2) = h / 2.0;
        return Camera(ext, K, w, h);
    }
};

struct PointProjection {
    double u = 0.0;
    double v = 0.0;
    double z = 0.0;  // camera-frame forward coordinate
    bool behind = false;
};

inline PointProjection project_point(const Eigen::Vector3d& world, const Camera& cam) {
    if (!world.allFinite()) throw std::invalid_argument("project_point: non-finite point");
    const Eigen::Vector3d p = cam.to_camera(world);
    PointProjection out;
    out.z = p.z();
    if (p.z() <= 0.0) {
        out.behind = true;
        return out;
    }
    out.u = cam.fx() * p.x() / p.z() + cam.cx();
    out.v = cam.fy() * p.y() / p.z() + cam.cy();
    return out;
}

inline Eigen::Vector3d unproject_pixel(double u, double v, double depth, const Camera& cam) {
    if (!(depth > 0.0)) throw std::invalid_argument("unproject_pixel: depth must be > 0");
    const Eigen::Vector3d p((u - cam.cx()) / cam.fx() * depth,
                            (v - cam.cy()) / cam.fy() * depth, depth);
    return cam.rotation().transpose() * (p - cam.translation());
}

}  // namespace desplat
