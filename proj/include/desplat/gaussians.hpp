// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <unordered_set>
#include <vector>

namespace desplat {

// Source pixel a primitive was unprojected from; the link pruning relies on.
struct Provenance {
    int32_t ref_index = -1;
    int32_t pixel_index = -1;
    bool operator==(const Provenance&) const = default;
};

struct GaussianPrimitive {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    double opacity = 1.0;                                        // [0,1]
    Eigen::Vector3d scale = Eigen::Vector3d::Ones();             // per-axis stddev, > 0
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();// unit
    Eigen::Vector3d color = Eigen::Vector3d::Zero();             // RGB in [0,1]
    std::optional<Provenance> provenance;

    void validate() const {
        if (!position.allFinite() || !scale.allFinite() || !color.allFinite())
            throw std::invalid_argument("gaussian: non-finite attributes");
        if (std::abs(rotation.norm() - 1.0) > 1e-6)
            throw std::invalid_argument("gaussian: rotation quaternion not unit length");
        if (!(scale.x() > 0 && scale.y() > 0 && scale.z() > 0))
            throw std::invalid_argument("gaussian: scale components must be positive");
        if (!(opacity >= 0.0 && opacity <= 1.0))
            throw std::invalid_argument("gaussian: opacity outside [0,1]");
    }

    // Sigma = R S S^T R^T
    Eigen::Matrix3d covariance() const {
        const Eigen::Matrix3d R = rotation.toRotationMatrix();
        return R * scale.cwiseProduct(scale).asDiagonal() * R.transpose();
    }
};

struct GaussianScene {
    std::vector<GaussianPrimitive> primitives;

    size_t size() const { return primitives.size(); }
    bool empty() const { return primitives.empty(); }

    // Provenance tags, when present, must be unique per (reference, pixel).
    void validate_provenance() const {
        std::unordered_set<uint64_t> seen;
        seen.reserve(primitives.size());
        for (const auto& g : primitives) {
            if (!g.provenance) continue;
            const uint64_t key = (static_cast<uint64_t>(static_cast<uint32_t>(g.provenance->ref_index)) << 32) |
                                 static_cast<uint32_t>(g.provenance->pixel_index);
            if (!seen.insert(key).second)
                throw std::invalid_argument("scene: duplicate provenance tag");
        }
    }
};

}  // namespace desplat
