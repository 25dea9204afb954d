// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

#include "desplat/camera.hpp"
#include "desplat/image.hpp"

namespace desplat {

struct WarpStats {
    int64_t dropped_out_of_bounds = 0;
    int64_t dropped_behind = 0;
    int64_t dropped_z_test = 0;
};

// Forward scatter of a source-view mask into a destination view. Each set
// source pixel with valid depth unprojects at its center, reprojects into the
// destination and lands on the nearest pixel. The bit survives an occlusion
// z-test against the destination depth: |z - dst| <= eps_z * dst, or dst has
// no surface (0). Unreached destination pixels stay 0.
inline BinaryMask warp_mask(const BinaryMask& mask, const DepthMap& depth, const Camera& cam_src,
                            const Camera& cam_dst, const DepthMap& dst_depth, double eps_z,
                            WarpStats* stats = nullptr) {
    if (mask.width != cam_src.width || mask.height != cam_src.height ||
        depth.width != cam_src.width || depth.height != cam_src.height)
        throw std::invalid_argument("warp_mask: mask/depth do not match source camera");
    BinaryMask out(cam_dst.width, cam_dst.height);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            const double d = depth.at(x, y);
            if (!(d > 0.0)) continue;
            const Eigen::Vector3d world = unproject_pixel(x + 0.5, y + 0.5, d, cam_src);
            const auto p = project_point(world, cam_dst);
            if (p.behind) {
                if (stats) ++stats->dropped_behind;
                continue;
            }
            const int px = static_cast<int>(std::floor(p.u));
            const int py = static_cast<int>(std::floor(p.v));
            if (px < 0 || px >= cam_dst.width || py < 0 || py >= cam_dst.height) {
                if (stats) ++stats->dropped_out_of_bounds;
                continue;
            }
            const double dz = dst_depth.at(px, py);
            if (dz > 0.0 && std::abs(p.z - dz) > eps_z * dz) {
                if (stats) ++stats->dropped_z_test;
                continue;
            }
            out.at(px, py) = 1;
        }
    }
    return out;
}

}  // namespace desplat
