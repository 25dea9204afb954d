// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "desplat/camera.hpp"
#include "desplat/common.hpp"
#include "desplat/gaussians.hpp"
#include "desplat/image.hpp"

namespace desplat {

enum class BackendKind { OracleDepth, PlaneSweep };

struct BackendConfig {
    BackendKind kind = BackendKind::OracleDepth;
    int depth_hypotheses = 64;
    double near = 1.0;
    double far = 8.0;
    int patch_radius = 1;
    double kappa = 1.0;  // per-pixel gaussian footprint scale
    double initial_opacity = 0.8;

    void validate() const {
        if (!(near < far) || near <= 0) throw std::invalid_argument("backend: need 0 < near < far");
        if (depth_hypotheses < 2) throw std::invalid_argument("backend: need >= 2 depth hypotheses");
    }
};

struct SourceView {
    ImageBuffer image;
    Camera camera;
    DepthMap depth;  // ground truth when the oracle backend is used; may be empty
};

namespace detail {

inline bool sample_bilinear(const ImageBuffer& img, double u, double v, float out[3]) {
    // u,v are continuous coordinates with pixel centers at +0.5
    const double x = u - 0.5, y = v - 0.5;
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    if (x0 < 0 || y0 < 0 || x0 + 1 >= img.width || y0 + 1 >= img.height) return false;
    const double fx = x - x0, fy = y - y0;
    for (int c = 0; c < 3; ++c) {
        const double v00 = img.at(x0, y0, c), v10 = img.at(x0 + 1, y0, c);
        const double v01 = img.at(x0, y0 + 1, c), v11 = img.at(x0 + 1, y0 + 1, c);
        out[c] = static_cast<float>((v00 * (1 - fx) + v10 * fx) * (1 - fy) +
                                    (v01 * (1 - fx) + v11 * fx) * fy);
    }
    return true;
}

}  // namespace detail

// Photometric plane sweep replacing a learned depth estimator: hypotheses
// spaced uniformly in inverse depth, cost = mean over other views of the
// patch SAD after reprojection. Pixels no other view observes get sentinel 0.
inline DepthMap plane_sweep_depth(size_t target, const std::vector<SourceView>& views,
                                  const BackendConfig& cfg, DepthMap* cost_map = nullptr) {
    cfg.validate();
    if (views.size() < 2) throw std::invalid_argument("plane_sweep_depth: need >= 2 views");
    const Camera& cam = views[target].camera;
    const ImageBuffer& img = views[target].image;
    DepthMap depth(cam.width, cam.height);
    if (cost_map) *cost_map = DepthMap(cam.width, cam.height);

    const double inv_near = 1.0 / cfg.near, inv_far = 1.0 / cfg.far;
    const int H = cfg.depth_hypotheses, R = cfg.patch_radius;

    parallel_chunks(cam.height, 8, [&](int64_t y0, int64_t y1, int64_t) {
        for (int y = static_cast<int>(y0); y < y1; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                double best_cost = std::numeric_limits<double>::infinity();
                double best_depth = 0.0;
                std::vector<double> view_costs;
                view_costs.reserve(views.size());
                for (int h = 0; h < H; ++h) {
                    const double inv_d = inv_near + (inv_far - inv_near) * h / (H - 1);
                    const double d = 1.0 / inv_d;
                    view_costs.clear();
                    for (size_t v = 0; v < views.size(); ++v) {
                        if (v == target) continue;
                        double patch_cost = 0.0;
                        int n_px = 0;
                        for (int dy = -R; dy <= R; ++dy) {
                            for (int dx = -R; dx <= R; ++dx) {
                                const int sx = x + dx, sy = y + dy;
                                if (sx < 0 || sx >= cam.width || sy < 0 || sy >= cam.height) continue;
                                const Eigen::Vector3d w =
                                    unproject_pixel(sx + 0.5, sy + 0.5, d, cam);
                                const auto p = project_point(w, views[v].camera);
                                if (p.behind) continue;
                                float rgb[3];
                                if (!detail::sample_bilinear(views[v].image, p.u, p.v, rgb)) continue;
                                for (int c = 0; c < 3; ++c)
                                    patch_cost += std::abs(double(img.at(sx, sy, c)) - rgb[c]);
                                ++n_px;
                            }
                        }
                        if (n_px > 0) view_costs.push_back(patch_cost / n_px);
                    }
                    if (view_costs.empty()) continue;
                    // value-sorted summation keeps the result invariant under
                    // permutation of the reference set
                    std::sort(view_costs.begin(), view_costs.end());
                    double cost_sum = 0.0;
                    for (double c : view_costs) cost_sum += c;
                    const double cost = cost_sum / view_costs.size();
                    if (cost < best_cost) {
                        best_cost = cost;
                        best_depth = d;
                    }
                }
                depth.at(x, y) = static_cast<float>(best_depth);
                if (cost_map)
                    cost_map->at(x, y) =
                        std::isfinite(best_cost) ? static_cast<float>(best_cost) : 0.f;
            }
        }
    });
    return depth;
}

// One pixel-aligned primitive per valid-depth pixel; footprint matches the
// pixel solid angle at its depth.
inline GaussianScene unproject_to_gaussians(const ImageBuffer& image, const DepthMap& depth,
                                            const Camera& cam, int ref_index,
                                            const BackendConfig& cfg) {
    if (!image.same_size(cam.width, cam.height) || depth.width != cam.width ||
        depth.height != cam.height)
        throw std::invalid_argument("unproject_to_gaussians: dimension mismatch");
    GaussianScene scene;
    scene.primitives.reserve(image.pixel_count());
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const double d = depth.at(x, y);
            if (!(d > 0.0)) continue;
            GaussianPrimitive g;
            g.position = unproject_pixel(x + 0.5, y + 0.5, d, cam);
            g.scale = Eigen::Vector3d::Constant(std::max(1e-6, cfg.kappa * d / cam.fx()));
            g.opacity = cfg.initial_opacity;
            g.color = Eigen::Vector3d(image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2));
            g.provenance = Provenance{ref_index, y * cam.width + x};
            scene.primitives.push_back(g);
        }
    }
    if (scene.empty())
        throw std::runtime_error("unproject_to_gaussians: depth map has no valid pixels");
    return scene;
}

// References -> pixel-aligned gaussians, depths either supplied (oracle) or
// recovered photometrically. No cross-reference merging: the one-to-one
// pixel mapping is what pruning later consumes.
inline GaussianScene reconstruct(const std::vector<SourceView>& refs, const BackendConfig& cfg) {
    cfg.validate();
    if (refs.empty()) throw std::invalid_argument("reconstruct: need >= 1 reference");
    GaussianScene scene;
    for (size_t i = 0; i < refs.size(); ++i) {
        DepthMap depth;
        if (cfg.kind == BackendKind::OracleDepth) {
            if (refs[i].depth.data.empty())
                throw std::invalid_argument("reconstruct: oracle backend requires depth maps");
            depth = refs[i].depth;
        } else {
            depth = plane_sweep_depth(i, refs, cfg);
        }
        const bool any_valid =
            std::any_of(depth.data.begin(), depth.data.end(), [](float d) { return d > 0.f; });
        if (!any_valid) {
            // e.g. a pool view whose frustum misses the scene entirely
            warn("reconstruct: reference " + std::to_string(i) + " has no valid depth, skipped");
            continue;
        }
        GaussianScene part =
            unproject_to_gaussians(refs[i].image, depth, refs[i].camera, static_cast<int>(i), cfg);
        scene.primitives.insert(scene.primitives.end(), part.primitives.begin(),
                                part.primitives.end());
    }
    if (scene.empty()) throw std::runtime_error("reconstruct: no reference produced any primitive");
    return scene;
}

}  // namespace desplat
