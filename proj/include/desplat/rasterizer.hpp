// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "desplat/camera.hpp"
#include "desplat/common.hpp"
#include "desplat/gaussians.hpp"
#include "desplat/image.hpp"

namespace desplat {

// AlphaWeighted: compositing-weighted mean z. MedianSurface: z of the sample
// at which accumulated opacity first crosses one half (falls back to the
// weighted mean on pixels that never get that opaque).
enum class DepthMode { AlphaWeighted, MedianSurface };

struct RenderOptions {
    double near_plane = 1e-3;
    int tile_size = 16;
    double alpha_clamp = 0.999;       // per-sample opacity ceiling
    double alpha_skip = 1.0 / 255.0;  // samples below this contribute nothing
    double transmittance_floor = 1e-4;// stop compositing once T drops below
    double alpha_floor = 1e-4;        // depth/alpha declared empty below this
    double cull_sigma = 3.0;          // minimum footprint radius used for culling
    DepthMode depth_mode = DepthMode::AlphaWeighted;
    bool record_dominant = false;     // track highest-weight primitive per pixel
    // Relative z quantum for the front-to-back sort. Samples within the same
    // quantum are ordered by primitive index, so co-surface primitives from
    // different pixel-aligned clouds composite coherently instead of by
    // depth noise (z-fighting stabilization). 0 = exact z order.
    double z_order_quantum = 0.01;
};

struct RenderStats {
    int64_t culled_behind = 0;
    int64_t culled_offscreen = 0;
    int64_t skipped_singular = 0;
};

struct RenderOutput {
    ImageBuffer color;
    DepthMap depth;
    std::vector<float> alpha;      // accumulated opacity per pixel
    std::vector<int32_t> dominant; // primitive index with largest weight, -1 = none
    RenderStats stats;
};

struct ProjectedGaussian {
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;  // SPD after the +0.3 I dilation
    double z = 0.0;
};

namespace detail {

// Footprint radius (in stddevs) covering all samples with alpha >= alpha_skip,
// never below cull_sigma. Larger radii only make culling more conservative.
inline double footprint_sigmas(double opacity, const RenderOptions& opts) {
    double r = opts.cull_sigma;
    if (opacity > opts.alpha_skip)
        r = std::max(r, std::sqrt(2.0 * std::log(opacity / opts.alpha_skip)));
    return r;
}

}  // namespace detail

// EWA-style projection: cov2d = J W Sigma W^T J^T + 0.3 I with J the
// perspective Jacobian at the primitive center and W the extrinsic rotation.
// Returns false (culled) behind the near plane or when the footprint misses
// the image.
inline bool project_gaussian(const GaussianPrimitive& g, const Camera& cam,
                             const RenderOptions& opts, ProjectedGaussian& out,
                             RenderStats* stats = nullptr) {
    if (!g.position.allFinite() || !std::isfinite(g.opacity))
        throw std::invalid_argument("project_gaussian: non-finite input");
    const Eigen::Vector3d p = cam.to_camera(g.position);
    if (p.z() <= opts.near_plane) {
        if (stats) ++stats->culled_behind;
        return false;
    }
    const double inv_z = 1.0 / p.z();
    out.z = p.z();
    out.mean.x() = cam.fx() * p.x() * inv_z + cam.cx();
    out.mean.y() = cam.fy() * p.y() * inv_z + cam.cy();

    Eigen::Matrix<double, 2, 3> J;
    J << cam.fx() * inv_z, 0.0, -cam.fx() * p.x() * inv_z * inv_z,
         0.0, cam.fy() * inv_z, -cam.fy() * p.y() * inv_z * inv_z;
    const Eigen::Matrix3d W = cam.rotation();
    out.cov = J * W * g.covariance() * W.transpose() * J.transpose();
    out.cov += 0.3 * Eigen::Matrix2d::Identity();

    const double sig = detail::footprint_sigmas(g.opacity, opts);
    const double rx = sig * std::sqrt(out.cov(0, 0));
    const double ry = sig * std::sqrt(out.cov(1, 1));
    if (out.mean.x() + rx < 0.0 || out.mean.x() - rx > cam.width ||
        out.mean.y() + ry < 0.0 || out.mean.y() - ry > cam.height) {
        if (stats) ++stats->culled_offscreen;
        return false;
    }
    return true;
}

namespace detail {

struct SplatSample {
    int32_t index;     // original primitive index (depth tie-break)
    int64_t z_key;     // quantized depth rank used for ordering
    float opacity;
    float r, g, b;
    double z;
    double mean_x, mean_y;
    double inv_a, inv_b, inv_c;  // inverse covariance [[a,b],[b,c]]
    double cutoff;               // max quadratic form retained
    double q_max;                // alpha-skip expressed on the quadratic form
    int x0, x1, y0, y1;          // pixel bounds, half-open
};

// exp on the gaussian falloff: float precision is plenty (the value feeds a
// sample weight, and it is a fixed function of pixel geometry, so finite
// differencing in color/opacity never sees its rounding)
inline double falloff(double q) {
    return static_cast<double>(std::exp(static_cast<float>(-0.5 * q)));
}

// Projects, culls and depth-sorts a scene for one camera. Shared by the tiled
// renderer, the brute-force oracle and the refinement forward/backward pass.
inline std::vector<SplatSample> prepare_splats(const GaussianScene& scene, const Camera& cam,
                                               const RenderOptions& opts, RenderStats& stats,
                                               bool cull_offscreen) {
    std::vector<SplatSample> splats;
    splats.reserve(scene.size());
    for (size_t i = 0; i < scene.size(); ++i) {
        const auto& g = scene.primitives[i];
        ProjectedGaussian proj;
        RenderStats local;
        if (!project_gaussian(g, cam, opts, proj, &local)) {
            if (local.culled_behind) {  // can never contribute
                ++stats.culled_behind;
                continue;
            }
            if (cull_offscreen) {  // brute force keeps off-image primitives
                ++stats.culled_offscreen;
                continue;
            }
        }
        const double det = proj.cov(0, 0) * proj.cov(1, 1) - proj.cov(0, 1) * proj.cov(0, 1);
        const double tr = proj.cov(0, 0) + proj.cov(1, 1);
        // eigenvalues of the 2x2 SPD covariance
        const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
        const double lmax = tr / 2.0 + disc, lmin = tr / 2.0 - disc;
        if (!(lmin > 0.0) || lmax / lmin > 1e8) {
            ++stats.skipped_singular;
            continue;
        }
        SplatSample s;
        s.index = static_cast<int32_t>(i);
        // log-spaced buckets make the quantum relative to depth
        s.z_key = opts.z_order_quantum > 0.0
                      ? static_cast<int64_t>(std::floor(std::log(proj.z) / opts.z_order_quantum))
                      : 0;
        s.opacity = static_cast<float>(g.opacity);
        s.r = static_cast<float>(g.color.x());
        s.g = static_cast<float>(g.color.y());
        s.b = static_cast<float>(g.color.z());
        s.z = proj.z;
        s.mean_x = proj.mean.x();
        s.mean_y = proj.mean.y();
        const double inv_det = 1.0 / det;
        s.inv_a = proj.cov(1, 1) * inv_det;
        s.inv_b = -proj.cov(0, 1) * inv_det;
        s.inv_c = proj.cov(0, 0) * inv_det;
        const double sig = footprint_sigmas(g.opacity, opts);
        s.cutoff = sig * sig;
        s.q_max = g.opacity > opts.alpha_skip
                      ? 2.0 * std::log(g.opacity / opts.alpha_skip)
                      : -1.0;
        const double rx = sig * std::sqrt(proj.cov(0, 0));
        const double ry = sig * std::sqrt(proj.cov(1, 1));
        s.x0 = static_cast<int>(std::clamp(std::floor(proj.mean.x() - rx), 0.0, double(cam.width)));
        s.x1 = static_cast<int>(std::clamp(std::ceil(proj.mean.x() + rx) + 1.0, 0.0, double(cam.width)));
        s.y0 = static_cast<int>(std::clamp(std::floor(proj.mean.y() - ry), 0.0, double(cam.height)));
        s.y1 = static_cast<int>(std::clamp(std::ceil(proj.mean.y() + ry) + 1.0, 0.0, double(cam.height)));
        splats.push_back(s);
    }
    std::sort(splats.begin(), splats.end(), [&](const SplatSample& a, const SplatSample& b) {
        if (opts.z_order_quantum > 0.0 && a.z_key != b.z_key) return a.z_key < b.z_key;
        if (opts.z_order_quantum <= 0.0 && a.z != b.z) return a.z < b.z;
        return a.index < b.index;
    });
    return splats;
}

// Front-to-back compositing of one pixel over an ordered splat subset.
template <class PerSample>
inline void composite_pixel(double px, double py, const std::vector<SplatSample>& splats,
                            const std::vector<int32_t>& order, const RenderOptions& opts,
                            PerSample&& emit) {
    double T = 1.0;
    for (int32_t si : order) {
        const SplatSample& s = splats[si];
        const double dx = px - s.mean_x;
        const double dy = py - s.mean_y;
        const double q = s.inv_a * dx * dx + 2.0 * s.inv_b * dx * dy + s.inv_c * dy * dy;
        if (q > s.q_max) continue;  // alpha would fall below alpha_skip
        double alpha = s.opacity * falloff(q);
        if (alpha < opts.alpha_skip) continue;
        if (alpha > opts.alpha_clamp) alpha = opts.alpha_clamp;
        emit(s, alpha, T);
        T *= 1.0 - alpha;
        if (T < opts.transmittance_floor) break;
    }
}

inline void composite_range(const Camera& cam, const std::vector<SplatSample>& splats,
                            const std::vector<std::vector<int32_t>>* tile_bins, int tiles_x,
                            const RenderOptions& opts, int64_t px_begin, int64_t px_end,
                            RenderOutput& out) {
    std::vector<int32_t> all;
    if (!tile_bins) {
        all.resize(splats.size());
        std::iota(all.begin(), all.end(), 0);
    }
    for (int64_t idx = px_begin; idx < px_end; ++idx) {
        const int x = static_cast<int>(idx % cam.width);
        const int y = static_cast<int>(idx / cam.width);
        const std::vector<int32_t>& order =
            tile_bins ? (*tile_bins)[(y / opts.tile_size) * tiles_x + (x / opts.tile_size)] : all;
        double cr = 0, cg = 0, cb = 0, wsum = 0, zsum = 0;
        double median_z = 0.0;
        double best_w = 0.0;
        int32_t best_idx = -1;
        composite_pixel(x + 0.5, y + 0.5, splats, order, opts,
                        [&](const SplatSample& s, double alpha, double T) {
                            const double w = alpha * T;
                            cr += s.r * w;
                            cg += s.g * w;
                            cb += s.b * w;
                            zsum += s.z * w;
                            if (median_z == 0.0 && T * (1.0 - alpha) < 0.5) median_z = s.z;
                            wsum += w;
                            if (opts.record_dominant && w > best_w) {
                                best_w = w;
                                best_idx = s.index;
                            }
                        });
        out.color.data[idx * 3 + 0] = static_cast<float>(cr);
        out.color.data[idx * 3 + 1] = static_cast<float>(cg);
        out.color.data[idx * 3 + 2] = static_cast<float>(cb);
        out.alpha[idx] = static_cast<float>(wsum);
        if (wsum >= opts.alpha_floor) {
            double z = zsum / wsum;
            if (opts.depth_mode == DepthMode::MedianSurface && median_z > 0.0) z = median_z;
            out.depth.data[idx] = static_cast<float>(z);
        } else {
            out.depth.data[idx] = 0.f;
        }
        if (opts.record_dominant) out.dominant[idx] = best_idx;
    }
}

}  // namespace detail

// Tiled forward renderer. Deterministic: global front-to-back order with
// index tie-breaks, disjoint per-tile pixel writes.
inline RenderOutput render(const GaussianScene& scene, const Camera& cam,
                           const RenderOptions& opts = {}) {
    if (scene.empty()) throw std::invalid_argument("render: empty scene");
    RenderOutput out;
    out.color = ImageBuffer(cam.width, cam.height);
    out.depth = DepthMap(cam.width, cam.height);
    out.alpha.assign(static_cast<size_t>(cam.width) * cam.height, 0.f);
    if (opts.record_dominant)
        out.dominant.assign(static_cast<size_t>(cam.width) * cam.height, -1);

    const auto splats = detail::prepare_splats(scene, cam, opts, out.stats, /*cull_offscreen=*/true);
    const int tiles_x = (cam.width + opts.tile_size - 1) / opts.tile_size;
    const int tiles_y = (cam.height + opts.tile_size - 1) / opts.tile_size;
    std::vector<std::vector<int32_t>> bins(static_cast<size_t>(tiles_x) * tiles_y);
    for (size_t si = 0; si < splats.size(); ++si) {
        const auto& s = splats[si];
        const int tx0 = s.x0 / opts.tile_size, tx1 = (s.x1 - 1) / opts.tile_size;
        const int ty0 = s.y0 / opts.tile_size, ty1 = (s.y1 - 1) / opts.tile_size;
        if (s.x0 >= s.x1 || s.y0 >= s.y1) continue;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                bins[static_cast<size_t>(ty) * tiles_x + tx].push_back(static_cast<int32_t>(si));
    }
    const int64_t n = static_cast<int64_t>(cam.width) * cam.height;
    parallel_chunks(n, static_cast<int64_t>(opts.tile_size) * cam.width,
                    [&](int64_t b, int64_t e, int64_t) {
                        detail::composite_range(cam, splats, &bins, tiles_x, opts, b, e, out);
                    });
    return out;
}

// Oracle path: no tiling, no off-image culling, every pixel walks the full
// depth-sorted list. Identical contract to render().
inline RenderOutput render_bruteforce(const GaussianScene& scene, const Camera& cam,
                                      const RenderOptions& opts = {}) {
    if (scene.empty()) throw std::invalid_argument("render: empty scene");
    RenderOutput out;
    out.color = ImageBuffer(cam.width, cam.height);
    out.depth = DepthMap(cam.width, cam.height);
    out.alpha.assign(static_cast<size_t>(cam.width) * cam.height, 0.f);
    if (opts.record_dominant)
        out.dominant.assign(static_cast<size_t>(cam.width) * cam.height, -1);
    auto bf = opts;
    bf.cull_sigma = 1e9;  // evaluate everything everywhere
    const auto splats = detail::prepare_splats(scene, cam, bf, out.stats, /*cull_offscreen=*/false);
    const int64_t n = static_cast<int64_t>(cam.width) * cam.height;
    detail::composite_range(cam, splats, nullptr, 0, opts, 0, n, out);
    return out;
}

}  // namespace desplat
