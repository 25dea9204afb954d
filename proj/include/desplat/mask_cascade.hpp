// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <vector>

#include "desplat/common.hpp"
#include "desplat/image.hpp"
#include "desplat/rasterizer.hpp"
#include "desplat/warp.hpp"

namespace desplat {

// How the disparity mask combines per-reference coverage. CoverageUnion: a
// query pixel counts as covered when any reference observes it; the
// complement is the region absent from all references. CoverageIntersection:
// only pixels every reference observes count as covered.
enum class DisparitySemantics { CoverageUnion, CoverageIntersection };

struct MaskCascadeConfig {
    double rho1_scale = 1.5;   // inlier threshold = scale * median residual
    double rho2 = 0.5;         // patch vote threshold
    int inlier_kernel = 3;     // box filter over inlier bits
    int patch_kernel = 16;     // non-overlapping patch vote
    double rho_ref = 0.001;    // reference residual threshold
    double tau_fill = 0.5;     // entity fill fraction, (0,1]
    double eps_z = 0.01;       // warp z-test tolerance, relative
    double rho_consistency = 0.01;  // photometric gate on restoring votes
    double residual_warn_threshold = 0.1;
    DisparitySemantics disparity = DisparitySemantics::CoverageUnion;

    void validate() const {
        if (!(rho1_scale > 0) || !(rho2 > 0) || !(rho_ref > 0) || !(eps_z > 0))
            throw std::invalid_argument("cascade: thresholds must be positive");
        if (!(tau_fill > 0 && tau_fill <= 1))
            throw std::invalid_argument("cascade: tau_fill outside (0,1]");
    }
};

// Every intermediate mask of the cascade for one query view, reference masks
// included (the "mask evolution" trail).
struct CascadeTrace {
    BinaryMask m_rob;
    std::vector<BinaryMask> m_ref;     // per-reference static masks
    std::vector<BinaryMask> m_ref_en;  // entity-filled reference masks
    std::vector<BinaryMask> m_qry;     // reference masks warped into the query
    BinaryMask m_q;
    BinaryMask m_d;
    BinaryMask m_final;
};

namespace detail {

// channel-mean squared residual per pixel
inline std::vector<double> residual_map(const ImageBuffer& a, const ImageBuffer& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("residual: dimension mismatch");
    std::vector<double> r(a.pixel_count());
    for (size_t i = 0; i < r.size(); ++i) {
        double s = 0;
        for (int c = 0; c < 3; ++c) {
            const double d = double(a.data[i * 3 + c]) - b.data[i * 3 + c];
            s += d * d;
        }
        r[i] = s / 3.0;
    }
    return r;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    return v[mid];
}

}  // namespace detail

// Residual outlier mask: inlier bits from a median-scaled threshold, then a
// small box filter and a patch vote. 1 = static.
inline BinaryMask robust_mask(const ImageBuffer& query, const ImageBuffer& rendered,
                              const MaskCascadeConfig& cfg) {
    cfg.validate();
    const std::vector<double> r = detail::residual_map(query, rendered);
    const int w = query.width, h = query.height;

    double mean_r = 0;
    for (double v : r) mean_r += v;
    mean_r /= r.size();
    if (mean_r > cfg.residual_warn_threshold)
        warn("robust_mask: mean residual " + std::to_string(mean_r) +
             " exceeds " + std::to_string(cfg.residual_warn_threshold) +
             "; median-scaled threshold adapts and the mask may be unreliable");

    // epsilon floor keeps the degenerate zero-residual image all-static
    const double rho1 = std::max(cfg.rho1_scale * detail::median(r), 1e-12);
    std::vector<float> inlier(r.size());
    for (size_t i = 0; i < r.size(); ++i) inlier[i] = r[i] < rho1 ? 1.f : 0.f;

    // box mean over valid neighbors
    const int kr = cfg.inlier_kernel / 2;
    std::vector<float> boxed(r.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float s = 0;
            int n = 0;
            for (int dy = -kr; dy <= kr; ++dy) {
                for (int dx = -kr; dx <= kr; ++dx) {
                    const int sx = x + dx, sy = y + dy;
                    if (sx < 0 || sx >= w || sy < 0 || sy >= h) continue;
                    s += inlier[sy * w + sx];
                    ++n;
                }
            }
            boxed[y * w + x] = s / n;
        }
    }

    // non-overlapping patch vote; border patches shrink
    BinaryMask out(w, h);
    const int P = cfg.patch_kernel;
    for (int py = 0; py < h; py += P) {
        for (int px = 0; px < w; px += P) {
            const int y1 = std::min(h, py + P), x1 = std::min(w, px + P);
            double s = 0;
            for (int y = py; y < y1; ++y)
                for (int x = px; x < x1; ++x) s += boxed[y * w + x];
            const uint8_t bit = s / ((y1 - py) * (x1 - px)) > cfg.rho2 ? 1 : 0;
            for (int y = py; y < y1; ++y)
                for (int x = px; x < x1; ++x) out.at(x, y) = bit;
        }
    }
    return out;
}

// Low-residual regions of a re-rendered reference (strict threshold).
inline BinaryMask reference_static_mask(const ImageBuffer& ref, const ImageBuffer& rendered_ref,
                                        double rho_ref) {
    const std::vector<double> r = detail::residual_map(ref, rendered_ref);
    BinaryMask out(ref.width, ref.height);
    for (size_t i = 0; i < r.size(); ++i) out.data[i] = r[i] < rho_ref ? 1 : 0;
    return out;
}

// M_Q = (intersection of warped reference masks) OR robust mask.
inline BinaryMask fuse_query_mask(const std::vector<BinaryMask>& warped, const BinaryMask& m_rob) {
    if (warped.empty()) throw std::invalid_argument("fuse_query_mask: need >= 1 warped mask");
    BinaryMask inter = warped[0];
    for (size_t i = 1; i < warped.size(); ++i) inter = mask_and(inter, warped[i]);
    return mask_or(inter, m_rob);
}

// Coverage: all-ones masks of every reference warped into the query and
// merged. The complement marks disparity-induced regions absent from the
// references.
inline BinaryMask disparity_mask(const std::vector<Camera>& ref_cams,
                                 const std::vector<DepthMap>& ref_depths, const Camera& query_cam,
                                 const DepthMap& query_depth, double eps_z,
                                 DisparitySemantics semantics = DisparitySemantics::CoverageUnion) {
    if (ref_cams.empty() || ref_cams.size() != ref_depths.size())
        throw std::invalid_argument("disparity_mask: bad reference set");
    BinaryMask merged;
    for (size_t i = 0; i < ref_cams.size(); ++i) {
        const BinaryMask ones = BinaryMask::ones(ref_cams[i].width, ref_cams[i].height);
        const BinaryMask cov =
            warp_mask(ones, ref_depths[i], ref_cams[i], query_cam, query_depth, eps_z);
        if (i == 0)
            merged = cov;
        else
            merged = semantics == DisparitySemantics::CoverageUnion ? mask_or(merged, cov)
                                                                    : mask_and(merged, cov);
    }
    return merged;
}

// Snaps a noisy mask to entity boundaries: an entity flips to all-distractor
// when more than tau_fill of it is flagged, otherwise it is restored whole.
// Unlabeled pixels (entity 0) pass through.
inline BinaryMask entity_fill(const BinaryMask& mask, const EntityMap& entities, double tau_fill) {
    if (mask.width != entities.width || mask.height != entities.height)
        throw std::invalid_argument("entity_fill: dimension mismatch");
    std::unordered_map<uint32_t, std::pair<int64_t, int64_t>> tally;  // id -> (zeros, total)
    for (size_t i = 0; i < mask.data.size(); ++i) {
        const uint32_t id = entities.data[i];
        if (id == 0) continue;
        auto& t = tally[id];
        t.first += mask.data[i] == 0;
        ++t.second;
    }
    BinaryMask out = mask;
    for (size_t i = 0; i < mask.data.size(); ++i) {
        const uint32_t id = entities.data[i];
        if (id == 0) continue;
        const auto& t = tally[id];
        out.data[i] = (static_cast<double>(t.first) / t.second > tau_fill) ? 0 : 1;
    }
    return out;
}

struct RefinedMask {
    BinaryMask mask;    // final M
    BinaryMask filled;  // entity-filled candidate mask before re-imposing coverage
};

// Decouples disparity from distractor evidence: only zeros inside coverage
// are entity-filled; uncovered pixels are forced to 0 afterwards (excluded
// from any loss, but never filled).
inline RefinedMask refine_mask(const BinaryMask& m_q, const BinaryMask& m_d,
                               const EntityMap& entities, const MaskCascadeConfig& cfg) {
    if (m_q.width != m_d.width || m_q.height != m_d.height)
        throw std::invalid_argument("refine_mask: dimension mismatch");
    RefinedMask out;
    const BinaryMask candidates = mask_or(m_q, mask_not(m_d));
    out.filled = entity_fill(candidates, entities, cfg.tau_fill);
    out.mask = mask_and(out.filled, m_d);
    return out;
}

// Same scatter as warp_mask, but a vote only lands where the query image
// photometrically agrees with the reference's source pixel. The warped
// reference masks feed Eq.-9-style restoration of the robust mask, and a
// restoring vote is only trustworthy for content the query actually shares
// with the reference: without the gate, the references would vouch for the
// static surface *behind* a query-side distractor and un-mask it.
inline BinaryMask warp_consistent_mask(const BinaryMask& mask, const DepthMap& depth,
                                       const ImageBuffer& src_image, const Camera& cam_src,
                                       const ImageBuffer& query_image, const Camera& cam_dst,
                                       const DepthMap& dst_depth, double eps_z, double rho_photo) {
    if (mask.width != cam_src.width || mask.height != cam_src.height)
        throw std::invalid_argument("warp_consistent_mask: dimension mismatch");
    BinaryMask out(cam_dst.width, cam_dst.height);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            const double d = depth.at(x, y);
            if (!(d > 0.0)) continue;
            const auto p = project_point(unproject_pixel(x + 0.5, y + 0.5, d, cam_src), cam_dst);
            if (p.behind) continue;
            const int px = static_cast<int>(std::floor(p.u));
            const int py = static_cast<int>(std::floor(p.v));
            if (px < 0 || px >= cam_dst.width || py < 0 || py >= cam_dst.height) continue;
            const double dz = dst_depth.at(px, py);
            if (dz > 0.0 && std::abs(p.z - dz) > eps_z * dz) continue;
            double diff = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double e = double(src_image.at(x, y, c)) - query_image.at(px, py, c);
                diff += e * e;
            }
            if (diff / 3.0 >= rho_photo) continue;
            out.at(px, py) = 1;
        }
    }
    return out;
}

// One reference view with everything the cascade needs to re-render and
// re-project it.
struct ReferenceView {
    ImageBuffer image;
    Camera camera;
    EntityMap entities;
};

// Per-reference renders and static masks; shared across the pool queries that
// reuse the same coarse scene.
struct ReferenceRenderSet {
    std::vector<RenderOutput> renders;
    std::vector<BinaryMask> m_ref;
    std::vector<BinaryMask> m_ref_en;
};

inline ReferenceRenderSet render_references(const std::vector<ReferenceView>& refs,
                                            const GaussianScene& scene,
                                            const MaskCascadeConfig& cfg,
                                            const RenderOptions& ropts = {}) {
    ReferenceRenderSet out;
    for (const auto& ref : refs) {
        out.renders.push_back(render(scene, ref.camera, ropts));
        const RenderOutput& r = out.renders.back();
        BinaryMask m = reference_static_mask(ref.image, r.color, cfg.rho_ref);
        // a pixel the scene does not cover is not re-rendered static content,
        // however small its residual happens to be
        for (size_t px = 0; px < m.data.size(); ++px)
            if (r.alpha[px] < ropts.alpha_floor) m.data[px] = 0;
        out.m_ref.push_back(std::move(m));
        out.m_ref_en.push_back(entity_fill(out.m_ref.back(), ref.entities, cfg.tau_fill));
    }
    return out;
}

// Full cascade for one query view against a scene reconstructed from exactly
// these references. Pass query_image = nullptr when the query has no capture
// (pure feedforward): the robust term is then all-zeros and the mask reduces
// to warped reference consensus inside coverage.
inline CascadeTrace predict_query_mask(const std::vector<ReferenceView>& refs,
                                       const ReferenceRenderSet& refset, const Camera& query_cam,
                                       const ImageBuffer* query_image,
                                       const EntityMap& query_entities, const GaussianScene& scene,
                                       const MaskCascadeConfig& cfg,
                                       const RenderOptions& ropts = {}) {
    cfg.validate();
    if (refs.empty()) throw std::invalid_argument("predict_query_mask: need references");
    CascadeTrace trace;
    const RenderOutput query_render = render(scene, query_cam, ropts);

    trace.m_rob = query_image ? robust_mask(*query_image, query_render.color, cfg)
                              : BinaryMask(query_cam.width, query_cam.height, 0);

    trace.m_ref = refset.m_ref;
    trace.m_ref_en = refset.m_ref_en;
    std::vector<Camera> ref_cams;
    std::vector<DepthMap> ref_depths;
    for (size_t i = 0; i < refs.size(); ++i) {
        if (query_image)
            trace.m_qry.push_back(warp_consistent_mask(
                refset.m_ref_en[i], refset.renders[i].depth, refs[i].image, refs[i].camera,
                *query_image, query_cam, query_render.depth, cfg.eps_z, cfg.rho_consistency));
        else
            trace.m_qry.push_back(warp_mask(refset.m_ref_en[i], refset.renders[i].depth,
                                            refs[i].camera, query_cam, query_render.depth,
                                            cfg.eps_z));
        ref_cams.push_back(refs[i].camera);
        ref_depths.push_back(refset.renders[i].depth);
    }
    trace.m_q = fuse_query_mask(trace.m_qry, trace.m_rob);
    trace.m_d = disparity_mask(ref_cams, ref_depths, query_cam, query_render.depth, cfg.eps_z,
                               cfg.disparity);
    trace.m_final = refine_mask(trace.m_q, trace.m_d, query_entities, cfg).mask;
    return trace;
}

inline CascadeTrace predict_query_mask(const std::vector<ReferenceView>& refs,
                                       const Camera& query_cam, const ImageBuffer* query_image,
                                       const EntityMap& query_entities, const GaussianScene& scene,
                                       const MaskCascadeConfig& cfg,
                                       const RenderOptions& ropts = {}) {
    const ReferenceRenderSet refset = render_references(refs, scene, cfg, ropts);
    return predict_query_mask(refs, refset, query_cam, query_image, query_entities, scene, cfg,
                              ropts);
}

}  // namespace desplat
