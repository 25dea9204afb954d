// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "desplat/mask_cascade.hpp"
#include "desplat/reconstruct.hpp"
#include "desplat/refine.hpp"

namespace desplat {

struct PoolEntry {
    ImageBuffer image;
    Camera camera;
    EntityMap entities;
    DepthMap depth;  // oracle backend input; empty for plane sweep
    double score = std::numeric_limits<double>::quiet_NaN();
    bool is_initial_reference = false;
};

struct ScenePool {
    std::vector<PoolEntry> entries;

    size_t size() const { return entries.size(); }
};

enum class ScoreNormalization { None, Coverage };

struct InferenceConfig {
    int n_references = 4;
    int k_pool = 8;
    double stage1_scale = 0.5;
    bool pruning = true;
    int guard_quorum = 0;  // 0 = all references
    bool refine_after_prune = false;
    RefineConfig refine;
    ScoreNormalization normalization = ScoreNormalization::None;
    bool report_timings = false;

    void validate() const {
        if (!(stage1_scale > 0.0 && stage1_scale <= 1.0))
            throw std::invalid_argument("inference: stage1_scale outside (0,1]");
        if (n_references < 1 || n_references > k_pool)
            throw std::invalid_argument("inference: need 1 <= N <= K");
    }
};

struct InferenceReport {
    std::vector<int> stage1_refs;
    std::vector<int> stage2_refs;
    std::vector<double> scores;
    int64_t pruned_count = 0;
    int64_t kept_count = 0;
    int64_t guarded_count = 0;
    std::map<std::string, double> timings_ms;  // populated when report_timings is set

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["stage1_refs"] = stage1_refs;
        j["stage2_refs"] = stage2_refs;
        j["scores"] = scores;
        j["pruned_count"] = pruned_count;
        j["kept_count"] = kept_count;
        j["guarded_count"] = guarded_count;
        j["timings_ms"] = timings_ms;
        return j;
    }
};

// N pool entries nearest the query camera center; ties broken by index,
// output sorted by index.
inline std::vector<int> sample_initial_references(const ScenePool& pool, const Camera& query_cam,
                                                  int n) {
    if (static_cast<int>(pool.size()) < n)
        throw std::invalid_argument("sample_initial_references: pool smaller than N");
    const Eigen::Vector3d qc = query_cam.center();
    std::vector<std::pair<double, int>> order;
    order.reserve(pool.size());
    for (size_t i = 0; i < pool.size(); ++i)
        order.emplace_back((pool.entries[i].camera.center() - qc).norm(), static_cast<int>(i));
    std::sort(order.begin(), order.end());
    std::vector<int> out;
    for (int i = 0; i < n; ++i) out.push_back(order[i].second);
    std::sort(out.begin(), out.end());
    return out;
}

// Indices of the N highest scores; ties by lower index, output sorted.
inline std::vector<int> select_top_n(const std::vector<double>& scores, int n) {
    if (static_cast<int>(scores.size()) < n)
        throw std::invalid_argument("select_top_n: fewer scores than N");
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    });
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Positive-pixel count of the predicted mask for every pool entry: non-chosen
// entries are treated as queries of the coarse scene, chosen references score
// their own entity-filled static mask. Higher = fewer distractor and
// disparity pixels.
inline std::vector<double> score_pool(const ScenePool& pool, const GaussianScene& coarse,
                                      const std::vector<int>& chosen,
                                      const MaskCascadeConfig& cascade_cfg,
                                      const InferenceConfig& cfg, const RenderOptions& ropts = {}) {
    std::vector<ReferenceView> refs;
    for (int i : chosen)
        refs.push_back({pool.entries[i].image, pool.entries[i].camera, pool.entries[i].entities});
    const ReferenceRenderSet refset = render_references(refs, coarse, cascade_cfg, ropts);

    std::vector<double> scores(pool.size(), 0.0);
    for (size_t i = 0; i < pool.size(); ++i) {
        const auto chosen_pos = std::find(chosen.begin(), chosen.end(), static_cast<int>(i));
        if (chosen_pos != chosen.end()) {
            scores[i] = static_cast<double>(refset.m_ref_en[chosen_pos - chosen.begin()].count_ones());
            continue;
        }
        const auto& entry = pool.entries[i];
        const CascadeTrace trace = predict_query_mask(refs, refset, entry.camera, &entry.image,
                                                      entry.entities, coarse, cascade_cfg, ropts);
        double s = static_cast<double>(trace.m_final.count_ones());
        if (cfg.normalization == ScoreNormalization::Coverage) {
            const int64_t cov = trace.m_d.count_ones();
            s = cov > 0 ? s / cov * trace.m_d.data.size() : 0.0;
        }
        scores[i] = s;
    }
    return scores;
}

// Removes primitives whose source pixel is distractor-masked, unless their
// center projects into the distractor region of at least `quorum` references
// (a commonly occluded region; pruning there would punch holes). The center
// test scans a small window so that the guard is tolerant of per-view
// boundary discretization of the masked region. Survivors are untouched.
inline GaussianScene prune_distractors(const GaussianScene& scene,
                                       const std::vector<BinaryMask>& ref_masks,
                                       const std::vector<Camera>& ref_cams, int quorum = 0,
                                       int64_t* pruned = nullptr, int64_t* guarded = nullptr,
                                       int guard_radius = 2) {
    if (ref_masks.size() != ref_cams.size() || ref_masks.empty())
        throw std::invalid_argument("prune_distractors: bad reference mask set");
    if (quorum <= 0) quorum = static_cast<int>(ref_masks.size());
    GaussianScene out;
    out.primitives.reserve(scene.size());
    int64_t n_pruned = 0, n_guarded = 0;
    for (const auto& g : scene.primitives) {
        if (!g.provenance)
            throw std::invalid_argument("prune_distractors: primitive without provenance");
        const int ref = g.provenance->ref_index;
        if (ref < 0 || ref >= static_cast<int>(ref_masks.size()))
            throw std::invalid_argument("prune_distractors: provenance outside reference set");
        if (ref_masks[ref].data[g.provenance->pixel_index]) {
            out.primitives.push_back(g);
            continue;
        }
        // candidate for removal: check common occlusion via center projection
        int occluded_in = 0;
        for (size_t j = 0; j < ref_cams.size(); ++j) {
            const auto p = project_point(g.position, ref_cams[j]);
            if (p.behind) continue;
            const int px = static_cast<int>(std::floor(p.u));
            const int py = static_cast<int>(std::floor(p.v));
            bool hit = false;
            for (int dy = -guard_radius; dy <= guard_radius && !hit; ++dy) {
                for (int dx = -guard_radius; dx <= guard_radius && !hit; ++dx) {
                    const int x = px + dx, y = py + dy;
                    if (x < 0 || x >= ref_masks[j].width || y < 0 || y >= ref_masks[j].height)
                        continue;
                    hit = ref_masks[j].at(x, y) == 0;
                }
            }
            if (hit) ++occluded_in;
        }
        if (occluded_in >= quorum) {
            out.primitives.push_back(g);
            ++n_guarded;
        } else {
            ++n_pruned;
        }
    }
    if (pruned) *pruned = n_pruned;
    if (guarded) *guarded = n_guarded;
    return out;
}

namespace detail {

// Area-average downscale; depth averages over valid samples only.
inline ImageBuffer downscale_image(const ImageBuffer& img, int w, int h) {
    ImageBuffer out(w, h);
    const double sx = double(img.width) / w, sy = double(img.height) / h;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int x0 = static_cast<int>(x * sx), x1 = std::max(x0 + 1, static_cast<int>((x + 1) * sx));
            const int y0 = static_cast<int>(y * sy), y1 = std::max(y0 + 1, static_cast<int>((y + 1) * sy));
            double acc[3] = {0, 0, 0};
            int n = 0;
            for (int yy = y0; yy < y1 && yy < img.height; ++yy)
                for (int xx = x0; xx < x1 && xx < img.width; ++xx) {
                    for (int c = 0; c < 3; ++c) acc[c] += img.at(xx, yy, c);
                    ++n;
                }
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = static_cast<float>(acc[c] / n);
        }
    }
    return out;
}

inline DepthMap downscale_depth(const DepthMap& depth, int w, int h) {
    DepthMap out(w, h);
    const double sx = double(depth.width) / w, sy = double(depth.height) / h;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int x0 = static_cast<int>(x * sx), x1 = std::max(x0 + 1, static_cast<int>((x + 1) * sx));
            const int y0 = static_cast<int>(y * sy), y1 = std::max(y0 + 1, static_cast<int>((y + 1) * sy));
            double acc = 0;
            int n = 0;
            for (int yy = y0; yy < y1 && yy < depth.height; ++yy)
                for (int xx = x0; xx < x1 && xx < depth.width; ++xx)
                    if (depth.at(xx, yy) > 0) {
                        acc += depth.at(xx, yy);
                        ++n;
                    }
            out.at(x, y) = n ? static_cast<float>(acc / n) : 0.f;
        }
    }
    return out;
}

inline EntityMap downscale_entities(const EntityMap& ents, int w, int h) {
    EntityMap out(w, h);  // nearest sample keeps ids crisp
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(x, y) = ents.at(std::min(ents.width - 1, x * ents.width / w),
                                   std::min(ents.height - 1, y * ents.height / h));
    return out;
}

inline Camera scale_camera(const Camera& cam, int w, int h) {
    Eigen::Matrix3d K = cam.intrinsics;
    K(0, 0) *= double(w) / cam.width;
    K(0, 2) *= double(w) / cam.width;
    K(1, 1) *= double(h) / cam.height;
    K(1, 2) *= double(h) / cam.height;
    return Camera(cam.extrinsics, K, w, h);
}

}  // namespace detail

struct TwoStageResult {
    ImageBuffer rendered;
    BinaryMask query_mask;
    GaussianScene scene;
    InferenceReport report;
};

// Coarse reconstruction at reduced resolution, pool scoring, reference
// re-selection, fine reconstruction, distractor pruning, optional refinement
// against the selected references, final query render.
inline TwoStageResult two_stage_infer(const ScenePool& pool, const Camera& query_cam,
                                      const InferenceConfig& cfg, const BackendConfig& backend,
                                      const MaskCascadeConfig& cascade_cfg,
                                      const RenderOptions& ropts = {}) {
    cfg.validate();
    if (pool.size() < static_cast<size_t>(cfg.n_references))
        throw std::invalid_argument("two_stage_infer: pool smaller than N");
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    TwoStageResult result;
    auto lap = [&, last = t0](const char* name) mutable {
        const auto now = clock::now();
        if (cfg.report_timings)
            result.report.timings_ms[name] =
                std::chrono::duration<double, std::milli>(now - last).count();
        last = now;
    };

    // stage 1: coarse scene from the nearest references, at reduced resolution
    result.report.stage1_refs = sample_initial_references(pool, query_cam, cfg.n_references);
    ScenePool small;
    const int sw = std::max(8, static_cast<int>(std::lround(pool.entries[0].camera.width * cfg.stage1_scale)));
    const int sh = std::max(8, static_cast<int>(std::lround(pool.entries[0].camera.height * cfg.stage1_scale)));
    for (const auto& e : pool.entries) {
        PoolEntry s;
        s.image = detail::downscale_image(e.image, sw, sh);
        s.camera = detail::scale_camera(e.camera, sw, sh);
        s.entities = e.entities.data.empty() ? EntityMap(sw, sh)
                                             : detail::downscale_entities(e.entities, sw, sh);
        if (!e.depth.data.empty()) s.depth = detail::downscale_depth(e.depth, sw, sh);
        small.entries.push_back(std::move(s));
    }
    std::vector<SourceView> coarse_refs;
    for (int i : result.report.stage1_refs)
        coarse_refs.push_back({small.entries[i].image, small.entries[i].camera, small.entries[i].depth});
    const GaussianScene coarse = reconstruct(coarse_refs, backend);
    lap("stage1_reconstruct");

    // keep mask decisions scale-free at the reduced resolution: the patch
    // vote keeps its receptive field, and the reference threshold tracks the
    // resampling noise of the coarser unprojection grid (which grows with the
    // squared pixel pitch)
    MaskCascadeConfig stage1_cascade = cascade_cfg;
    stage1_cascade.patch_kernel =
        std::max(4, static_cast<int>(std::lround(cascade_cfg.patch_kernel * cfg.stage1_scale)));
    stage1_cascade.rho_ref = cascade_cfg.rho_ref / (cfg.stage1_scale * cfg.stage1_scale);
    result.report.scores =
        score_pool(small, coarse, result.report.stage1_refs, stage1_cascade, cfg, ropts);
    lap("stage1_scoring");

    bool all_low = true;
    for (double s : result.report.scores)
        if (s > 0.5 * sw * sh) all_low = false;
    if (all_low)
        warn("two_stage_infer: every pool entry scores below half coverage; "
             "pool may be distractor-dominated");

    // stage 2: fine reconstruction from the top-scoring references
    result.report.stage2_refs = select_top_n(result.report.scores, cfg.n_references);
    std::vector<SourceView> fine_sources;
    std::vector<ReferenceView> fine_refs;
    std::vector<Camera> fine_cams;
    for (int i : result.report.stage2_refs) {
        const auto& e = pool.entries[i];
        fine_sources.push_back({e.image, e.camera, e.depth});
        fine_refs.push_back({e.image, e.camera, e.entities});
        fine_cams.push_back(e.camera);
    }
    GaussianScene fine = reconstruct(fine_sources, backend);
    lap("stage2_reconstruct");

    ReferenceRenderSet refset = render_references(fine_refs, fine, cascade_cfg, ropts);
    if (cfg.pruning) {
        fine = prune_distractors(fine, refset.m_ref_en, fine_cams, cfg.guard_quorum,
                                 &result.report.pruned_count, &result.report.guarded_count);
        refset = render_references(fine_refs, fine, cascade_cfg, ropts);
    }
    result.report.kept_count = static_cast<int64_t>(fine.size());
    lap("pruning");

    if (cfg.refine_after_prune) {
        // no query capture exists at inference; supervise each reference with
        // its own static mask
        RefineConfig rcfg = cfg.refine;
        rcfg.mask_mode = RefineMaskMode::AllOnes;
        rcfg.use_aux = false;
        for (size_t i = 0; i < fine_refs.size(); ++i) {
            // cheap round-robin: a few steps per reference
            RefineConfig per = rcfg;
            per.iterations = std::max(1, rcfg.iterations / static_cast<int>(fine_refs.size()));
            const RefineResult rr = refine(fine, fine_refs, fine_refs[i].image,
                                           fine_refs[i].camera, fine_refs[i].entities, cascade_cfg,
                                           per, ropts);
            fine = rr.scene;
        }
        refset = render_references(fine_refs, fine, cascade_cfg, ropts);
        lap("refine");
    }

    const RenderOutput query_render = render(fine, query_cam, ropts);
    result.rendered = query_render.color;

    // feedforward query mask: reference consensus inside coverage (no query
    // capture, so the robust term is empty)
    const CascadeTrace trace = predict_query_mask(fine_refs, refset, query_cam, nullptr,
                                                  EntityMap(query_cam.width, query_cam.height),
                                                  fine, cascade_cfg, ropts);
    result.query_mask = trace.m_final;
    result.scene = std::move(fine);
    lap("render");
    return result;
}

}  // namespace desplat
