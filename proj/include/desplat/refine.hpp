// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "desplat/mask_cascade.hpp"
#include "desplat/rasterizer.hpp"
#include "desplat/warp.hpp"

namespace desplat {

// Which mask feeds the supervised loss; the ladder of the training-paradigm
// ablation.
enum class RefineMaskMode { AllOnes, Robust, RefFiltered, Full };

struct RefineConfig {
    int iterations = 200;
    // steps sized for pixel-aligned scenes around 128..256 px (the loss is
    // normalized by the masked pixel count, so gradients scale with 1/|M|)
    double color_step = 2000.0;
    double opacity_step = 800.0;
    double aux_weight = 1.0;  // weight on the occlusion-supervision term
    int mask_period = 20;     // iterations between mask recomputes
    RefineMaskMode mask_mode = RefineMaskMode::Full;
    bool use_aux = true;  // only active in Full mode
    double divergence_factor = 10.0;

    void validate() const {
        if (iterations < 1) throw std::invalid_argument("refine: iterations must be >= 1");
        if (color_step < 0 || opacity_step < 0)
            throw std::invalid_argument("refine: step sizes must be >= 0");
        if (mask_period < 1) throw std::invalid_argument("refine: mask_period must be >= 1");
    }
};

struct RefineHistoryRow {
    int iteration = 0;
    double masked_loss = 0.0;
    double aux_loss = 0.0;
};

struct RefineResult {
    GaussianScene scene;
    std::vector<RefineHistoryRow> history;
    bool reverted = false;  // guardrail: final loss would have exceeded the initial one
};

struct RefineDivergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Masked photometric loss on one view: mean channel-mean squared residual
// over mask-1 pixels.
inline double masked_query_loss(const BinaryMask& mask, const ImageBuffer& target,
                                const ImageBuffer& rendered) {
    if (mask.width != target.width || mask.height != target.height ||
        rendered.width != target.width || rendered.height != target.height)
        throw std::invalid_argument("masked_query_loss: dimension mismatch");
    const int64_t count = mask.count_ones();
    if (count == 0) {
        warn("masked_query_loss: mask is all zeros, loss defined as 0");
        return 0.0;
    }
    double loss = 0.0;
    for (size_t px = 0; px < mask.data.size(); ++px) {
        if (!mask.data[px]) continue;
        double s = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double d = double(target.data[px * 3 + c]) - rendered.data[px * 3 + c];
            s += d * d;
        }
        loss += s / 3.0;
    }
    return loss / count;
}

// Occlusion supervision on reference views: the query's distractor region is
// warped into each reference and, gated by that reference's entity-filled
// static mask, weights its photometric residual. Mean per view, summed over
// views.
inline double auxiliary_loss(const BinaryMask& query_mask, const Camera& query_cam,
                             const DepthMap& query_depth,
                             const std::vector<ReferenceView>& refs,
                             const std::vector<RenderOutput>& ref_renders,
                             const std::vector<BinaryMask>& ref_static_masks, double eps_z) {
    if (refs.size() != ref_renders.size() || refs.size() != ref_static_masks.size())
        throw std::invalid_argument("auxiliary_loss: reference arrays disagree");
    double total = 0.0;
    const BinaryMask inv = mask_not(query_mask);
    for (size_t i = 0; i < refs.size(); ++i) {
        const BinaryMask warped =
            warp_mask(inv, query_depth, query_cam, refs[i].camera, ref_renders[i].depth, eps_z);
        const BinaryMask weight = mask_and(warped, ref_static_masks[i]);
        double view_loss = 0.0;
        for (size_t px = 0; px < weight.data.size(); ++px) {
            if (!weight.data[px]) continue;
            double s = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d =
                    double(refs[i].image.data[px * 3 + c]) - ref_renders[i].color.data[px * 3 + c];
                s += d * d;
            }
            view_loss += s / 3.0;
        }
        total += view_loss / weight.data.size();
    }
    return total;
}

namespace detail {

// Geometry for one supervised view, fixed across iterations (positions,
// scales and the depth order never change during refinement). Footprints are
// prepared at opacity 1 so evolving opacities stay inside the cached bounds;
// the per-sample alpha_skip test matches render() exactly.
struct RefineView {
    Camera cam;
    ImageBuffer target;
    std::vector<double> weight;  // per-pixel loss coefficient (normalization folded in)
    std::vector<SplatSample> splats;
    std::vector<std::vector<int32_t>> bins;
    int tiles_x = 0;
    bool active = false;  // any nonzero weight this mask epoch
    std::vector<uint8_t> chunk_active;  // row chunks with any nonzero weight

    void refresh_chunk_activity(int64_t chunk) {
        const int64_t n = static_cast<int64_t>(weight.size());
        chunk_active.assign(chunk_count(n, chunk), 0);
        for (int64_t ci = 0; ci < static_cast<int64_t>(chunk_active.size()); ++ci) {
            const int64_t e = std::min(n, (ci + 1) * chunk);
            for (int64_t i = ci * chunk; i < e; ++i)
                if (weight[i] != 0.0) {
                    chunk_active[ci] = 1;
                    break;
                }
        }
    }

    void prepare(const GaussianScene& scene, const Camera& camera, const ImageBuffer& image,
                 const RenderOptions& opts) {
        cam = camera;
        target = image;
        GaussianScene opaque = scene;
        for (auto& g : opaque.primitives) g.opacity = 1.0;
        RenderStats stats;
        splats = prepare_splats(opaque, cam, opts, stats, /*cull_offscreen=*/true);
        tiles_x = (cam.width + opts.tile_size - 1) / opts.tile_size;
        const int tiles_y = (cam.height + opts.tile_size - 1) / opts.tile_size;
        bins.assign(static_cast<size_t>(tiles_x) * tiles_y, {});
        for (size_t si = 0; si < splats.size(); ++si) {
            const auto& s = splats[si];
            if (s.x0 >= s.x1 || s.y0 >= s.y1) continue;
            for (int ty = s.y0 / opts.tile_size; ty <= (s.y1 - 1) / opts.tile_size; ++ty)
                for (int tx = s.x0 / opts.tile_size; tx <= (s.x1 - 1) / opts.tile_size; ++tx)
                    bins[static_cast<size_t>(ty) * tiles_x + tx].push_back(static_cast<int32_t>(si));
        }
    }
};

struct SampleRecord {
    int32_t prim;
    double alpha;
    double T;
    double gaussian;  // exp(-q/2)
    bool clamped;
};

// Reusable per-chunk gradient buffers (allocation is hot when called per
// iteration).
struct PassWorkspace {
    std::vector<std::vector<Eigen::Vector3d>> gc;
    std::vector<std::vector<double>> go;
};

// Forward + backward over one view; returns the view loss and accumulates
// d(loss)/d(color), d(loss)/d(opacity) into grad_c / grad_o.
inline double view_pass(const RefineView& view, const GaussianScene& scene,
                        const RenderOptions& opts, bool with_gradient,
                        std::vector<Eigen::Vector3d>* grad_c, std::vector<double>* grad_o,
                        PassWorkspace* ws = nullptr) {
    const int w = view.cam.width, h = view.cam.height;
    const int64_t n_px = static_cast<int64_t>(w) * h;
    const int64_t chunk = static_cast<int64_t>(opts.tile_size) * w;
    const int64_t nchunks = chunk_count(n_px, chunk);
    std::vector<double> chunk_loss(nchunks, 0.0);
    PassWorkspace local;
    if (with_gradient && !ws) ws = &local;
    if (with_gradient) {
        ws->gc.resize(nchunks);
        ws->go.resize(nchunks);
    }
    const bool use_activity = view.chunk_active.size() == static_cast<size_t>(nchunks);
    // opacities are fixed within one pass: precompute the skip thresholds
    std::vector<double> q_max(scene.size());
    for (size_t i = 0; i < scene.size(); ++i)
        q_max[i] = scene.primitives[i].opacity > opts.alpha_skip
                       ? 2.0 * std::log(scene.primitives[i].opacity / opts.alpha_skip)
                       : -1.0;

    parallel_chunks(n_px, chunk, [&](int64_t b, int64_t e, int64_t ci) {
        if (use_activity && !view.chunk_active[ci]) return;
        std::vector<SampleRecord> stack;
        stack.reserve(64);
        std::vector<Eigen::Vector3d>* gc = nullptr;
        std::vector<double>* go = nullptr;
        if (with_gradient) {
            ws->gc[ci].assign(scene.size(), Eigen::Vector3d::Zero());
            ws->go[ci].assign(scene.size(), 0.0);
            gc = &ws->gc[ci];
            go = &ws->go[ci];
        }
        for (int64_t idx = b; idx < e; ++idx) {
            const double coeff = view.weight[idx];
            if (coeff == 0.0) continue;
            const int x = static_cast<int>(idx % w);
            const int y = static_cast<int>(idx / w);
            const auto& order =
                view.bins[(y / opts.tile_size) * view.tiles_x + (x / opts.tile_size)];
            const double px = x + 0.5, py = y + 0.5;
            stack.clear();
            Eigen::Vector3d color = Eigen::Vector3d::Zero();
            double T = 1.0;
            for (int32_t si : order) {
                const SplatSample& s = view.splats[si];
                const double dx = px - s.mean_x, dy = py - s.mean_y;
                const double q = s.inv_a * dx * dx + 2.0 * s.inv_b * dx * dy + s.inv_c * dy * dy;
                if (q > q_max[s.index]) continue;
                const double g = falloff(q);
                const auto& prim = scene.primitives[s.index];
                double alpha = prim.opacity * g;
                if (alpha < opts.alpha_skip) continue;
                const bool clamped = alpha > opts.alpha_clamp;
                if (clamped) alpha = opts.alpha_clamp;
                color += prim.color * (alpha * T);
                if (with_gradient) stack.push_back({s.index, alpha, T, g, clamped});
                T *= 1.0 - alpha;
                if (T < opts.transmittance_floor) break;
            }
            Eigen::Vector3d dLdC;
            double px_loss = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = color[c] - view.target.data[idx * 3 + c];
                px_loss += d * d;
                dLdC[c] = 2.0 * coeff * d;
            }
            chunk_loss[ci] += coeff * px_loss;
            if (!with_gradient || stack.empty()) continue;
            Eigen::Vector3d suffix = Eigen::Vector3d::Zero();  // sum of c_k alpha_k T_k behind m
            for (size_t m = stack.size(); m-- > 0;) {
                const SampleRecord& r = stack[m];
                const auto& prim = scene.primitives[r.prim];
                (*gc)[r.prim] += dLdC * (r.alpha * r.T);
                if (!r.clamped) {
                    const Eigen::Vector3d dCda =
                        prim.color * r.T - suffix / (1.0 - r.alpha);
                    (*go)[r.prim] += dLdC.dot(dCda) * r.gaussian;
                }
                suffix += prim.color * (r.alpha * r.T);
            }
        }
    });

    double loss = 0.0;
    for (double l : chunk_loss) loss += l;
    if (with_gradient) {
        for (int64_t ci = 0; ci < nchunks; ++ci) {
            if (use_activity && !view.chunk_active[ci]) continue;
            if (ws->gc[ci].empty()) continue;
            for (size_t i = 0; i < scene.size(); ++i) {
                (*grad_c)[i] += ws->gc[ci][i];
                (*grad_o)[i] += ws->go[ci][i];
            }
        }
    }
    return loss;
}

}  // namespace detail

// Mask-guided descent on primitive colors and opacities; geometry (position,
// scale, rotation, depth order) stays frozen. Masks are recomputed from the
// evolving scene every mask_period iterations.
inline RefineResult refine(const GaussianScene& input, const std::vector<ReferenceView>& refs,
                           const ImageBuffer& query_image, const Camera& query_cam,
                           const EntityMap& query_entities, const MaskCascadeConfig& cascade_cfg,
                           const RefineConfig& cfg, const RenderOptions& ropts = {}) {
    cfg.validate();
    if (refs.empty()) throw std::invalid_argument("refine: need references");
    RefineResult result;
    result.scene = input;
    GaussianScene& scene = result.scene;

    detail::RefineView query_view;
    query_view.prepare(scene, query_cam, query_image, ropts);
    std::vector<detail::RefineView> ref_views(refs.size());
    const bool aux_possible = cfg.use_aux && cfg.mask_mode == RefineMaskMode::Full;
    if (aux_possible)
        for (size_t i = 0; i < refs.size(); ++i)
            ref_views[i].prepare(scene, refs[i].camera, refs[i].image, ropts);

    const size_t query_px = query_image.pixel_count();
    double initial_total = 0.0, final_total = 0.0;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        if (iter % cfg.mask_period == 0) {
            // rebuild masks and per-pixel loss coefficients from the current scene
            BinaryMask mask = BinaryMask::ones(query_cam.width, query_cam.height);
            const RenderOutput query_render = render(scene, query_cam, ropts);
            ReferenceRenderSet refset;
            if (cfg.mask_mode != RefineMaskMode::AllOnes)
                refset = render_references(refs, scene, cascade_cfg, ropts);
            switch (cfg.mask_mode) {
                case RefineMaskMode::AllOnes:
                    break;
                case RefineMaskMode::Robust:
                    mask = robust_mask(query_image, query_render.color, cascade_cfg);
                    break;
                case RefineMaskMode::RefFiltered: {
                    const BinaryMask rob = robust_mask(query_image, query_render.color, cascade_cfg);
                    std::vector<BinaryMask> warped;
                    for (size_t i = 0; i < refs.size(); ++i)
                        warped.push_back(warp_consistent_mask(
                            refset.m_ref_en[i], refset.renders[i].depth, refs[i].image,
                            refs[i].camera, query_image, query_cam, query_render.depth,
                            cascade_cfg.eps_z, cascade_cfg.rho_consistency));
                    mask = fuse_query_mask(warped, rob);
                    break;
                }
                case RefineMaskMode::Full: {
                    const CascadeTrace trace =
                        predict_query_mask(refs, refset, query_cam, &query_image, query_entities,
                                           scene, cascade_cfg, ropts);
                    mask = trace.m_final;
                    break;
                }
            }
            const int64_t count = mask.count_ones();
            if (count == 0) warn("refine: query mask is all zeros; query term disabled");
            query_view.weight.assign(query_px, 0.0);
            for (size_t px = 0; px < query_px; ++px)
                if (mask.data[px]) query_view.weight[px] = 1.0 / (3.0 * count);
            query_view.active = count > 0;
            query_view.refresh_chunk_activity(static_cast<int64_t>(ropts.tile_size) * query_cam.width);

            if (aux_possible) {
                const BinaryMask inv = mask_not(mask);
                for (size_t i = 0; i < refs.size(); ++i) {
                    const BinaryMask warped =
                        warp_mask(inv, query_render.depth, query_cam, refs[i].camera,
                                  refset.renders[i].depth, cascade_cfg.eps_z);
                    const BinaryMask weight = mask_and(warped, refset.m_ref_en[i]);
                    auto& rv = ref_views[i];
                    rv.weight.assign(weight.data.size(), 0.0);
                    rv.active = false;
                    const double norm = cfg.aux_weight / (3.0 * weight.data.size());
                    for (size_t px = 0; px < weight.data.size(); ++px)
                        if (weight.data[px]) {
                            rv.weight[px] = norm;
                            rv.active = true;
                        }
                    rv.refresh_chunk_activity(static_cast<int64_t>(ropts.tile_size) *
                                              refs[i].camera.width);
                }
            }
        }

        std::vector<Eigen::Vector3d> grad_c(scene.size(), Eigen::Vector3d::Zero());
        std::vector<double> grad_o(scene.size(), 0.0);
        static thread_local detail::PassWorkspace ws;
        const double masked =
            query_view.active
                ? detail::view_pass(query_view, scene, ropts, true, &grad_c, &grad_o, &ws)
                : 0.0;
        double aux = 0.0;
        if (aux_possible)
            for (auto& rv : ref_views)
                if (rv.active)
                    aux += detail::view_pass(rv, scene, ropts, true, &grad_c, &grad_o, &ws);
        // aux weights already carry cfg.aux_weight; report the raw term
        const double aux_raw = cfg.aux_weight > 0 ? aux / cfg.aux_weight : 0.0;
        result.history.push_back({iter, masked, aux_raw});

        const double total = masked + aux;
        if (iter == 0) initial_total = total;
        final_total = total;
        if (total > cfg.divergence_factor * initial_total && total > 1e-12)
            throw RefineDivergence("refine: loss diverged at iteration " + std::to_string(iter) +
                                   " (" + std::to_string(total) + " vs initial " +
                                   std::to_string(initial_total) + ")");

        for (size_t i = 0; i < scene.size(); ++i) {
            auto& g = scene.primitives[i];
            g.color = (g.color - cfg.color_step * grad_c[i]).cwiseMax(0.0).cwiseMin(1.0);
            g.opacity = std::clamp(g.opacity - cfg.opacity_step * grad_o[i], 0.0, 1.0);
        }
    }

    // evaluate the returned scene under the last mask set
    {
        const double masked =
            query_view.active ? detail::view_pass(query_view, scene, ropts, false, nullptr, nullptr)
                              : 0.0;
        double aux = 0.0;
        if (aux_possible)
            for (auto& rv : ref_views)
                if (rv.active) aux += detail::view_pass(rv, scene, ropts, false, nullptr, nullptr);
        final_total = masked + aux;
        result.history.push_back(
            {cfg.iterations, masked, cfg.aux_weight > 0 ? aux / cfg.aux_weight : 0.0});
    }

    if (final_total > initial_total) {
        warn("refine: final loss above initial, reverting to the input scene");
        result.scene = input;
        result.reverted = true;
    }
    return result;
}

}  // namespace desplat
