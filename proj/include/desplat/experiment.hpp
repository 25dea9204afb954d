// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "desplat/dataset.hpp"
#include "desplat/inference.hpp"
#include "desplat/metrics.hpp"
#include "desplat/synthetic.hpp"

namespace desplat {

// Pipeline rungs of the ablation grid. Every rung runs the same mask-guided
// refinement; they differ in the mask driving it and in how references are
// selected and cleaned.
enum class Variant { Baseline, RobustMask, RefFiltered, Cascade, Scoring, Pruning };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Baseline: return "baseline";
        case Variant::RobustMask: return "robust_mask";
        case Variant::RefFiltered: return "ref_filtered";
        case Variant::Cascade: return "cascade";
        case Variant::Scoring: return "scoring";
        case Variant::Pruning: return "pruning";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& name) {
    for (Variant v : {Variant::Baseline, Variant::RobustMask, Variant::RefFiltered,
                      Variant::Cascade, Variant::Scoring, Variant::Pruning})
        if (name == variant_name(v)) return v;
    throw std::invalid_argument("unknown variant: " + name);
}

struct ExperimentConfig {
    std::optional<GeneratorConfig> generator;
    std::string dataset_path;
    std::vector<Variant> variants = {Variant::Baseline, Variant::Cascade, Variant::Scoring,
                                     Variant::Pruning};
    std::vector<int> pool_indices;
    std::vector<int> query_indices;
    BackendConfig backend;
    MaskCascadeConfig cascade;
    RefineConfig refine;
    InferenceConfig inference;
    RenderOptions render_opts;
    uint64_t seed = 0;
    std::string output_dir;
    bool save_renders = false;
    std::string dump_trace_dir;
    bool report_timings = false;
};

struct ViewResult {
    std::string variant;
    int query = -1;
    double psnr_db = 0.0;
    bool psnr_infinite = false;
    double ssim = 0.0;
    MaskMetrics mask;
    int64_t pruned_count = 0;
    int64_t kept_count = 0;
    std::vector<int> refs_used;
    std::string error;  // non-empty when this view failed
};

struct MetricReport {
    std::vector<ViewResult> views;
    std::map<std::string, double> variant_mean_psnr;
    std::map<std::string, double> variant_mean_ssim;
    std::map<std::string, double> variant_mean_iou;
    std::string config_hash;
    uint64_t seed = 0;
    std::map<std::string, double> timings_ms;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["config_hash"] = config_hash;
        j["seed"] = seed;
        j["lpips"] = nullptr;  // not computed; needs a pretrained network
        auto& rows = j["views"] = nlohmann::json::array();
        for (const auto& v : views) {
            nlohmann::json r;
            r["variant"] = v.variant;
            r["query"] = v.query;
            if (!v.error.empty()) {
                r["error"] = v.error;
                rows.push_back(r);
                continue;
            }
            r["psnr_db"] = v.psnr_infinite ? nlohmann::json() : nlohmann::json(v.psnr_db);
            r["psnr_infinite"] = v.psnr_infinite;
            r["ssim"] = v.ssim;
            r["mask_iou"] = v.mask.iou;
            r["mask_precision"] = v.mask.precision;
            r["mask_recall"] = v.mask.recall;
            r["mask_empty_prediction"] = v.mask.empty_prediction;
            r["pruned_count"] = v.pruned_count;
            r["kept_count"] = v.kept_count;
            r["refs_used"] = v.refs_used;
            rows.push_back(r);
        }
        j["variant_mean_psnr"] = variant_mean_psnr;
        j["variant_mean_ssim"] = variant_mean_ssim;
        j["variant_mean_iou"] = variant_mean_iou;
        if (!timings_ms.empty()) j["timings_ms"] = timings_ms;
        return j;
    }

    std::string to_csv() const {
        std::string out =
            "variant,query,psnr_db,ssim,mask_iou,mask_precision,mask_recall,pruned,kept,error\n";
        char line[512];
        for (const auto& v : views) {
            std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%lld,%lld,%s\n",
                          v.variant.c_str(), v.query, v.psnr_db, v.ssim, v.mask.iou,
                          v.mask.precision, v.mask.recall, static_cast<long long>(v.pruned_count),
                          static_cast<long long>(v.kept_count), v.error.c_str());
            out += line;
        }
        return out;
    }
};

namespace detail {

inline nlohmann::json generator_to_json(const GeneratorConfig& g) {
    nlohmann::json j;
    j["seed"] = g.seed;
    j["view_count"] = g.view_count;
    j["query_count"] = g.query_count;
    j["width"] = g.width;
    j["height"] = g.height;
    j["arc_radius"] = g.arc_radius;
    j["arc_span_deg"] = g.arc_span_deg;
    j["plane_count"] = g.plane_count;
    j["blob_count"] = g.blob_count;
    j["facing_away_count"] = g.facing_away_count;
    j["sprites_per_view"] = g.sprites_per_view;
    j["sprite_min_frac"] = g.sprite_min_frac;
    j["sprite_max_frac"] = g.sprite_max_frac;
    j["target_coverage"] = g.target_coverage;
    j["per_view_independent"] = g.per_view_independent;
    j["semi_static_span"] = g.semi_static_span;
    j["distractor_views"] = g.distractor_views == DistractorViews::All          ? "all"
                            : g.distractor_views == DistractorViews::QueriesOnly ? "queries_only"
                                                                                 : "pool_only";
    return j;
}

inline GeneratorConfig generator_from_json(const nlohmann::json& j) {
    GeneratorConfig g;
    g.seed = j.value("seed", g.seed);
    g.view_count = j.value("view_count", g.view_count);
    g.query_count = j.value("query_count", g.query_count);
    g.width = j.value("width", g.width);
    g.height = j.value("height", g.height);
    g.arc_radius = j.value("arc_radius", g.arc_radius);
    g.arc_span_deg = j.value("arc_span_deg", g.arc_span_deg);
    g.plane_count = j.value("plane_count", g.plane_count);
    g.blob_count = j.value("blob_count", g.blob_count);
    g.facing_away_count = j.value("facing_away_count", g.facing_away_count);
    g.sprites_per_view = j.value("sprites_per_view", g.sprites_per_view);
    g.sprite_min_frac = j.value("sprite_min_frac", g.sprite_min_frac);
    g.sprite_max_frac = j.value("sprite_max_frac", g.sprite_max_frac);
    g.target_coverage = j.value("target_coverage", g.target_coverage);
    g.per_view_independent = j.value("per_view_independent", g.per_view_independent);
    g.semi_static_span = j.value("semi_static_span", g.semi_static_span);
    const std::string dv = j.value("distractor_views", "all");
    g.distractor_views = dv == "queries_only" ? DistractorViews::QueriesOnly
                         : dv == "pool_only"  ? DistractorViews::PoolOnly
                                              : DistractorViews::All;
    return g;
}

inline void apply_json(const nlohmann::json& j, BackendConfig& b) {
    const std::string kind = j.value("kind", "oracle");
    if (kind == "oracle")
        b.kind = BackendKind::OracleDepth;
    else if (kind == "plane_sweep")
        b.kind = BackendKind::PlaneSweep;
    else
        throw std::invalid_argument("backend.kind must be oracle or plane_sweep");
    b.depth_hypotheses = j.value("depth_hypotheses", b.depth_hypotheses);
    b.near = j.value("near", b.near);
    b.far = j.value("far", b.far);
    b.patch_radius = j.value("patch_radius", b.patch_radius);
    b.kappa = j.value("kappa", b.kappa);
}

inline void apply_json(const nlohmann::json& j, MaskCascadeConfig& c) {
    c.rho1_scale = j.value("rho1_scale", c.rho1_scale);
    c.rho2 = j.value("rho2", c.rho2);
    c.inlier_kernel = j.value("inlier_kernel", c.inlier_kernel);
    c.patch_kernel = j.value("patch_kernel", c.patch_kernel);
    c.rho_ref = j.value("rho_ref", c.rho_ref);
    c.tau_fill = j.value("tau_fill", c.tau_fill);
    c.eps_z = j.value("eps_z", c.eps_z);
    c.rho_consistency = j.value("rho_consistency", c.rho_consistency);
    if (j.value("disparity", "union") == "intersection")
        c.disparity = DisparitySemantics::CoverageIntersection;
}

inline void apply_json(const nlohmann::json& j, RefineConfig& r) {
    r.iterations = j.value("iterations", r.iterations);
    r.color_step = j.value("color_step", r.color_step);
    r.opacity_step = j.value("opacity_step", r.opacity_step);
    r.aux_weight = j.value("aux_weight", r.aux_weight);
    r.mask_period = j.value("mask_period", r.mask_period);
}

inline void apply_json(const nlohmann::json& j, InferenceConfig& i) {
    i.n_references = j.value("n", i.n_references);
    i.k_pool = j.value("k", i.k_pool);
    i.stage1_scale = j.value("stage1_scale", i.stage1_scale);
    i.guard_quorum = j.value("guard_quorum", i.guard_quorum);
    if (j.value("normalization", "none") == "coverage")
        i.normalization = ScoreNormalization::Coverage;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("experiment config must be a json object");
    ExperimentConfig cfg;
    if (j.contains("generator")) cfg.generator = detail::generator_from_json(j["generator"]);
    cfg.dataset_path = j.value("dataset", "");
    if (!cfg.generator && cfg.dataset_path.empty())
        throw std::invalid_argument("config needs either \"generator\" or \"dataset\"");
    if (j.contains("variants")) {
        cfg.variants.clear();
        for (const auto& v : j["variants"]) cfg.variants.push_back(variant_from_name(v));
    }
    if (j.contains("pool")) cfg.pool_indices = j["pool"].get<std::vector<int>>();
    if (j.contains("queries")) cfg.query_indices = j["queries"].get<std::vector<int>>();
    if (j.contains("backend")) detail::apply_json(j["backend"], cfg.backend);
    if (j.contains("cascade")) detail::apply_json(j["cascade"], cfg.cascade);
    if (j.contains("refine")) detail::apply_json(j["refine"], cfg.refine);
    if (j.contains("inference")) detail::apply_json(j["inference"], cfg.inference);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.output_dir = j.value("output_dir", "");
    cfg.save_renders = j.value("save_renders", false);
    cfg.dump_trace_dir = j.value("dump_trace", "");
    cfg.report_timings = j.value("report_timings", false);
    return cfg;
}

inline void write_trace(const CascadeTrace& trace, const fs::path& dir) {
    fs::create_directories(dir);
    write_mask_png((dir / "m_rob.png").string(), trace.m_rob);
    write_mask_png((dir / "m_q.png").string(), trace.m_q);
    write_mask_png((dir / "m_d.png").string(), trace.m_d);
    write_mask_png((dir / "m_final.png").string(), trace.m_final);
    for (size_t i = 0; i < trace.m_ref.size(); ++i) {
        const fs::path sub = dir / detail::view_file("ref_%02zu", i);
        fs::create_directories(sub);
        write_mask_png((sub / "m_ref.png").string(), trace.m_ref[i]);
        write_mask_png((sub / "m_ref_en.png").string(), trace.m_ref_en[i]);
        write_mask_png((sub / "m_qry.png").string(), trace.m_qry[i]);
    }
}

// One variant on one query view. The pool carries full-resolution entries;
// supervision uses the (possibly contaminated) query capture, evaluation is
// against the clean plate.
inline ViewResult run_variant(Variant variant, const ScenePool& pool, const SceneDataset& ds,
                              int query, const ExperimentConfig& cfg) {
    ViewResult row;
    row.variant = variant_name(variant);
    row.query = query;

    InferenceConfig icfg = cfg.inference;
    icfg.report_timings = false;

    // reference selection
    std::vector<int> refs_idx;
    GaussianScene scene;
    const Camera& query_cam = ds.cameras[query];
    if (variant == Variant::Scoring || variant == Variant::Pruning) {
        InferenceConfig stage = icfg;
        stage.pruning = variant == Variant::Pruning;
        stage.refine_after_prune = false;
        const TwoStageResult two =
            two_stage_infer(pool, query_cam, stage, cfg.backend, cfg.cascade, cfg.render_opts);
        refs_idx = two.report.stage2_refs;
        scene = two.scene;  // already pruned when requested
        row.pruned_count = two.report.pruned_count;
        row.kept_count = two.report.kept_count;
    } else {
        refs_idx = sample_initial_references(pool, query_cam, icfg.n_references);
        std::vector<SourceView> sources;
        for (int i : refs_idx)
            sources.push_back(
                {pool.entries[i].image, pool.entries[i].camera, pool.entries[i].depth});
        scene = reconstruct(sources, cfg.backend);
        row.kept_count = static_cast<int64_t>(scene.size());
    }
    row.refs_used = refs_idx;

    std::vector<ReferenceView> refs;
    for (int i : refs_idx)
        refs.push_back({pool.entries[i].image, pool.entries[i].camera, pool.entries[i].entities});

    // mask-guided refinement; the rung decides the mask source
    RefineConfig rcfg = cfg.refine;
    switch (variant) {
        case Variant::Baseline:
            rcfg.mask_mode = RefineMaskMode::AllOnes;
            rcfg.use_aux = false;
            break;
        case Variant::RobustMask:
            rcfg.mask_mode = RefineMaskMode::Robust;
            rcfg.use_aux = false;
            break;
        case Variant::RefFiltered:
            rcfg.mask_mode = RefineMaskMode::RefFiltered;
            rcfg.use_aux = false;
            break;
        default:
            rcfg.mask_mode = RefineMaskMode::Full;
            rcfg.use_aux = true;
            break;
    }
    if (rcfg.iterations > 0) {
        const RefineResult refined =
            refine(scene, refs, ds.images[query], query_cam, ds.entities[query], cfg.cascade,
                   rcfg, cfg.render_opts);
        scene = refined.scene;
    }

    const RenderOutput final_render = render(scene, query_cam, cfg.render_opts);
    const ImageBuffer& truth =
        ds.clean_images.empty() ? ds.images[query] : ds.clean_images[query];
    row.psnr_db = psnr(final_render.color, truth);
    row.psnr_infinite = std::isinf(row.psnr_db);
    row.ssim = ssim(final_render.color, truth);

    const CascadeTrace trace = predict_query_mask(refs, query_cam, &ds.images[query],
                                                  ds.entities[query], scene, cfg.cascade,
                                                  cfg.render_opts);
    if (!ds.distractor_masks.empty())
        row.mask = mask_metrics(trace.m_final, ds.distractor_masks[query], &trace.m_d);

    if (!cfg.output_dir.empty() && cfg.save_renders) {
        fs::create_directories(cfg.output_dir);
        char name[128];
        std::snprintf(name, sizeof(name), "render_%s_q%04d.png", row.variant.c_str(), query);
        write_image_png((fs::path(cfg.output_dir) / name).string(), final_render.color);
    }
    if (!cfg.dump_trace_dir.empty()) {
        char name[128];
        std::snprintf(name, sizeof(name), "%s_q%04d", row.variant.c_str(), query);
        write_trace(trace, fs::path(cfg.dump_trace_dir) / name);
    }
    return row;
}

// Standard configuration for runs on the locked benchmark scenes: every
// threshold and step is fixed here, not tuned per run.
inline ExperimentConfig benchmark_experiment_config(const std::string& scene_name,
                                                    const fs::path& suite_dir) {
    ExperimentConfig cfg;
    cfg.generator = benchmark_config(scene_name);
    if (!suite_dir.empty()) cfg.dataset_path = (suite_dir / scene_name).string();
    cfg.refine.iterations = 16;
    cfg.refine.mask_period = 8;
    cfg.refine.color_step = 2000.0;
    cfg.refine.opacity_step = 800.0;
    cfg.variants = {Variant::Baseline, Variant::Cascade, Variant::Scoring, Variant::Pruning};
    return cfg;
}

inline MetricReport run_experiment(const ExperimentConfig& cfg) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    SceneDataset ds;
    std::vector<int> pool_idx = cfg.pool_indices;
    std::vector<int> query_idx = cfg.query_indices;
    if (cfg.generator) {
        GeneratorConfig g = *cfg.generator;
        if (cfg.seed != 0) g.seed = cfg.seed;
        const GeneratedScene gen = generate_scene(g);
        ds = composite_distractors(gen.dataset, g, gen.query_indices);
        if (pool_idx.empty()) pool_idx = gen.pool_indices;
        if (query_idx.empty()) query_idx = gen.query_indices;
    } else {
        if (pool_idx.empty() || query_idx.empty())
            throw std::invalid_argument("dataset runs need explicit \"pool\" and \"queries\"");
        ds = load_dataset(cfg.dataset_path);
    }

    ScenePool pool;
    for (int i : pool_idx) {
        if (i < 0 || i >= static_cast<int>(ds.view_count()))
            throw std::invalid_argument("pool index out of range");
        PoolEntry e;
        e.image = ds.images[i];
        e.camera = ds.cameras[i];
        if (!ds.entities.empty()) e.entities = ds.entities[i];
        if (!ds.depths.empty()) e.depth = ds.depths[i];
        pool.entries.push_back(std::move(e));
    }

    MetricReport report;
    report.seed = cfg.seed;
    {
        nlohmann::json hashable;
        hashable["dataset"] = cfg.dataset_path;
        if (cfg.generator) hashable["generator"] = detail::generator_to_json(*cfg.generator);
        hashable["pool"] = pool_idx;
        hashable["queries"] = query_idx;
        for (Variant v : cfg.variants) hashable["variants"].push_back(variant_name(v));
        hashable["seed"] = cfg.seed;
        hashable["refine_iterations"] = cfg.refine.iterations;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a(hashable.dump())));
        report.config_hash = buf;
    }

    std::map<std::string, std::pair<double, int>> psnr_acc, ssim_acc, iou_acc;
    for (Variant variant : cfg.variants) {
        for (int q : query_idx) {
            ViewResult row;
            try {
                row = run_variant(variant, pool, ds, q, cfg);
            } catch (const std::exception& e) {
                row.variant = variant_name(variant);
                row.query = q;
                row.error = e.what();
                warn(std::string("run_experiment: ") + row.variant + " query " +
                     std::to_string(q) + " failed: " + e.what());
            }
            if (row.error.empty()) {
                psnr_acc[row.variant].first += row.psnr_db;
                psnr_acc[row.variant].second += 1;
                ssim_acc[row.variant].first += row.ssim;
                ssim_acc[row.variant].second += 1;
                iou_acc[row.variant].first += row.mask.iou;
                iou_acc[row.variant].second += 1;
            }
            report.views.push_back(std::move(row));
        }
    }
    for (const auto& [name, acc] : psnr_acc)
        report.variant_mean_psnr[name] = acc.first / acc.second;
    for (const auto& [name, acc] : ssim_acc)
        report.variant_mean_ssim[name] = acc.first / acc.second;
    for (const auto& [name, acc] : iou_acc) report.variant_mean_iou[name] = acc.first / acc.second;
    if (cfg.report_timings)
        report.timings_ms["total"] =
            std::chrono::duration<double, std::milli>(clock::now() - t0).count();

    if (!cfg.output_dir.empty()) {
        fs::create_directories(cfg.output_dir);
        std::ofstream(fs::path(cfg.output_dir) / "report.json") << report.to_json().dump(2) << "\n";
        std::ofstream(fs::path(cfg.output_dir) / "report.csv") << report.to_csv();
    }
    return report;
}

}  // namespace desplat
