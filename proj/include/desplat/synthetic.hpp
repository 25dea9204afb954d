// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "desplat/common.hpp"
#include "desplat/dataset.hpp"
#include "desplat/rasterizer.hpp"

namespace desplat {

enum class DistractorViews { All, QueriesOnly, PoolOnly };

struct GeneratorConfig {
    uint64_t seed = 0;
    int view_count = 11;
    int query_count = 3;  // held-out views; the rest form the scene pool
    int width = 128;
    int height = 128;
    double focal_scale = 1.1;  // focal = focal_scale * width

    // camera arc
    double arc_radius = 3.5;
    double arc_span_deg = 40.0;
    Eigen::Vector3d look_at = Eigen::Vector3d::Zero();
    int facing_away_count = 0;  // pool views rotated off-scene (disjoint frusta)

    // scene content
    int plane_count = 2;  // backdrop wall + floor (+ side wings beyond 2)
    int blob_count = 8;
    int palette_size = 6;

    // distractor sprites
    int sprites_per_view = 0;
    double sprite_min_frac = 0.06;  // diameter as fraction of min(w,h)
    double sprite_max_frac = 0.18;
    double target_coverage = 0.0;  // >0: add sprites per view until reached
    bool per_view_independent = true;
    int semi_static_span = 3;  // views a sprite persists when not independent
    DistractorViews distractor_views = DistractorViews::All;

    void validate() const {
        if (view_count < 2) throw std::invalid_argument("generator: view_count must be >= 2");
        if (query_count < 0 || query_count >= view_count)
            throw std::invalid_argument("generator: bad query_count");
        if (!(arc_span_deg > 0)) throw std::invalid_argument("generator: degenerate trajectory");
        if (!(sprite_min_frac > 0 && sprite_max_frac <= 0.5 && sprite_min_frac <= sprite_max_frac))
            throw std::invalid_argument("generator: sprite fraction outside (0, 0.5]");
    }
};

struct GeneratedScene {
    SceneDataset dataset;
    GaussianScene ground_truth;
    std::vector<int> pool_indices;
    std::vector<int> query_indices;
};

namespace detail {

// Two-octave value noise around a single base color. The coarse octave gives
// region identity; the finer one adds enough gradient that lateral resampling
// drift stays visible to photometric tests without blowing up adjacent-view
// consistency.
struct ValueNoiseTexture {
    double cell = 0.8;
    uint64_t seed = 0;
    Eigen::Vector3d base = Eigen::Vector3d::Constant(0.5);
    double amplitude = 0.13;
    double detail_amplitude = 0.03;  // second octave at cell/3
    double stripe_amplitude = 0.0;   // periodic component (depth-ambiguous for matching)
    double stripe_period = 0.5;
    double stripe_angle = 0.0;

    Eigen::Vector3d lattice(uint64_t salt, int64_t i, int64_t j, double amp) const {
        Rng rng(derive_seed(seed ^ salt, static_cast<uint64_t>(i * 73856093ll ^ j * 19349663ll)));
        return {uniform(rng, -amp, amp), uniform(rng, -amp, amp), uniform(rng, -amp, amp)};
    }

    Eigen::Vector3d octave(uint64_t salt, double u, double v, double c, double amp) const {
        const double gu = u / c, gv = v / c;
        const int64_t i = static_cast<int64_t>(std::floor(gu));
        const int64_t j = static_cast<int64_t>(std::floor(gv));
        const double fu = gu - i, fv = gv - j;
        const Eigen::Vector3d c00 = lattice(salt, i, j, amp), c10 = lattice(salt, i + 1, j, amp);
        const Eigen::Vector3d c01 = lattice(salt, i, j + 1, amp), c11 = lattice(salt, i + 1, j + 1, amp);
        return (c00 * (1 - fu) + c10 * fu) * (1 - fv) + (c01 * (1 - fu) + c11 * fu) * fv;
    }

    Eigen::Vector3d sample(double u, double v) const {
        Eigen::Vector3d c = base + octave(0x5a5a, u, v, cell, amplitude) +
                            octave(0xc3c3, u, v, cell / 3.0, detail_amplitude);
        if (stripe_amplitude > 0.0) {
            const double phase = (u * std::cos(stripe_angle) + v * std::sin(stripe_angle)) /
                                 stripe_period * 2.0 * M_PI;
            c += Eigen::Vector3d::Constant(stripe_amplitude * std::sin(phase));
        }
        return c.cwiseMax(0.05).cwiseMin(0.95);
    }
};

inline std::vector<Eigen::Vector3d> make_palette(Rng& rng, int n) {
    std::vector<Eigen::Vector3d> palette;
    for (int i = 0; i < n; ++i)
        palette.emplace_back(uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85),
                             uniform(rng, 0.15, 0.85));
    return palette;
}

// Gaussians laid on a rectangle spanned by (origin, eu, ev), colored by a
// smooth texture. entity_id tags every primitive for entity-map rendering.
inline void add_textured_plane(GaussianScene& scene, std::vector<uint32_t>& entity_of,
                               const Eigen::Vector3d& origin, const Eigen::Vector3d& eu,
                               const Eigen::Vector3d& ev, double spacing,
                               const ValueNoiseTexture& tex, uint32_t entity_id) {
    const int nu = std::max(2, static_cast<int>(std::floor(eu.norm() / spacing)));
    const int nv = std::max(2, static_cast<int>(std::floor(ev.norm() / spacing)));
    const Eigen::Vector3d du = eu / nu, dv = ev / nv;
    for (int j = 0; j <= nv; ++j) {
        for (int i = 0; i <= nu; ++i) {
            GaussianPrimitive g;
            g.position = origin + du * i + dv * j;
            g.scale = Eigen::Vector3d::Constant(spacing * 0.62);
            g.opacity = 0.96;
            g.color = tex.sample(i * spacing, j * spacing);
            scene.primitives.push_back(g);
            entity_of.push_back(entity_id);
        }
    }
}

struct Sprite {
    double cx, cy;        // pixel center
    double a, b;          // semi-axes in pixels
    double angle;         // rotation
    int sides;            // 0 = ellipse, else convex polygon
    Eigen::Vector3d color;
    uint64_t noise_seed;

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double lx = (ca * dx + sa * dy) / a;
        const double ly = (-sa * dx + ca * dy) / b;
        if (sides == 0) return lx * lx + ly * ly <= 1.0;
        // convex polygon with vertices on the unit circle
        const double r = std::hypot(lx, ly);
        if (r > 1.0) return false;
        double theta = std::atan2(ly, lx);
        if (theta < 0) theta += 2 * M_PI;
        const double sector = 2 * M_PI / sides;
        const double local = std::fmod(theta, sector) - sector / 2;
        const double edge = std::cos(sector / 2) / std::cos(local);
        return r <= edge;
    }
};

inline Sprite random_sprite(Rng& rng, const GeneratorConfig& cfg) {
    Sprite s;
    const double dim = std::min(cfg.width, cfg.height);
    const double diam = uniform(rng, cfg.sprite_min_frac, cfg.sprite_max_frac) * dim;
    s.a = diam / 2.0;
    s.b = s.a * uniform(rng, 0.55, 1.0);
    s.angle = uniform(rng, 0, 2 * M_PI);
    s.cx = uniform(rng, s.a, cfg.width - s.a);
    s.cy = uniform(rng, s.a, cfg.height - s.a);
    s.sides = uniform_int(rng, 0, 3);  // 0 ellipse, else 3..5-gon
    if (s.sides) s.sides += 2;
    s.color = Eigen::Vector3d(uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9));
    s.noise_seed = rng();
    return s;
}

inline void paint_sprite(ImageBuffer& img, BinaryMask& mask, EntityMap& ents, const Sprite& s,
                         uint32_t entity_id) {
    if (2 * s.a > std::min(img.width, img.height))
        throw std::invalid_argument("sprite larger than image");
    const int x0 = std::max(0, static_cast<int>(s.cx - s.a - 1));
    const int x1 = std::min(img.width, static_cast<int>(s.cx + s.a + 2));
    const int y0 = std::max(0, static_cast<int>(s.cy - s.a - 1));
    const int y1 = std::min(img.height, static_cast<int>(s.cy + s.a + 2));
    ValueNoiseTexture noise;
    noise.cell = 4.0;
    noise.seed = s.noise_seed;
    noise.base = s.color;
    noise.amplitude = 0.22;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            if (!s.contains(x + 0.5, y + 0.5)) continue;
            const Eigen::Vector3d c = noise.sample(x, y);
            img.at(x, y, 0) = static_cast<float>(c.x());
            img.at(x, y, 1) = static_cast<float>(c.y());
            img.at(x, y, 2) = static_cast<float>(c.z());
            mask.at(x, y) = 0;
            ents.at(x, y) = entity_id;
        }
    }
}

}  // namespace detail

// Builds the static ground-truth scene and renders every view. Clean images,
// depth and entity maps all come from the rasterizer, so "image == render"
// holds bitwise.
inline GeneratedScene generate_scene(const GeneratorConfig& cfg) {
    cfg.validate();
    GeneratedScene out;
    Rng rng(derive_seed(cfg.seed, 0xabcdef));
    const auto palette = detail::make_palette(rng, cfg.palette_size);

    GaussianScene& scene = out.ground_truth;
    std::vector<uint32_t> entity_of;

    const double px_per_unit = cfg.focal_scale * cfg.width / 4.5;  // at typical viewing distance
    const double spacing = 1.0 / px_per_unit * 1.6;

    detail::ValueNoiseTexture wall_tex{0.8, derive_seed(cfg.seed, 1), palette[0]};
    detail::ValueNoiseTexture floor_tex{0.8, derive_seed(cfg.seed, 2), palette[1 % palette.size()]};
    uint32_t next_entity = 1;
    // backdrop wall
    detail::add_textured_plane(scene, entity_of, {-3.6, -2.6, -1.0}, {7.2, 0, 0}, {0, 5.2, 0},
                               spacing, wall_tex, next_entity++);
    if (cfg.plane_count >= 2)  // floor
        detail::add_textured_plane(scene, entity_of, {-3.6, -1.35, 1.3}, {7.2, 0, 0}, {0, 0.35, -2.3},
                                   spacing, floor_tex, next_entity++);
    for (int p = 2; p < cfg.plane_count; ++p) {  // side wings
        const double sx = p % 2 == 0 ? -2.8 : 2.45;
        detail::ValueNoiseTexture tex{0.7, derive_seed(cfg.seed, 10 + p),
                                      palette[p % palette.size()]};
        detail::add_textured_plane(scene, entity_of, {sx, -2.0, 1.0}, {0.35, 0, -2.0}, {0, 4.0, 0},
                                   spacing, tex, next_entity++);
    }
    for (int b = 0; b < cfg.blob_count; ++b) {
        Rng brng(derive_seed(cfg.seed, 100 + b));
        const Eigen::Vector3d center(uniform(brng, -1.6, 1.6), uniform(brng, -1.0, 1.0),
                                     uniform(brng, -0.5, 0.7));
        const Eigen::Vector3d base = palette[uniform_int(brng, 0, static_cast<int>(palette.size()) - 1)];
        const uint32_t ent = next_entity++;
        const int count = uniform_int(brng, 36, 56);
        for (int i = 0; i < count; ++i) {
            GaussianPrimitive g;
            g.position = center + Eigen::Vector3d(uniform(brng, -0.17, 0.17), uniform(brng, -0.17, 0.17),
                                                  uniform(brng, -0.17, 0.17));
            g.scale = Eigen::Vector3d::Constant(uniform(brng, 0.06, 0.10));
            g.opacity = 0.97;
            g.color = (base + Eigen::Vector3d(uniform(brng, -0.03, 0.03), uniform(brng, -0.03, 0.03),
                                              uniform(brng, -0.03, 0.03)))
                          .cwiseMax(0.02)
                          .cwiseMin(0.98);
            scene.primitives.push_back(g);
            entity_of.push_back(ent);
        }
    }

    // queries sit at evenly spaced interior arc positions
    std::vector<bool> is_query(cfg.view_count, false);
    for (int k = 0; k < cfg.query_count; ++k)
        is_query[(k + 1) * cfg.view_count / (cfg.query_count + 1)] = true;
    for (int i = 0; i < cfg.view_count; ++i)
        (is_query[i] ? out.query_indices : out.pool_indices).push_back(i);

    const double span = cfg.arc_span_deg * M_PI / 180.0;
    const double focal = cfg.focal_scale * cfg.width;
    SceneDataset& ds = out.dataset;
    ds.name = "synthetic";
    RenderOptions ropts;
    ropts.record_dominant = true;
    ropts.depth_mode = DepthMode::MedianSurface;
    int rotated_away = 0;
    for (int i = 0; i < cfg.view_count; ++i) {
        const double t = cfg.view_count == 1 ? 0.5 : double(i) / (cfg.view_count - 1);
        const double theta = (t - 0.5) * span;
        const Eigen::Vector3d eye = cfg.look_at + cfg.arc_radius * Eigen::Vector3d(std::sin(theta), 0.0,
                                                                                   std::cos(theta));
        Eigen::Vector3d target = cfg.look_at;
        if (!is_query[i] && rotated_away < cfg.facing_away_count &&
            i >= cfg.view_count - 2 * cfg.facing_away_count) {
            target = eye + (eye - cfg.look_at);  // face directly away from the scene
            ++rotated_away;
        }
        ds.cameras.push_back(Camera::look_at(eye, target, {0, 1, 0}, focal, cfg.width, cfg.height));
        const RenderOutput r = render(scene, ds.cameras.back(), ropts);
        ds.images.push_back(r.color);
        ds.depths.push_back(r.depth);
        EntityMap ents(cfg.width, cfg.height);
        for (size_t px = 0; px < ents.data.size(); ++px)
            ents.data[px] = r.dominant[px] >= 0 ? entity_of[r.dominant[px]] : 0;
        ds.entities.push_back(std::move(ents));
        ds.distractor_masks.push_back(BinaryMask::ones(cfg.width, cfg.height));
    }
    ds.validate();
    return out;
}

// Pastes transient sprites over a clean capture. Clean plates are retained in
// clean_images; masks and entity maps are rewritten accordingly.
inline SceneDataset composite_distractors(const SceneDataset& clean, const GeneratorConfig& cfg,
                                          const std::vector<int>& query_indices) {
    SceneDataset ds = clean;
    ds.clean_images = clean.images;
    std::vector<bool> is_query(ds.view_count(), false);
    for (int q : query_indices)
        if (q >= 0 && q < static_cast<int>(ds.view_count())) is_query[q] = true;

    uint32_t scene_max_entity = 0;
    for (const auto& e : ds.entities) scene_max_entity = std::max(scene_max_entity, e.max_id());

    // In semi-static mode one sprite pose serves a run of consecutive views.
    std::vector<detail::Sprite> group_sprites;
    int group_index = -1;
    for (size_t v = 0; v < ds.view_count(); ++v) {
        const bool skip = (cfg.distractor_views == DistractorViews::QueriesOnly && !is_query[v]) ||
                          (cfg.distractor_views == DistractorViews::PoolOnly && is_query[v]);
        if (skip || (cfg.sprites_per_view == 0 && cfg.target_coverage <= 0)) continue;

        std::vector<detail::Sprite> sprites;
        if (cfg.per_view_independent) {
            Rng rng(derive_seed(cfg.seed, 5000 + v));
            sprites = [&] {
                std::vector<detail::Sprite> s;
                for (int k = 0; k < cfg.sprites_per_view; ++k) s.push_back(detail::random_sprite(rng, cfg));
                return s;
            }();
            if (cfg.target_coverage > 0) {
                // grow the set until the measured coverage reaches the target
                BinaryMask probe = BinaryMask::ones(ds.images[v].width, ds.images[v].height);
                EntityMap scratch(ds.images[v].width, ds.images[v].height);
                ImageBuffer img_scratch = ds.images[v];
                for (auto& s : sprites) detail::paint_sprite(img_scratch, probe, scratch, s, 1);
                const double total = static_cast<double>(probe.data.size());
                int guard = 0;
                while ((total - probe.count_ones()) / total < cfg.target_coverage && guard++ < 64) {
                    sprites.push_back(detail::random_sprite(rng, cfg));
                    detail::paint_sprite(img_scratch, probe, scratch, sprites.back(), 1);
                }
            }
        } else {
            const int g = static_cast<int>(v) / std::max(1, cfg.semi_static_span);
            if (g != group_index) {
                group_index = g;
                Rng rng(derive_seed(cfg.seed, 9000 + g));
                group_sprites.clear();
                for (int k = 0; k < cfg.sprites_per_view; ++k)
                    group_sprites.push_back(detail::random_sprite(rng, cfg));
            }
            sprites = group_sprites;
        }

        for (size_t k = 0; k < sprites.size(); ++k)
            detail::paint_sprite(ds.images[v], ds.distractor_masks[v], ds.entities[v], sprites[k],
                                 scene_max_entity + 1 + static_cast<uint32_t>(k));
    }
    ds.validate();
    return ds;
}

struct BenchmarkSceneInfo {
    std::string name;
    uint64_t seed;
    double distractor_fraction = 0.0;
    std::vector<int> pool_indices;
    std::vector<int> query_indices;
};

inline GeneratorConfig benchmark_config(const std::string& name) {
    GeneratorConfig cfg;
    cfg.width = 256;
    cfg.height = 256;
    cfg.view_count = 11;
    cfg.query_count = 3;
    cfg.blob_count = 10;
    if (name == "S1") {
        cfg.seed = 101;
    } else if (name == "S2") {
        cfg.seed = 102;
        cfg.sprites_per_view = 3;
        cfg.sprite_min_frac = 0.12;
        cfg.sprite_max_frac = 0.26;
        cfg.distractor_views = DistractorViews::QueriesOnly;
    } else if (name == "S3") {
        cfg.seed = 103;
        cfg.sprites_per_view = 3;
        cfg.sprite_min_frac = 0.12;
        cfg.sprite_max_frac = 0.26;
        cfg.distractor_views = DistractorViews::PoolOnly;
    } else if (name == "S4") {
        cfg.seed = 104;
        cfg.sprites_per_view = 3;
        cfg.sprite_min_frac = 0.12;
        cfg.sprite_max_frac = 0.26;
        cfg.target_coverage = 0.30;
    } else if (name == "S5") {
        cfg.seed = 105;
        cfg.facing_away_count = 2;
    } else {
        throw std::invalid_argument("unknown benchmark scene " + name);
    }
    return cfg;
}

inline double measured_distractor_fraction(const SceneDataset& ds) {
    int64_t zeros = 0, total = 0;
    for (const auto& m : ds.distractor_masks) {
        zeros += static_cast<int64_t>(m.data.size()) - m.count_ones();
        total += static_cast<int64_t>(m.data.size());
    }
    return total ? static_cast<double>(zeros) / total : 0.0;
}

// Writes the locked S1..S5 scene set plus a manifest with expected-metric
// slots the evaluation fills in.
inline std::vector<BenchmarkSceneInfo> make_benchmark_suite(const fs::path& dir,
                                                            const std::vector<std::string>& only = {}) {
    fs::create_directories(dir);
    std::vector<BenchmarkSceneInfo> infos;
    nlohmann::json manifest;
    manifest["scenes"] = nlohmann::json::array();
    for (const std::string& name : {"S1", "S2", "S3", "S4", "S5"}) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        const GeneratorConfig cfg = benchmark_config(name);
        GeneratedScene gen = generate_scene(cfg);
        SceneDataset ds = composite_distractors(gen.dataset, cfg, gen.query_indices);
        save_dataset(ds, dir / name);
        BenchmarkSceneInfo info;
        info.name = name;
        info.seed = cfg.seed;
        info.distractor_fraction = measured_distractor_fraction(ds);
        info.pool_indices = gen.pool_indices;
        info.query_indices = gen.query_indices;
        infos.push_back(info);
        nlohmann::json j;
        j["name"] = info.name;
        j["seed"] = info.seed;
        j["path"] = name;
        j["distractor_fraction"] = info.distractor_fraction;
        j["pool_indices"] = info.pool_indices;
        j["query_indices"] = info.query_indices;
        j["expected_metrics"] = {{"psnr_db", nullptr}, {"ssim", nullptr}, {"mask_iou", nullptr}};
        manifest["scenes"].push_back(j);
    }
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
    return infos;
}

}  // namespace desplat
