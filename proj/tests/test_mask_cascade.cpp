// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "desplat/mask_cascade.hpp"
#include "desplat/metrics.hpp"
#include "desplat/reconstruct.hpp"
#include "desplat/synthetic.hpp"

using namespace desplat;

namespace {

BinaryMask random_mask(Rng& rng, int w, int h, double p_one = 0.5) {
    BinaryMask m(w, h);
    for (auto& v : m.data) v = uniform(rng, 0, 1) < p_one ? 1 : 0;
    return m;
}

struct CascadeFixture {
    SceneDataset ds;
    std::vector<int> pool;
    std::vector<int> queries;
    std::vector<int> ref_ids;
    std::vector<ReferenceView> refs;
    GaussianScene scene;

    CascadeFixture(uint64_t seed, int sprites, DistractorViews where, double coverage = 0.0) {
        GeneratorConfig cfg;
        cfg.seed = seed;
        cfg.width = 96;
        cfg.height = 96;
        cfg.view_count = 7;
        cfg.query_count = 2;
        cfg.blob_count = 7;
        cfg.sprites_per_view = sprites;
        cfg.sprite_min_frac = 0.20;
        cfg.sprite_max_frac = 0.34;
        cfg.target_coverage = coverage;
        cfg.distractor_views = where;
        GeneratedScene gen = generate_scene(cfg);
        ds = composite_distractors(gen.dataset, cfg, gen.query_indices);
        pool = gen.pool_indices;
        queries = gen.query_indices;
        // four pool views nearest the first query
        const Eigen::Vector3d qc = ds.cameras[queries[0]].center();
        std::sort(pool.begin(), pool.end(), [&](int a, int b) {
            return (ds.cameras[a].center() - qc).norm() < (ds.cameras[b].center() - qc).norm();
        });
        ref_ids.assign(pool.begin(), pool.begin() + 4);
        std::sort(ref_ids.begin(), ref_ids.end());
        std::vector<SourceView> sources;
        for (int i : ref_ids) {
            refs.push_back({ds.images[i], ds.cameras[i], ds.entities[i]});
            sources.push_back({ds.images[i], ds.cameras[i], ds.depths[i]});
        }
        BackendConfig bcfg;
        scene = reconstruct(sources, bcfg);
    }

    CascadeTrace run(int query) const {
        MaskCascadeConfig cfg;
        return predict_query_mask(refs, ds.cameras[query], &ds.images[query], ds.entities[query],
                                  scene, cfg);
    }
};

}  // namespace

TEST_CASE("robust_mask basics") {
    MaskCascadeConfig cfg;
    SECTION("zero residual is all static") {
        ImageBuffer img(32, 32, 0.5f);
        const BinaryMask m = robust_mask(img, img, cfg);
        CHECK(m.count_ones() == 32 * 32);
    }
    SECTION("bright square flagged, complement mostly kept") {
        Rng rng(3);
        ImageBuffer clean(128, 128);
        for (size_t i = 0; i < clean.data.size(); ++i)
            clean.data[i] = static_cast<float>(uniform(rng, 0.2, 0.4));
        ImageBuffer query = clean;
        for (int y = 48; y < 80; ++y)
            for (int x = 48; x < 80; ++x)
                for (int c = 0; c < 3; ++c) query.at(x, y, c) = 0.95f;
        const BinaryMask m = robust_mask(query, clean, cfg);
        int64_t square_zeros = 0, outside_zeros = 0;
        for (int y = 0; y < 128; ++y)
            for (int x = 0; x < 128; ++x) {
                const bool in = x >= 48 && x < 80 && y >= 48 && y < 80;
                if (!m.at(x, y)) (in ? square_zeros : outside_zeros)++;
            }
        CHECK(square_zeros >= int64_t(0.80 * 32 * 32));
        CHECK(outside_zeros <= int64_t(0.05 * (128 * 128 - 32 * 32)));
    }
    SECTION("uniform huge residual: median scaling keeps everything") {
        ImageBuffer a(32, 32, 0.1f), b(32, 32, 0.9f);
        const BinaryMask m = robust_mask(a, b, cfg);  // warning expected on stderr
        CHECK(m.count_ones() == 32 * 32);
    }
    SECTION("dimension mismatch") {
        CHECK_THROWS_AS(robust_mask(ImageBuffer(8, 8), ImageBuffer(4, 4), cfg),
                        std::invalid_argument);
    }
}

TEST_CASE("reference_static_mask thresholding") {
    ImageBuffer a(8, 8, 0.5f), b(8, 8, 0.5f);
    CHECK(reference_static_mask(a, b, 0.001).count_ones() == 64);
    // residual exactly at the threshold is excluded (strict inequality)
    ImageBuffer c = b;
    for (int ch = 0; ch < 3; ++ch) c.at(3, 3, ch) = 0.75f;
    const double exact = (0.75 - 0.5) * (0.75 - 0.5);  // identical squared diff per channel
    const BinaryMask m = reference_static_mask(a, c, exact);
    CHECK(m.at(3, 3) == 0);
    CHECK(m.count_ones() == 63);
    CHECK(reference_static_mask(a, c, exact + 1e-9).at(3, 3) == 1);
}

TEST_CASE("warp_mask identity and bounds") {
    GeneratorConfig cfg;
    cfg.seed = 44;
    cfg.width = 64;
    cfg.height = 64;
    cfg.view_count = 3;
    cfg.query_count = 0;
    const GeneratedScene gen = generate_scene(cfg);
    const auto& ds = gen.dataset;

    SECTION("self-warp is the identity on valid pixels") {
        Rng rng(5);
        const BinaryMask m = random_mask(rng, 64, 64);
        const BinaryMask w = warp_mask(m, ds.depths[0], ds.cameras[0], ds.cameras[0], ds.depths[0], 0.01);
        int64_t valid = 0, kept = 0;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                if (m.at(x, y) && ds.depths[0].at(x, y) > 0) {
                    ++valid;
                    kept += w.at(x, y);
                }
            }
        REQUIRE(valid > 500);
        CHECK(kept == valid);
    }
    SECTION("empty mask warps to empty") {
        const BinaryMask zeros(64, 64);
        const BinaryMask w = warp_mask(zeros, ds.depths[0], ds.cameras[0], ds.cameras[1], ds.depths[1], 0.01);
        CHECK(w.count_ones() == 0);
    }
}

TEST_CASE("warp shift matches the analytic disparity") {
    // fronto-parallel plane at depth z seen by two cameras with pure
    // horizontal baseline b: every bit moves by f*b/z pixels.
    const int W = 48, H = 32;
    const double f = 60.0, z = 2.0, b = 0.12;
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    K(0, 0) = K(1, 1) = f;
    K(0, 2) = W / 2.0;
    K(1, 2) = H / 2.0;
    const Camera cam_src(Eigen::Matrix4d::Identity(), K, W, H);
    Eigen::Matrix4d ext = Eigen::Matrix4d::Identity();
    ext(0, 3) = -b;  // camera shifted +b in world x
    const Camera cam_dst(ext, K, W, H);

    const DepthMap plane(W, H, static_cast<float>(z));
    Rng rng(9);
    const BinaryMask m = random_mask(rng, W, H, 0.4);
    const BinaryMask w = warp_mask(m, plane, cam_src, cam_dst, plane, 0.01);

    const double disparity = f * b / z;  // 3.6 px
    BinaryMask expected(W, H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!m.at(x, y)) continue;
            const int tx = static_cast<int>(std::floor(x + 0.5 - disparity));
            if (tx >= 0 && tx < W) expected.at(tx, y) = 1;
        }
    CHECK(w.data == expected.data);
}

TEST_CASE("fuse_query_mask algebra") {
    Rng rng(12);
    SECTION("all-ones warps absorb everything") {
        const BinaryMask rob = random_mask(rng, 16, 16);
        const std::vector<BinaryMask> ones(3, BinaryMask::ones(16, 16));
        CHECK(fuse_query_mask(ones, rob).count_ones() == 256);
    }
    SECTION("all-zero warps reduce to the robust mask") {
        const BinaryMask rob = random_mask(rng, 16, 16);
        const std::vector<BinaryMask> zeros(3, BinaryMask(16, 16));
        CHECK(fuse_query_mask(zeros, rob).data == rob.data);
    }
    SECTION("monotonicity and antitonicity over random triples") {
        for (int trial = 0; trial < 1000; ++trial) {
            std::vector<BinaryMask> warped;
            for (int i = 0; i < 3; ++i) warped.push_back(random_mask(rng, 8, 8));
            const BinaryMask rob = random_mask(rng, 8, 8);
            const BinaryMask fused = fuse_query_mask(warped, rob);
            for (size_t px = 0; px < fused.data.size(); ++px)
                REQUIRE(fused.data[px] >= rob.data[px]);  // M_Q >= M_Rob
            warped.push_back(random_mask(rng, 8, 8));  // one more reference
            const BinaryMask more = fuse_query_mask(warped, rob);
            BinaryMask inter3 = mask_and(mask_and(warped[0], warped[1]), warped[2]);
            BinaryMask inter4 = mask_and(inter3, warped[3]);
            for (size_t px = 0; px < inter3.data.size(); ++px)
                REQUIRE(inter4.data[px] <= inter3.data[px]);
        }
    }
}

TEST_CASE("disparity_mask coverage") {
    GeneratorConfig cfg;
    cfg.seed = 50;
    cfg.width = 64;
    cfg.height = 64;
    cfg.view_count = 4;
    cfg.query_count = 0;
    const GeneratedScene gen = generate_scene(cfg);
    const auto& ds = gen.dataset;

    SECTION("reference identical to query covers all valid pixels") {
        const BinaryMask c = disparity_mask({ds.cameras[1]}, {ds.depths[1]}, ds.cameras[1],
                                            ds.depths[1], 0.01);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                if (ds.depths[1].at(x, y) > 0) REQUIRE(c.at(x, y) == 1);
    }
    SECTION("disjoint frustum covers nothing") {
        Eigen::Matrix4d flip = Eigen::Matrix4d::Identity();
        flip(0, 0) = -1;
        flip(2, 2) = -1;  // rotate 180 degrees about y
        const Camera away(flip * ds.cameras[0].extrinsics.matrix(), ds.cameras[0].intrinsics, 64, 64);
        const BinaryMask c = disparity_mask({away}, {ds.depths[0]}, ds.cameras[1], ds.depths[1], 0.01);
        CHECK(c.count_ones() == 0);
    }
    SECTION("union equals OR of per-reference coverage (brute-force oracle)") {
        const BinaryMask c01 = disparity_mask({ds.cameras[0], ds.cameras[2]},
                                              {ds.depths[0], ds.depths[2]}, ds.cameras[1],
                                              ds.depths[1], 0.01);
        // independent per-pixel projection loop
        BinaryMask expect(64, 64);
        for (int src : {0, 2}) {
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x) {
                    const double d = ds.depths[src].at(x, y);
                    if (!(d > 0)) continue;
                    const auto p = project_point(
                        unproject_pixel(x + 0.5, y + 0.5, d, ds.cameras[src]), ds.cameras[1]);
                    if (p.behind) continue;
                    const int px = static_cast<int>(std::floor(p.u));
                    const int py = static_cast<int>(std::floor(p.v));
                    if (px < 0 || px >= 64 || py < 0 || py >= 64) continue;
                    const double dz = ds.depths[1].at(px, py);
                    if (dz > 0 && std::abs(p.z - dz) > 0.01 * dz) continue;
                    expect.at(px, py) = 1;
                }
        }
        CHECK(c01.data == expect.data);
    }
}

TEST_CASE("entity_fill rules") {
    EntityMap ents(10, 1);
    for (int x = 0; x < 10; ++x) ents.at(x, 0) = 1;
    SECTION("60% flagged with tau 0.5 fills the entity") {
        BinaryMask m = BinaryMask::ones(10, 1);
        for (int x = 0; x < 6; ++x) m.at(x, 0) = 0;
        const BinaryMask f = entity_fill(m, ents, 0.5);
        CHECK(f.count_ones() == 0);
    }
    SECTION("10% flagged restores the entity") {
        BinaryMask m = BinaryMask::ones(10, 1);
        m.at(0, 0) = 0;
        const BinaryMask f = entity_fill(m, ents, 0.5);
        CHECK(f.count_ones() == 10);
    }
    SECTION("entity 0 passes through") {
        EntityMap none(10, 1);  // all unlabeled
        BinaryMask m = BinaryMask::ones(10, 1);
        m.at(3, 0) = 0;
        CHECK(entity_fill(m, none, 0.5).data == m.data);
    }
    SECTION("output snaps to entity boundaries and is idempotent") {
        Rng rng(31);
        EntityMap grid(32, 32);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) grid.at(x, y) = 1 + (x / 8) + 4 * (y / 8);
        for (int trial = 0; trial < 200; ++trial) {
            const BinaryMask noisy = random_mask(rng, 32, 32, uniform(rng, 0.2, 0.8));
            const double tau = uniform(rng, 0.05, 1.0);
            const BinaryMask f = entity_fill(noisy, grid, tau);
            // no partial entities
            for (int ey = 0; ey < 4; ++ey)
                for (int ex = 0; ex < 4; ++ex) {
                    const uint8_t first = f.at(ex * 8, ey * 8);
                    for (int y = ey * 8; y < ey * 8 + 8; ++y)
                        for (int x = ex * 8; x < ex * 8 + 8; ++x)
                            REQUIRE(f.at(x, y) == first);
                }
            CHECK(entity_fill(f, grid, tau).data == f.data);
        }
    }
}

TEST_CASE("refine_mask decoupling") {
    Rng rng(77);
    EntityMap ents(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) ents.at(x, y) = 1 + (x / 8);
    MaskCascadeConfig cfg;

    SECTION("full coverage reduces to entity fill") {
        const BinaryMask mq = random_mask(rng, 16, 16);
        const BinaryMask md = BinaryMask::ones(16, 16);
        const RefinedMask r = refine_mask(mq, md, ents, cfg);
        CHECK(r.mask.data == entity_fill(mq, ents, cfg.tau_fill).data);
    }
    SECTION("margin zeros re-imposed without entity fill") {
        const BinaryMask mq = BinaryMask::ones(16, 16);
        BinaryMask md = BinaryMask::ones(16, 16);
        for (int y = 0; y < 16; ++y) md.at(0, y) = 0;
        const RefinedMask r = refine_mask(mq, md, ents, cfg);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) CHECK(r.mask.at(x, y) == (x == 0 ? 0 : 1));
    }
    SECTION("disparity-zero rule holds on random inputs") {
        for (int trial = 0; trial < 1000; ++trial) {
            const BinaryMask mq = random_mask(rng, 16, 16);
            const BinaryMask md = random_mask(rng, 16, 16, 0.8);
            const RefinedMask r = refine_mask(mq, md, ents, cfg);
            for (size_t px = 0; px < md.data.size(); ++px)
                if (!md.data[px]) REQUIRE(r.mask.data[px] == 0);
        }
    }
}

TEST_CASE("cascade on a clean scene keeps covered pixels") {
    const CascadeFixture fix(61, 0, DistractorViews::All);
    const CascadeTrace t = fix.run(fix.queries[0]);
    int64_t covered = 0, kept = 0;
    for (size_t px = 0; px < t.m_final.data.size(); ++px) {
        if (t.m_d.data[px]) {
            ++covered;
            kept += t.m_final.data[px];
        } else {
            REQUIRE(t.m_final.data[px] == 0);  // margin stays excluded
        }
    }
    REQUIRE(covered > 4000);
    INFO("covered " << covered << " kept " << kept);
    CHECK(double(kept) / covered >= 0.95);
}

TEST_CASE("cascade flags a query-only distractor") {
    const CascadeFixture fix(62, 3, DistractorViews::QueriesOnly);
    const int q = fix.queries[0];
    const CascadeTrace t = fix.run(q);
    const MaskMetrics m = mask_metrics(t.m_final, fix.ds.distractor_masks[q], &t.m_d);
    INFO("iou " << m.iou << " recall " << m.recall << " precision " << m.precision);
    CHECK(m.recall >= 0.7);
    CHECK(m.iou >= 0.5);
}

TEST_CASE("cascade keeps a clean query against distractor references") {
    const CascadeFixture fix(63, 3, DistractorViews::PoolOnly);
    const int q = fix.queries[0];
    const CascadeTrace t = fix.run(q);
    // query is clean: nearly everything covered should be kept
    int64_t covered = 0, kept = 0;
    for (size_t px = 0; px < t.m_final.data.size(); ++px)
        if (t.m_d.data[px]) {
            ++covered;
            kept += t.m_final.data[px];
        }
    INFO("covered " << covered << " kept " << kept);
    CHECK(double(kept) / covered >= 0.90);
    // the reference masks must catch a fair share of each reference's sprites
    for (size_t i = 0; i < fix.refs.size(); ++i) {
        const auto& gt = fix.ds.distractor_masks[fix.ref_ids[i]];
        int64_t sprite = 0, caught = 0;
        for (size_t px = 0; px < gt.data.size(); ++px)
            if (!gt.data[px]) {
                ++sprite;
                caught += t.m_ref_en[i].data[px] == 0;
            }
        REQUIRE(sprite > 0);
        INFO("ref " << i << " caught " << caught << "/" << sprite);
        CHECK(double(caught) / sprite >= 0.70);
    }
}

TEST_CASE("cascade is deterministic") {
    const CascadeFixture fix(64, 2, DistractorViews::All);
    const CascadeTrace a = fix.run(fix.queries[1]);
    const CascadeTrace b = fix.run(fix.queries[1]);
    CHECK(a.m_rob.data == b.m_rob.data);
    CHECK(a.m_q.data == b.m_q.data);
    CHECK(a.m_d.data == b.m_d.data);
    CHECK(a.m_final.data == b.m_final.data);
}
