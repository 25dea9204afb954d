// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "desplat/segmentation.hpp"
#include "desplat/synthetic.hpp"

using namespace desplat;

TEST_CASE("ground-truth provider returns stored maps") {
    GeneratorConfig cfg;
    cfg.seed = 33;
    cfg.width = 64;
    cfg.height = 64;
    cfg.view_count = 4;
    cfg.query_count = 1;
    cfg.sprites_per_view = 3;
    const GeneratedScene gen = generate_scene(cfg);
    const SceneDataset ds = composite_distractors(gen.dataset, cfg, gen.query_indices);

    const EntityMap a = segment_ground_truth(ds, 1);
    const EntityMap b = segment_ground_truth(ds, 1);
    CHECK(a.data == b.data);  // pure lookup
    CHECK(a.data == ds.entities[1].data);

    // every GT distractor pixel carries a nonzero entity id
    for (size_t v = 0; v < ds.view_count(); ++v)
        for (size_t i = 0; i < ds.distractor_masks[v].data.size(); ++i)
            if (ds.distractor_masks[v].data[i] == 0) REQUIRE(ds.entities[v].data[i] > 0);

    SceneDataset no_entities = ds;
    no_entities.entities.clear();
    CHECK_THROWS_AS(segment_ground_truth(no_entities, 0), std::runtime_error);
}

TEST_CASE("color components on simple layouts") {
    SECTION("two-color half/half") {
        ImageBuffer img(16, 16, 0.1f);
        for (int y = 8; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0.9f;
        const EntityMap e = segment_color_components(img, 2, 1);
        CHECK(e.max_id() == 2);
        CHECK(e.at(0, 0) == 1);
        CHECK(e.at(0, 15) == 2);
    }
    SECTION("constant image is one entity") {
        const EntityMap e = segment_color_components(ImageBuffer(12, 12, 0.4f), 4, 1);
        CHECK(e.max_id() == 1);
        for (uint32_t v : e.data) CHECK(v == 1);
    }
    SECTION("checkerboard with 8x8 cells") {
        ImageBuffer img(64, 64);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                const float v = ((x / 8) + (y / 8)) % 2 ? 0.85f : 0.15f;
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = v;
            }
        const EntityMap e = segment_color_components(img, 2, 1);
        CHECK(e.max_id() == 64);
        // raster-ordered IDs: first row of cells is 1..8
        for (int cell = 0; cell < 8; ++cell) CHECK(e.at(cell * 8 + 4, 4) == uint32_t(cell + 1));
        CHECK_THROWS_AS(segment_color_components(img, 1, 1), std::invalid_argument);
    }
}

TEST_CASE("labels stable under sub-step brightness shift") {
    Rng rng(17);
    ImageBuffer img(24, 24);
    const int levels = 4;
    for (size_t px = 0; px < img.pixel_count(); ++px) {
        const int cell = uniform_int(rng, 0, levels - 1);
        for (int c = 0; c < 3; ++c)
            img.data[px * 3 + c] = (cell + 0.5f) / levels;  // cell centers
    }
    ImageBuffer shifted = img;
    for (float& v : shifted.data) v += 0.4f / levels / 2.0f;  // under half a step
    const EntityMap a = segment_color_components(img, levels, 3);
    const EntityMap b = segment_color_components(shifted, levels, 3);
    CHECK(a.data == b.data);
}

TEST_CASE("small regions merge into largest neighbor") {
    ImageBuffer img(9, 3, 0.1f);
    // single odd pixel inside a uniform field
    for (int c = 0; c < 3; ++c) img.at(4, 1, c) = 0.9f;
    const EntityMap e = segment_color_components(img, 2, 2);
    CHECK(e.max_id() == 1);  // swallowed by the surrounding region
}

TEST_CASE("segmentation cache round-trips and invalidates") {
    GeneratorConfig cfg;
    cfg.seed = 8;
    cfg.width = 48;
    cfg.height = 48;
    cfg.view_count = 3;
    cfg.query_count = 0;
    const GeneratedScene gen = generate_scene(cfg);
    const fs::path root = fs::temp_directory_path() / "desplat_seg_cache";
    fs::remove_all(root);

    const auto provider = SegmentationProvider::color_components(4, 4);
    const CacheResult first = cache_segmentations(gen.dataset, provider, root);
    CHECK(first.computed == 3);
    CHECK(first.hits == 0);

    const CacheResult second = cache_segmentations(gen.dataset, provider, root);
    CHECK(second.computed == 0);  // zero segmentation work on a warm cache
    CHECK(second.hits == 3);
    for (size_t v = 0; v < 3; ++v) CHECK(second.entities[v].data == first.entities[v].data);

    // changed parameters land in a fresh cache directory
    const CacheResult other = cache_segmentations(gen.dataset, SegmentationProvider::color_components(6, 4), root);
    CHECK(other.computed == 3);
    CHECK(other.cache_dir != first.cache_dir);

    // 16-bit id round-trip up to the format limit
    EntityMap wide(8, 8);
    for (size_t i = 0; i < wide.data.size(); ++i)
        wide.data[i] = static_cast<uint32_t>(i * 1021) % 65536;
    write_entities_png((root / "wide.png").string(), wide);
    CHECK(read_entities_png((root / "wide.png").string()).data == wide.data);
    fs::remove_all(root);
}
