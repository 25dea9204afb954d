// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <functional>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

#include <json.hpp>

#include "desplat/common.hpp"
#include "desplat/dataset.hpp"
#include "desplat/image.hpp"

namespace desplat {

inline EntityMap segment_ground_truth(const SceneDataset& ds, size_t view) {
    if (ds.entities.empty()) throw std::runtime_error("dataset carries no entity maps");
    if (view >= ds.entities.size()) throw std::out_of_range("view index out of range");
    return ds.entities[view];
}

// Fallback segmenter: per-channel color quantization followed by 4-connected
// component labeling in raster-scan order. Regions below min_region are
// merged into their largest neighbor. Every pixel ends up labeled, so ID 0
// stays unused.
inline EntityMap segment_color_components(const ImageBuffer& img, int levels, int min_region) {
    if (levels < 2) throw std::invalid_argument("segment_color_components: levels must be >= 2");
    const int w = img.width, h = img.height;
    std::vector<int32_t> quant(static_cast<size_t>(w) * h);
    for (size_t i = 0; i < quant.size(); ++i) {
        int32_t key = 0;
        for (int c = 0; c < 3; ++c) {
            int q = static_cast<int>(img.data[i * 3 + c] * levels);
            q = std::min(q, levels - 1);
            key = key * levels + q;
        }
        quant[i] = key;
    }

    std::vector<int32_t> label(quant.size(), -1);
    int32_t next = 0;
    std::vector<int64_t> region_size;
    std::queue<int32_t> frontier;
    for (size_t start = 0; start < quant.size(); ++start) {
        if (label[start] >= 0) continue;
        const int32_t id = next++;
        region_size.push_back(0);
        label[start] = id;
        frontier.push(static_cast<int32_t>(start));
        while (!frontier.empty()) {
            const int32_t px = frontier.front();
            frontier.pop();
            ++region_size[id];
            const int x = px % w, y = px / w;
            const int nbr[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
            for (auto& [nx, ny] : nbr) {
                if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                const int32_t np = ny * w + nx;
                if (label[np] >= 0 || quant[np] != quant[start]) continue;
                label[np] = id;
                frontier.push(np);
            }
        }
    }

    // merge small regions into their largest 4-adjacent neighbor, smallest
    // regions first for a deterministic outcome
    if (min_region > 1) {
        for (bool changed = true; changed;) {
            changed = false;
            std::vector<int32_t> order(region_size.size());
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
                return region_size[a] != region_size[b] ? region_size[a] < region_size[b] : a < b;
            });
            for (int32_t id : order) {
                if (region_size[id] == 0 || region_size[id] >= min_region) continue;
                // largest neighbor region, ties to the smaller label
                int32_t best = -1;
                for (size_t px = 0; px < label.size(); ++px) {
                    if (label[px] != id) continue;
                    const int x = static_cast<int>(px) % w, y = static_cast<int>(px) / w;
                    const int nbr[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
                    for (auto& [nx, ny] : nbr) {
                        if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                        const int32_t other = label[ny * w + nx];
                        if (other == id) continue;
                        if (best < 0 || region_size[other] > region_size[best] ||
                            (region_size[other] == region_size[best] && other < best))
                            best = other;
                    }
                }
                if (best < 0) continue;
                for (auto& l : label)
                    if (l == id) l = best;
                region_size[best] += region_size[id];
                region_size[id] = 0;
                changed = true;
            }
        }
    }

    // compact to contiguous IDs starting at 1, ordered by first appearance
    std::vector<uint32_t> remap(region_size.size(), 0);
    uint32_t compact = 0;
    EntityMap out(w, h);
    for (size_t i = 0; i < label.size(); ++i) {
        uint32_t& m = remap[label[i]];
        if (m == 0) m = ++compact;
        out.data[i] = m;
    }
    return out;
}

struct SegmentationProvider {
    std::string name;
    nlohmann::json params;
    std::function<EntityMap(const SceneDataset&, size_t)> run;

    static SegmentationProvider ground_truth() {
        return {"ground_truth", nlohmann::json::object(),
                [](const SceneDataset& ds, size_t v) { return segment_ground_truth(ds, v); }};
    }
    static SegmentationProvider color_components(int levels, int min_region) {
        nlohmann::json p;
        p["levels"] = levels;
        p["min_region"] = min_region;
        return {"color_components", p, [levels, min_region](const SceneDataset& ds, size_t v) {
                    return segment_color_components(ds.images[v], levels, min_region);
                }};
    }
};

struct CacheResult {
    std::vector<EntityMap> entities;
    int64_t hits = 0;      // views served from cache
    int64_t computed = 0;  // views freshly segmented
    fs::path cache_dir;
};

// Pre-computes and caches per-view entity maps under
// cache/entities/<provider-hash>/. A manifest mismatch triggers a recompute
// with a warning.
inline CacheResult cache_segmentations(const SceneDataset& ds, const SegmentationProvider& provider,
                                       const fs::path& cache_root) {
    nlohmann::json meta;
    meta["provider"] = provider.name;
    meta["params"] = provider.params;
    meta["views"] = ds.view_count();
    meta["dataset"] = ds.name;
    const std::string key = meta.dump();
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(fnv1a(key)));
    CacheResult result;
    result.cache_dir = cache_root / "entities" / hash;

    const fs::path manifest_path = result.cache_dir / "manifest.json";
    bool valid = false;
    if (fs::exists(manifest_path)) {
        try {
            nlohmann::json existing;
            std::ifstream(manifest_path) >> existing;
            valid = existing == meta;
        } catch (const std::exception&) {
            valid = false;
        }
        if (!valid) warn("segmentation cache manifest mismatch, recomputing: " + manifest_path.string());
    }

    fs::create_directories(result.cache_dir);
    for (size_t v = 0; v < ds.view_count(); ++v) {
        const fs::path p = result.cache_dir / detail::view_file("%04zu.png", v);
        if (valid && fs::exists(p)) {
            result.entities.push_back(read_entities_png(p.string()));
            ++result.hits;
        } else {
            result.entities.push_back(provider.run(ds, v));
            write_entities_png(p.string(), result.entities.back());
            ++result.computed;
        }
    }
    std::ofstream(manifest_path) << meta.dump(2) << "\n";
    return result;
}

}  // namespace desplat
