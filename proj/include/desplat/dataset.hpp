// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "desplat/camera.hpp"
#include "desplat/image.hpp"
#include "desplat/pfm_io.hpp"
#include "desplat/png_io.hpp"

namespace desplat {

namespace fs = std::filesystem;

// Multi-view capture container. All per-view sequences are index-aligned
// with `cameras`; optional sequences are either empty or full length.
struct SceneDataset {
    std::string name;
    std::vector<Camera> cameras;
    std::vector<ImageBuffer> images;
    std::vector<DepthMap> depths;             // optional ground-truth depth
    std::vector<BinaryMask> distractor_masks; // optional GT, 0 = distractor
    std::vector<EntityMap> entities;          // optional per-pixel entity IDs
    std::vector<ImageBuffer> clean_images;    // optional distractor-free plates

    size_t view_count() const { return cameras.size(); }

    void validate() const {
        const size_t n = cameras.size();
        if (images.size() != n) throw std::runtime_error("dataset: camera/image length mismatch");
        auto check_len = [&](size_t m, const char* what) {
            if (m != 0 && m != n)
                throw std::runtime_error(std::string("dataset: ") + what + " length mismatch");
        };
        check_len(depths.size(), "depth");
        check_len(distractor_masks.size(), "mask");
        check_len(entities.size(), "entity map");
        check_len(clean_images.size(), "clean image");
        for (size_t i = 0; i < n; ++i) {
            const int w = cameras[i].width, h = cameras[i].height;
            if (!images[i].same_size(w, h)) throw std::runtime_error("dataset: image size != camera size");
            if (!depths.empty() && (depths[i].width != w || depths[i].height != h))
                throw std::runtime_error("dataset: depth size != camera size");
            if (!distractor_masks.empty() &&
                (distractor_masks[i].width != w || distractor_masks[i].height != h))
                throw std::runtime_error("dataset: mask size != camera size");
            if (!entities.empty() && (entities[i].width != w || entities[i].height != h))
                throw std::runtime_error("dataset: entity map size != camera size");
        }
    }
};

namespace detail {

inline std::string double_to_string(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double string_to_double(const std::string& s) {
    return std::strtod(s.c_str(), nullptr);
}

inline std::string view_file(const char* pattern, int index) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), pattern, index);
    return buf;
}

}  // namespace detail

// Matrices serialize row-major as decimal strings so that save/load is
// bit-stable.
inline nlohmann::json camera_to_json(const Camera& cam) {
    nlohmann::json j;
    j["width"] = cam.width;
    j["height"] = cam.height;
    auto& intr = j["intrinsics"] = nlohmann::json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) intr.push_back(detail::double_to_string(cam.intrinsics(r, c)));
    auto& extr = j["extrinsics"] = nlohmann::json::array();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) extr.push_back(detail::double_to_string(cam.extrinsics(r, c)));
    return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
    Eigen::Matrix3d K;
    Eigen::Matrix4d E;
    const auto& intr = j.at("intrinsics");
    const auto& extr = j.at("extrinsics");
    if (intr.size() != 9 || extr.size() != 16)
        throw std::runtime_error("camera json: wrong matrix length");
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) K(r, c) = detail::string_to_double(intr[r * 3 + c].get<std::string>());
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) E(r, c) = detail::string_to_double(extr[r * 4 + c].get<std::string>());
    return Camera(E, K, j.at("width").get<int>(), j.at("height").get<int>());
}

inline void save_dataset(const SceneDataset& ds, const fs::path& dir) {
    ds.validate();
    fs::create_directories(dir / "images");
    nlohmann::json cams = nlohmann::json::array();
    for (const auto& c : ds.cameras) cams.push_back(camera_to_json(c));
    std::ofstream(dir / "cameras.json") << cams.dump(2) << "\n";
    for (size_t i = 0; i < ds.images.size(); ++i)
        write_image_png((dir / "images" / detail::view_file("%04zu.png", i)).string(), ds.images[i]);
    if (!ds.depths.empty()) {
        fs::create_directories(dir / "depth");
        for (size_t i = 0; i < ds.depths.size(); ++i)
            write_pfm((dir / "depth" / detail::view_file("%04zu.pfm", i)).string(), ds.depths[i]);
    }
    if (!ds.distractor_masks.empty()) {
        fs::create_directories(dir / "masks_gt");
        fs::create_directories(dir / "distractor_masks");
        for (size_t i = 0; i < ds.distractor_masks.size(); ++i) {
            write_mask_png((dir / "masks_gt" / detail::view_file("%04zu.png", i)).string(),
                           ds.distractor_masks[i]);
            write_mask_png((dir / "distractor_masks" / detail::view_file("%04zu.png", i)).string(),
                           ds.distractor_masks[i]);
        }
    }
    if (!ds.entities.empty()) {
        fs::create_directories(dir / "entities");
        for (size_t i = 0; i < ds.entities.size(); ++i)
            write_entities_png((dir / "entities" / detail::view_file("%04zu.png", i)).string(),
                               ds.entities[i]);
    }
    if (!ds.clean_images.empty()) {
        fs::create_directories(dir / "images_clean");
        for (size_t i = 0; i < ds.clean_images.size(); ++i)
            write_image_png((dir / "images_clean" / detail::view_file("%04zu.png", i)).string(),
                            ds.clean_images[i]);
    }
}

inline SceneDataset load_dataset(const fs::path& dir) {
    SceneDataset ds;
    ds.name = dir.filename().string();
    const fs::path cam_path = dir / "cameras.json";
    if (!fs::exists(cam_path)) throw std::runtime_error("missing cameras.json in " + dir.string());
    nlohmann::json cams;
    std::ifstream(cam_path) >> cams;
    for (const auto& j : cams) ds.cameras.push_back(camera_from_json(j));
    for (size_t i = 0; i < ds.cameras.size(); ++i) {
        const fs::path p = dir / "images" / detail::view_file("%04zu.png", i);
        if (!fs::exists(p)) throw std::runtime_error("missing image " + p.string());
        ds.images.push_back(read_image_png(p.string()));
    }
    auto load_all = [&](const char* sub, const char* pattern, auto reader, auto& out) {
        if (!fs::exists(dir / sub)) return;
        for (size_t i = 0; i < ds.cameras.size(); ++i) {
            const fs::path p = dir / sub / detail::view_file(pattern, i);
            if (!fs::exists(p)) throw std::runtime_error("missing view file " + p.string());
            out.push_back(reader(p.string()));
        }
    };
    load_all("depth", "%04zu.pfm", read_pfm, ds.depths);
    if (fs::exists(dir / "masks_gt"))
        load_all("masks_gt", "%04zu.png", read_mask_png, ds.distractor_masks);
    else
        load_all("distractor_masks", "%04zu.png", read_mask_png, ds.distractor_masks);
    load_all("entities", "%04zu.png", read_entities_png, ds.entities);
    load_all("images_clean", "%04zu.png", read_image_png, ds.clean_images);
    ds.validate();
    return ds;
}

}  // namespace desplat
