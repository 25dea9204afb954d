// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "desplat/image.hpp"
#include "desplat/png_io.hpp"  // detail::open_file

namespace desplat {

// Little-endian single-channel PFM ("Pf", scale -1.0). Rows are stored
// bottom-up per the format convention.
inline void write_pfm(const std::string& path, const DepthMap& depth) {
    detail::FilePtr f = detail::open_file(path, "wb");
    std::fprintf(f.get(), "Pf\n%d %d\n-1.0\n", depth.width, depth.height);
    for (int y = depth.height - 1; y >= 0; --y) {
        const float* row = depth.data.data() + static_cast<size_t>(y) * depth.width;
        if (std::fwrite(row, sizeof(float), depth.width, f.get()) != static_cast<size_t>(depth.width))
            throw std::runtime_error("pfm write failed: " + path);
    }
}

inline DepthMap read_pfm(const std::string& path) {
    detail::FilePtr f = detail::open_file(path, "rb");
    char magic[3] = {};
    int w = 0, h = 0;
    float scale = 0.f;
    if (std::fscanf(f.get(), "%2s %d %d %f", magic, &w, &h, &scale) != 4)
        throw std::runtime_error("malformed pfm header: " + path);
    if (std::string(magic) != "Pf") throw std::runtime_error("expected single-channel pfm: " + path);
    if (scale >= 0.f) throw std::runtime_error("big-endian pfm not supported: " + path);
    std::fgetc(f.get());  // single whitespace after header
    std::vector<float> data(static_cast<size_t>(w) * h);
    for (int y = h - 1; y >= 0; --y) {
        if (std::fread(data.data() + static_cast<size_t>(y) * w, sizeof(float), w, f.get()) !=
            static_cast<size_t>(w))
            throw std::runtime_error("truncated pfm: " + path);
    }
    return DepthMap(w, h, std::move(data));
}

}  // namespace desplat
