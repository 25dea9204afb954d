// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace desplat {

// Row-major RGB raster, channels in [0,1].
struct ImageBuffer {
    int width = 0;
    int height = 0;
    std::vector<float> data;  // width*height*3

    ImageBuffer() = default;
    ImageBuffer(int w, int h, float fill = 0.f)
        : width(w), height(h), data(static_cast<size_t>(w) * h * 3, fill) {}
    ImageBuffer(int w, int h, std::vector<float> d) : width(w), height(h), data(std::move(d)) {
        if (data.size() != static_cast<size_t>(width) * height * 3)
            throw std::invalid_argument("ImageBuffer: buffer length does not match dimensions");
        for (float v : data)
            if (!(v >= 0.f && v <= 1.f)) throw std::invalid_argument("ImageBuffer: channel outside [0,1]");
    }

    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
    float& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    float at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    bool same_size(int w, int h) const { return width == w && height == h; }
};

// Scalar depth raster; 0 marks "no surface".
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    DepthMap() = default;
    DepthMap(int w, int h, float fill = 0.f)
        : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}
    DepthMap(int w, int h, std::vector<float> d) : width(w), height(h), data(std::move(d)) {
        if (data.size() != static_cast<size_t>(width) * height)
            throw std::invalid_argument("DepthMap: buffer length does not match dimensions");
        for (float v : data)
            if (!(std::isfinite(v) && v >= 0.f)) throw std::invalid_argument("DepthMap: values must be finite and >= 0");
    }

    float& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    float at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
};

// Per-pixel {0,1} grid; 1 = static/keep, 0 = distractor/exclude.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int w, int h, uint8_t fill = 0)
        : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {
        if (fill > 1) throw std::invalid_argument("BinaryMask: fill must be 0 or 1");
    }
    BinaryMask(int w, int h, std::vector<uint8_t> d) : width(w), height(h), data(std::move(d)) {
        if (data.size() != static_cast<size_t>(width) * height)
            throw std::invalid_argument("BinaryMask: buffer length does not match dimensions");
        for (uint8_t v : data)
            if (v > 1) throw std::invalid_argument("BinaryMask: values must be 0 or 1");
    }

    static BinaryMask ones(int w, int h) { return BinaryMask(w, h, 1); }

    uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }

    int64_t count_ones() const {
        int64_t n = 0;
        for (uint8_t v : data) n += v;
        return n;
    }
};

inline BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("mask_and: dimension mismatch");
    BinaryMask out(a.width, a.height);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] & b.data[i];
    return out;
}

inline BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("mask_or: dimension mismatch");
    BinaryMask out(a.width, a.height);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] | b.data[i];
    return out;
}

inline BinaryMask mask_not(const BinaryMask& a) {
    BinaryMask out(a.width, a.height);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] ^ 1u;
    return out;
}

// Per-pixel integer entity IDs; 0 = unlabeled.
struct EntityMap {
    int width = 0;
    int height = 0;
    std::vector<uint32_t> data;

    EntityMap() = default;
    EntityMap(int w, int h, uint32_t fill = 0)
        : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}
    EntityMap(int w, int h, std::vector<uint32_t> d) : width(w), height(h), data(std::move(d)) {
        if (data.size() != static_cast<size_t>(width) * height)
            throw std::invalid_argument("EntityMap: buffer length does not match dimensions");
    }

    uint32_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    uint32_t at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }

    uint32_t max_id() const {
        uint32_t m = 0;
        for (uint32_t v : data) m = std::max(m, v);
        return m;
    }
};

}  // namespace desplat
