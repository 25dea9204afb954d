// Copyright Contributors to the desplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "desplat/image.hpp"

namespace desplat {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open file: " + path);
    return f;
}

// bit_depth 8 or 16, channels 1 or 3; rows are tightly packed, 16-bit
// samples host-order (libpng swaps to PNG big-endian).
inline void write_png(const std::string& path, int width, int height, int bit_depth,
                      int channels, const std::vector<uint8_t>& raw) {
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write error: " + path);
    }
    png_init_io(png, f.get());
    const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, width, height, bit_depth, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);
    const size_t stride = static_cast<size_t>(width) * channels * (bit_depth / 8);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = const_cast<png_bytep>(raw.data() + y * stride);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline void read_png(const std::string& path, int& width, int& height, int& bit_depth,
                     int& channels, std::vector<uint8_t>& raw) {
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png read error: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    bit_depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (bit_depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    bit_depth = png_get_bit_depth(png, info);
    channels = png_get_channels(png, info);
    const size_t stride = png_get_rowbytes(png, info);
    raw.resize(stride * height);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = raw.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace detail

inline void write_image_png(const std::string& path, const ImageBuffer& img) {
    std::vector<uint8_t> raw(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
        float v = img.data[i];
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        raw[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    detail::write_png(path, img.width, img.height, 8, 3, raw);
}

inline ImageBuffer read_image_png(const std::string& path) {
    int w, h, depth, ch;
    std::vector<uint8_t> raw;
    detail::read_png(path, w, h, depth, ch, raw);
    if (depth != 8 || ch != 3) throw std::runtime_error("expected 8-bit RGB png: " + path);
    ImageBuffer img(w, h);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = raw[i] / 255.0f;
    return img;
}

// Masks stored as 0/255 gray.
inline void write_mask_png(const std::string& path, const BinaryMask& mask) {
    std::vector<uint8_t> raw(mask.data.size());
    for (size_t i = 0; i < mask.data.size(); ++i) raw[i] = mask.data[i] ? 255 : 0;
    detail::write_png(path, mask.width, mask.height, 8, 1, raw);
}

inline BinaryMask read_mask_png(const std::string& path) {
    int w, h, depth, ch;
    std::vector<uint8_t> raw;
    detail::read_png(path, w, h, depth, ch, raw);
    if (depth != 8 || ch != 1) throw std::runtime_error("expected 8-bit gray png: " + path);
    BinaryMask mask(w, h);
    for (size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = raw[i] >= 128 ? 1 : 0;
    return mask;
}

// Entity IDs stored as 16-bit gray; IDs above 65535 are rejected.
inline void write_entities_png(const std::string& path, const EntityMap& ents) {
    std::vector<uint8_t> raw(ents.data.size() * 2);
    auto* px = reinterpret_cast<uint16_t*>(raw.data());
    for (size_t i = 0; i < ents.data.size(); ++i) {
        if (ents.data[i] > 0xffff) throw std::runtime_error("entity id exceeds 16-bit range");
        px[i] = static_cast<uint16_t>(ents.data[i]);
    }
    detail::write_png(path, ents.width, ents.height, 16, 1, raw);
}

inline EntityMap read_entities_png(const std::string& path) {
    int w, h, depth, ch;
    std::vector<uint8_t> raw;
    detail::read_png(path, w, h, depth, ch, raw);
    if (ch != 1) throw std::runtime_error("expected gray png: " + path);
    EntityMap ents(w, h);
    if (depth == 16) {
        const auto* px = reinterpret_cast<const uint16_t*>(raw.data());
        for (size_t i = 0; i < ents.data.size(); ++i) ents.data[i] = px[i];
    } else {
        for (size_t i = 0; i < ents.data.size(); ++i) ents.data[i] = raw[i];
    }
    return ents;
}

}  // namespace desplat
