#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "vlink/errors.hpp"
#include "vlink/image.hpp"

namespace vlink {

enum class MaskPolarity {
    WhiteKnown,  // white pixels are visible content, black are holes
    WhiteHole,   // white pixels are holes (Nvidia/Quick-Draw file convention)
};

namespace detail {

struct PngReadHandle {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadHandle() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

struct PngWriteHandle {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteHandle() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

// Decodes any PNG to 8-bit RGB rows.
inline void read_png_rgb8(const std::string& path, std::vector<unsigned char>& rgb, int& h,
                          int& w) {
    PngReadHandle rh;
    rh.fp = std::fopen(path.c_str(), "rb");
    if (!rh.fp) throw IoError("cannot open " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, rh.fp) != 8 || png_sig_cmp(sig, 0, 8))
        throw IoError("not a PNG file: " + path);
    rh.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!rh.png) throw IoError("libpng init failed for " + path);
    rh.info = png_create_info_struct(rh.png);
    if (!rh.info) throw IoError("libpng init failed for " + path);
    if (setjmp(png_jmpbuf(rh.png))) throw IoError("corrupt PNG file: " + path);
    png_init_io(rh.png, rh.fp);
    png_set_sig_bytes(rh.png, 8);
    png_read_info(rh.png, rh.info);

    png_uint_32 width, height;
    int bit_depth, color_type;
    png_get_IHDR(rh.png, rh.info, &width, &height, &bit_depth, &color_type, nullptr, nullptr,
                 nullptr);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(rh.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(rh.png);
    if (png_get_valid(rh.png, rh.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(rh.png);
    if (bit_depth == 16) png_set_strip_16(rh.png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(rh.png);
    png_set_strip_alpha(rh.png);
    png_read_update_info(rh.png, rh.info);

    h = static_cast<int>(height);
    w = static_cast<int>(width);
    rgb.assign(static_cast<size_t>(h) * w * 3, 0);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = rgb.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(rh.png, rows.data());
    png_read_end(rh.png, nullptr);
}

inline void write_png(const std::string& path, const unsigned char* data, int h, int w,
                      int channels) {
    PngWriteHandle wh;
    wh.fp = std::fopen(path.c_str(), "wb");
    if (!wh.fp) throw IoError("cannot write " + path);
    wh.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!wh.png) throw IoError("libpng init failed for " + path);
    wh.info = png_create_info_struct(wh.png);
    if (!wh.info) throw IoError("libpng init failed for " + path);
    if (setjmp(png_jmpbuf(wh.png))) throw IoError("PNG write failed for " + path);
    png_init_io(wh.png, wh.fp);
    png_set_IHDR(wh.png, wh.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wh.png, wh.info);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<size_t>(y)] =
            const_cast<unsigned char*>(data) + static_cast<size_t>(y) * w * channels;
    png_write_image(wh.png, rows.data());
    png_write_end(wh.png, nullptr);
}

}  // namespace detail

// 8-bit value -> [-1,1].
inline double u8_to_unit(unsigned char v) { return static_cast<double>(v) / 255.0 * 2.0 - 1.0; }

// [-1,1] -> rounded 8-bit value.
inline unsigned char unit_to_u8(double v) {
    double scaled = (std::clamp(v, -1.0, 1.0) + 1.0) / 2.0 * 255.0;
    return static_cast<unsigned char>(std::lround(scaled));
}

inline Image load_image(const std::string& path) {
    std::vector<unsigned char> rgb;
    int h = 0, w = 0;
    detail::read_png_rgb8(path, rgb, h, w);
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = u8_to_unit(rgb[(static_cast<size_t>(y) * w + x) * 3 + c]);
    return img;
}

// Loads and resizes to the working resolution.
inline Image load_image(const std::string& path, int resolution) {
    return resize_image(load_image(path), resolution, resolution);
}

inline void save_image(const Image& img, const std::string& path) {
    std::vector<unsigned char> rgb(static_cast<size_t>(img.height) * img.width * 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                rgb[(static_cast<size_t>(y) * img.width + x) * 3 + c] = unit_to_u8(img.at(c, y, x));
    detail::write_png(path, rgb.data(), img.height, img.width, 3);
}

// Reads a nominally binary mask file. Luminance >= 0.5 maps to 1, then the
// polarity flag decides whether white means known or hole. Soft pixels beyond
// what compression artifacts explain trigger a warning.
inline BinaryMask load_mask(const std::string& path, MaskPolarity polarity) {
    std::vector<unsigned char> rgb;
    int h = 0, w = 0;
    detail::read_png_rgb8(path, rgb, h, w);
    BinaryMask mask(h, w);
    int64_t soft = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            size_t base = (static_cast<size_t>(y) * w + x) * 3;
            double lum = (rgb[base] + rgb[base + 1] + rgb[base + 2]) / (3.0 * 255.0);
            if (lum > 0.1 && lum < 0.9) ++soft;
            double white = lum >= 0.5 ? 1.0 : 0.0;
            mask.at(y, x) = polarity == MaskPolarity::WhiteKnown ? white : 1.0 - white;
        }
    if (soft > 0)
        std::cerr << "warning: " << path << " has " << soft
                  << " non-binary pixels; thresholded at 0.5\n";
    return mask;
}

inline BinaryMask load_mask(const std::string& path, MaskPolarity polarity, int resolution) {
    return resize_mask(load_mask(path, polarity), resolution, resolution);
}

// Writes white = known, black = hole; reload with MaskPolarity::WhiteKnown.
inline void save_mask(const BinaryMask& mask, const std::string& path) {
    std::vector<unsigned char> gray(static_cast<size_t>(mask.height) * mask.width);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            gray[static_cast<size_t>(y) * mask.width + x] = mask.at(y, x) != 0.0 ? 255 : 0;
    detail::write_png(path, gray.data(), mask.height, mask.width, 1);
}

}  // namespace vlink
