// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/errors.hpp>
#include <splatprior/image.hpp>

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace splatprior {

namespace {

struct FileCloser {
    void operator()(std::FILE *f) const {
        if (f) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct DecodedPng {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 0;
    std::vector<std::uint8_t> bytes; // row-major, big-endian for 16 bit
};

DecodedPng decode(const std::filesystem::path &path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) {
        throw MissingAsset("cannot open " + path.string());
    }
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw ParseError("not a PNG file: " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialization failed");
    }
    DecodedPng out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("corrupt PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(png);
    }
    png_read_update_info(png, info);

    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    out.bytes.resize(rowbytes * out.height);
    std::vector<png_bytep> rows(out.height);
    for (int y = 0; y < out.height; ++y) {
        rows[y] = out.bytes.data() + rowbytes * y;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void encode(const std::filesystem::path &path, int width, int height, int color_type, int bit_depth,
            const std::vector<std::uint8_t> &bytes) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) {
        throw IoError("cannot write " + path.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t rowbytes = bytes.size() / std::max(height, 1);
    for (int y = 0; y < height; ++y) {
        png_write_row(png, const_cast<png_bytep>(bytes.data() + rowbytes * y));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace

Image read_png(const std::filesystem::path &path) {
    const DecodedPng png = decode(path);
    if (png.bit_depth != 8) {
        throw ParseError("expected 8-bit PNG: " + path.string());
    }
    const int out_channels = png.channels >= 3 ? 3 : 1;
    Image img(png.height, png.width, out_channels);
    for (int y = 0; y < png.height; ++y) {
        for (int x = 0; x < png.width; ++x) {
            const std::uint8_t *px = png.bytes.data() + (static_cast<std::size_t>(y) * png.width + x) * png.channels;
            for (int c = 0; c < out_channels; ++c) {
                img.at(y, x, c) = px[c] / 255.0;
            }
        }
    }
    return img;
}

void write_png(const std::filesystem::path &path, const Image &img) {
    if (img.channels != 1 && img.channels != 3) {
        throw ShapeError("write_png expects 1 or 3 channels");
    }
    std::vector<std::uint8_t> bytes(img.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
    }
    encode(path, img.width, img.height, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, 8,
           bytes);
}

Image read_depth_png(const std::filesystem::path &path) {
    const DecodedPng png = decode(path);
    if (png.bit_depth != 16 || png.channels != 1) {
        throw ParseError("expected 16-bit gray depth PNG: " + path.string());
    }
    Image depth(png.height, png.width, 1);
    for (std::size_t i = 0; i < depth.data.size(); ++i) {
        const unsigned mm = (static_cast<unsigned>(png.bytes[2 * i]) << 8) | png.bytes[2 * i + 1];
        depth.data[i] = mm / 1000.0;
    }
    return depth;
}

void write_depth_png(const std::filesystem::path &path, const Image &depth) {
    if (depth.channels != 1) {
        throw ShapeError("write_depth_png expects a single channel");
    }
    std::vector<std::uint8_t> bytes(depth.data.size() * 2);
    for (std::size_t i = 0; i < depth.data.size(); ++i) {
        const double mm = std::clamp(std::round(depth.data[i] * 1000.0), 0.0, 65535.0);
        const auto v = static_cast<std::uint16_t>(mm);
        bytes[2 * i] = static_cast<std::uint8_t>(v >> 8);
        bytes[2 * i + 1] = static_cast<std::uint8_t>(v & 0xff);
    }
    encode(path, depth.width, depth.height, PNG_COLOR_TYPE_GRAY, 16, bytes);
}

} // namespace splatprior
