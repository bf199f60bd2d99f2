// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace splatprior {

/// Row-major H x W x C image of doubles with a top-left origin.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

    double &at(int y, int x, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
    bool empty() const { return data.empty(); }
    bool same_shape(const Image &o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

/// 8-bit PNG (gray or RGB, alpha dropped) to [0,1] doubles.
Image read_png(const std::filesystem::path &path);
/// Writes channels 1 or 3 of a [0,1] image as 8-bit PNG, rounding to nearest.
void write_png(const std::filesystem::path &path, const Image &img);

/// 16-bit single-channel PNG in millimeters to meters (0 stays 0 = invalid).
Image read_depth_png(const std::filesystem::path &path);
/// Meters to 16-bit millimeters, rounding to nearest and saturating at 65535.
void write_depth_png(const std::filesystem::path &path, const Image &depth);

} // namespace splatprior
