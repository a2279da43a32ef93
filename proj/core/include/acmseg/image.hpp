#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace acmseg {

// Three-channel float image, channel-planar: value (c, u, v) at
// c * width * height + v * width + u. Values are in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h);

    double& at(int c, int u, int v) {
        return data[(static_cast<std::size_t>(c) * height + v) * width + u];
    }
    double at(int c, int u, int v) const {
        return data[(static_cast<std::size_t>(c) * height + v) * width + u];
    }

    friend bool operator==(const Image&, const Image&) = default;
};

// 8-bit interleaved pixel buffer as stored in PNG files.
struct Rgb8 {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // (v * width + u) * 3 + c
};

Rgb8 to_rgb8(const Image& img);
Image from_rgb8(const Rgb8& px);

// Gray PNGs are written with one channel, RGB with three. read_png accepts
// gray, gray+alpha, RGB and RGBA (alpha dropped) at 8 or 16 bits.
Rgb8 read_png(const std::string& path);
void write_png(const std::string& path, const Rgb8& px);
void write_png_gray(const std::string& path, int width, int height, const std::vector<std::uint8_t>& gray);

inline Image read_image(const std::string& path) { return from_rgb8(read_png(path)); }
inline void write_image(const std::string& path, const Image& img) { write_png(path, to_rgb8(img)); }

}  // namespace acmseg
