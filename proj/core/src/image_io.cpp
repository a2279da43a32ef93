#include "acmseg/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include <png.h>

namespace acmseg {

Image::Image(int w, int h) : width(w), height(h) {
    if (w < 1 || h < 1) throw std::invalid_argument("image dimensions must be positive");
    data.assign(static_cast<std::size_t>(3) * w * h, 0.0);
}

Rgb8 to_rgb8(const Image& img) {
    Rgb8 px{img.width, img.height, {}};
    px.data.resize(static_cast<std::size_t>(3) * img.width * img.height);
    for (int v = 0; v < img.height; ++v)
        for (int u = 0; u < img.width; ++u)
            for (int c = 0; c < 3; ++c) {
                const double x = std::clamp(img.at(c, u, v), 0.0, 1.0);
                px.data[(static_cast<std::size_t>(v) * img.width + u) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(x * 255.0));
            }
    return px;
}

Image from_rgb8(const Rgb8& px) {
    Image img(px.width, px.height);
    for (int v = 0; v < px.height; ++v)
        for (int u = 0; u < px.width; ++u)
            for (int c = 0; c < 3; ++c)
                img.at(c, u, v) = px.data[(static_cast<std::size_t>(v) * px.width + u) * 3 + c] / 255.0;
    return img;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png_impl(const std::string& path, int width, int height, int color_type, int channels,
                    const std::uint8_t* data) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png write failed: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int v = 0; v < height; ++v) {
        png_write_row(png, const_cast<png_bytep>(data + static_cast<std::size_t>(v) * width * channels));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::string& path, const Rgb8& px) {
    write_png_impl(path, px.width, px.height, PNG_COLOR_TYPE_RGB, 3, px.data.data());
}

void write_png_gray(const std::string& path, int width, int height, const std::vector<std::uint8_t>& gray) {
    if (gray.size() != static_cast<std::size_t>(width) * height) {
        throw std::invalid_argument("write_png_gray: buffer size mismatch");
    }
    write_png_impl(path, width, height, PNG_COLOR_TYPE_GRAY, 1, gray.data());
}

Rgb8 read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open: " + path);
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw std::runtime_error("not a PNG file: " + path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng init failed");
    }
    Rgb8 out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("corrupt PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(out.width) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unsupported PNG layout: " + path);
    }
    out.data.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    rows.resize(static_cast<std::size_t>(out.height));
    for (int v = 0; v < out.height; ++v) rows[v] = out.data.data() + static_cast<std::size_t>(v) * out.width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace acmseg
