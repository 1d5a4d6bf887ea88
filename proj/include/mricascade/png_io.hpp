#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mricascade/tensor.hpp"

namespace mricascade::png_io {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    return f;
}

}  // namespace detail

// 16-bit grayscale slice, stored value / 65535 -> [0,1]. 8-bit files are
// accepted and scaled by 255 instead.
inline Tensor read_gray(const std::string& path) {
    auto f = detail::open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng init failed reading '" + path + "'");
    }
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("undecodable image '" + path + "'");
    }
    png_init_io(png, f.get());
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unsupported PNG layout (want 8/16-bit grayscale): '" + path + "'");
    }
    if (depth == 16) png_set_swap(png);  // PNG is big-endian on disk
    png_read_update_info(png, info);

    const std::size_t row_bytes = png_get_rowbytes(png, info);
    std::vector<std::uint8_t> raw(row_bytes * h);
    row_ptrs.resize(h);
    for (png_uint_32 r = 0; r < h; ++r) row_ptrs[r] = raw.data() + r * row_bytes;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor out({static_cast<int>(h), static_cast<int>(w)});
    if (depth == 16) {
        const auto* px = reinterpret_cast<const std::uint16_t*>(raw.data());
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = px[i] / 65535.0;
    } else {
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = raw[i] / 255.0;
    }
    return out;
}

inline void write_gray16(const std::string& path, const Tensor& image) {
    if (image.rank() != 2) throw std::invalid_argument("write_gray16: expects a 2-D image");
    auto f = detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng init failed writing '" + path + "'");
    }
    const int h = image.dim(0), w = image.dim(1);
    std::vector<std::uint16_t> px(image.numel());
    for (std::size_t i = 0; i < image.numel(); ++i) {
        double v = image[i];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        px[i] = static_cast<std::uint16_t>(v * 65535.0 + 0.5);
    }
    std::vector<png_bytep> row_ptrs(h);
    for (int r = 0; r < h; ++r) row_ptrs[r] = reinterpret_cast<png_bytep>(px.data() + static_cast<std::size_t>(r) * w);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write failed for '" + path + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_set_swap(png);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// 8-bit mask file: stored >= 128 binarizes to 1.
inline Mask read_mask(const std::string& path) {
    Tensor g = read_gray(path);
    Mask m(g.dim(0), g.dim(1));
    for (std::size_t i = 0; i < g.numel(); ++i) m.v[i] = g[i] >= 128.0 / 255.0 - 1e-12 ? 1 : 0;
    return m;
}

inline void write_mask(const std::string& path, const Mask& mask) {
    auto f = detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng init failed writing '" + path + "'");
    }
    std::vector<std::uint8_t> px(mask.numel());
    for (std::size_t i = 0; i < mask.numel(); ++i) px[i] = mask.v[i] ? 255 : 0;
    std::vector<png_bytep> row_ptrs(mask.height);
    for (int r = 0; r < mask.height; ++r) row_ptrs[r] = px.data() + static_cast<std::size_t>(r) * mask.width;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write failed for '" + path + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, mask.width, mask.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Interleaved RGB8 buffer, used by the overlay renderer.
inline void write_rgb8(const std::string& path, int height, int width,
                       const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(height) * width * 3)
        throw std::invalid_argument("write_rgb8: buffer size mismatch");
    auto f = detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng init failed writing '" + path + "'");
    }
    std::vector<png_bytep> row_ptrs(height);
    for (int r = 0; r < height; ++r)
        row_ptrs[r] = const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(r) * width * 3);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write failed for '" + path + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace mricascade::png_io
