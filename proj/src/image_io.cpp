#include "man/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

namespace man {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Tensor read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError(cat("cannot open '", path, "' for reading"));

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw DataError(cat("'", path, "' is not a PNG file"));

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng initialization failed");
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<u8> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(cat("failed to decode PNG '", path, "'"));
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // Normalize everything to 8-bit RGB.
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_uint_32 rowbytes = static_cast<png_uint_32>(png_get_rowbytes(png, info));
    if (rowbytes != 3 * w) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(cat("'", path, "' did not normalize to 8-bit RGB"));
    }
    pixels.resize(static_cast<size_t>(rowbytes) * h);
    row_ptrs.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = pixels.data() + y * rowbytes;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor img(Shape{1, 3, static_cast<i64>(h), static_cast<i64>(w)});
    float* out = img.data();
    const i64 hw = static_cast<i64>(h) * w;
    for (i64 y = 0; y < static_cast<i64>(h); ++y)
        for (i64 x = 0; x < static_cast<i64>(w); ++x) {
            const u8* px = pixels.data() + (y * w + x) * 3;
            const i64 p = y * w + x;
            out[0 * hw + p] = static_cast<float>(px[0]) / 255.0f;
            out[1 * hw + p] = static_cast<float>(px[1]) / 255.0f;
            out[2 * hw + p] = static_cast<float>(px[2]) / 255.0f;
        }
    return img;
}

std::vector<u8> quantize_u8(const Tensor& img) {
    MAN_CHECK(img.defined() && img.shape().n == 1 && img.shape().c == 3,
              "quantize_u8: expected 1x3xHxW image, got ",
              img.defined() ? img.shape().str() : "(undefined)");
    const i64 h = img.shape().h, w = img.shape().w;
    const i64 hw = h * w;
    std::vector<u8> out(static_cast<size_t>(3 * hw));
    const float* d = img.data();
    for (i64 p = 0; p < hw; ++p)
        for (i64 c = 0; c < 3; ++c) {
            float v = d[c * hw + p];
            v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            out[static_cast<size_t>(p * 3 + c)] =
                static_cast<u8>(std::lround(static_cast<double>(v) * 255.0));
        }
    return out;
}

Tensor quantize_roundtrip(const Tensor& img) {
    auto q = quantize_u8(img);
    const i64 h = img.shape().h, w = img.shape().w, hw = h * w;
    Tensor out(img.shape());
    float* d = out.data();
    for (i64 p = 0; p < hw; ++p)
        for (i64 c = 0; c < 3; ++c)
            d[c * hw + p] = static_cast<float>(q[static_cast<size_t>(p * 3 + c)]) / 255.0f;
    return out;
}

void write_png(const std::string& path, const Tensor& img) {
    auto pixels = quantize_u8(img);
    const i64 h = img.shape().h, w = img.shape().w;

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError(cat("cannot open '", path, "' for writing"));
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError(cat("failed to encode PNG '", path, "'"));
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (i64 y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(pixels.data() + y * w * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace man
