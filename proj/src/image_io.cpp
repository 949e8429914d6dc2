#include "mgvq/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <string>
#include <memory>
#include <vector>

namespace mgvq {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
    auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
    if (buf) *buf = msg;
    png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

nd::Tensor read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ImageError("cannot open " + path.string());
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw ImageError(path.string() + " is not a PNG file");

    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw ImageError("libpng: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw ImageError("libpng: out of memory");
    }

    std::vector<unsigned char> raw;
    png_uint_32 width = 0, height = 0;
    int depth = 0;
    std::size_t rowbytes = 0;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError("cannot decode " + path.string() + ": " + err);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if ((color & PNG_COLOR_MASK_ALPHA) || png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);  // native little-endian shorts
    png_read_update_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    depth = png_get_bit_depth(png, info);
    rowbytes = png_get_rowbytes(png, info);
    if (png_get_channels(png, info) != 3) png_error(png, "unsupported channel layout");
    raw.resize(rowbytes * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = raw.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (width == 0 || height == 0) throw ImageError(path.string() + " has no pixels");
    std::vector<float> data(static_cast<std::size_t>(width) * height * 3);
    const bool wide = depth == 16;
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t i = 0; i < std::size_t{width} * 3; ++i) {
            float v;
            if (wide) {
                std::uint16_t s;
                std::memcpy(&s, raw.data() + y * rowbytes + i * 2, 2);
                v = static_cast<float>(s / 65535.0);
            } else {
                v = static_cast<float>(raw[y * rowbytes + i] / 255.0);
            }
            data[y * width * 3 + i] = v;
        }
    return nd::Tensor({height, width, 3}, std::move(data));
}

void write_png(const std::filesystem::path& path, const nd::Tensor& image, int bit_depth) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ImageError("write_png: expected H x W x 3, got " + nd::shape_str(image.shape()));
    if (bit_depth != 8 && bit_depth != 16) throw ImageError("write_png: bit depth must be 8 or 16");
    const std::size_t H = image.dim(0), W = image.dim(1);
    const std::size_t bytes = bit_depth / 8;
    const double peak = bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<unsigned char> raw(H * W * 3 * bytes);
    for (std::size_t i = 0; i < H * W * 3; ++i) {
        const double v = std::clamp(static_cast<double>(image.data()[i]), 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::lround(v * peak));
        if (bytes == 2) {
            raw[2 * i] = static_cast<unsigned char>(q >> 8);  // PNG is big-endian
            raw[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
        } else {
            raw[i] = static_cast<unsigned char>(q);
        }
    }

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw ImageError("cannot create " + path.string());
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw ImageError("libpng: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw ImageError("libpng: out of memory");
    }
    std::vector<png_bytep> rows(H);
    for (std::size_t y = 0; y < H; ++y) rows[y] = raw.data() + y * W * 3 * bytes;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageError("cannot encode " + path.string() + ": " + err);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), bit_depth, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fflush(fp.get()) != 0) throw ImageError("write failed for " + path.string());
}

namespace {

nd::Tensor crop(const nd::Tensor& image, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
    const std::size_t W = image.dim(1);
    std::vector<float> out(h * w * 3);
    for (std::size_t y = 0; y < h; ++y)
        std::copy_n(image.data().data() + ((top + y) * W + left) * 3, w * 3, out.data() + y * w * 3);
    return nd::Tensor({h, w, 3}, std::move(out));
}

}  // namespace

nd::Tensor center_crop_to_multiple(const nd::Tensor& image, std::size_t multiple) {
    const std::size_t H = image.dim(0), W = image.dim(1);
    const std::size_t h = H / multiple * multiple, w = W / multiple * multiple;
    if (h == 0 || w == 0)
        throw ImageError("image " + std::to_string(H) + "x" + std::to_string(W) + " is smaller than one " +
                         std::to_string(multiple) + "-pixel patch");
    if (h == H && w == W) return image;
    return crop(image, (H - h) / 2, (W - w) / 2, h, w);
}

nd::Tensor square_resize(const nd::Tensor& image, std::size_t size) {
    const std::size_t H = image.dim(0), W = image.dim(1), side = std::min(H, W);
    nd::Tensor sq = (H == W) ? image : crop(image, (H - side) / 2, (W - side) / 2, side, side);
    if (side == size) return sq;
    std::vector<float> out(size * size * 3);
    const double scale = static_cast<double>(side) / static_cast<double>(size);
    auto px = [&](std::size_t y, std::size_t x, std::size_t c) {
        return static_cast<double>(sq.data()[(y * side + x) * 3 + c]);
    };
    for (std::size_t y = 0; y < size; ++y) {
        const double sy = std::clamp((y + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
        const auto y0 = static_cast<std::size_t>(sy);
        const std::size_t y1 = std::min(y0 + 1, side - 1);
        const double fy = sy - y0;
        for (std::size_t x = 0; x < size; ++x) {
            const double sx = std::clamp((x + 0.5) * scale - 0.5, 0.0, static_cast<double>(side - 1));
            const auto x0 = static_cast<std::size_t>(sx);
            const std::size_t x1 = std::min(x0 + 1, side - 1);
            const double fx = sx - x0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = px(y0, x0, c) * (1 - fx) + px(y0, x1, c) * fx;
                const double bot = px(y1, x0, c) * (1 - fx) + px(y1, x1, c) * fx;
                out[(y * size + x) * 3 + c] = static_cast<float>(top * (1 - fy) + bot * fy);
            }
        }
    }
    return nd::Tensor({size, size, 3}, std::move(out));
}

nd::Tensor stack_images(std::span<const nd::Tensor> images) {
    if (images.empty()) throw ImageError("stack_images: no images");
    const nd::Shape& s = images.front().shape();
    std::vector<float> data;
    data.reserve(images.size() * images.front().numel());
    for (const auto& im : images) {
        if (im.shape() != s) throw ImageError("stack_images: images differ in shape");
        data.insert(data.end(), im.data().begin(), im.data().end());
    }
    return nd::Tensor({images.size(), s[0], s[1], s[2]}, std::move(data));
}

nd::Tensor unstack_image(const nd::Tensor& batch, std::size_t i) {
    const std::size_t n = batch.numel() / batch.dim(0);
    std::vector<float> data(batch.data().begin() + static_cast<std::ptrdiff_t>(i * n),
                            batch.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    return nd::Tensor({batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(data));
}

}  // namespace mgvq
