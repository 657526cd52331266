#include "lapflow/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "lapflow/error.hpp"

namespace lapflow {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(const std::string& path, const std::string& what) {
  throw std::runtime_error(path + ": " + what);
}

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw DimensionError(path + ": PNG writer supports 1 or 3 channels, got " +
                         std::to_string(img.channels));
  }
  if (img.pixels.size() != img.width * img.height * img.channels || img.width == 0 ||
      img.height == 0) {
    throw DimensionError(path + ": pixel buffer does not match image size");
  }
  File f(std::fopen(path.c_str(), "wb"));
  if (!f) png_fail(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    png_fail(path, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    png_fail(path, "PNG encoding failed");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = img.width * img.channels;
  for (std::size_t y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU8 read_png(const std::string& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) png_fail(path, "cannot open for reading");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    png_fail(path, "not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    png_fail(path, "libpng initialisation failed");
  }
  ImageU8 img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    png_fail(path, "corrupt PNG data");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_strip_16(png);
  bool alpha = (color & PNG_COLOR_MASK_ALPHA) != 0;
  if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(png);
    alpha = true;
  }
  if (alpha) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != img.width * img.channels || (img.channels != 1 && img.channels != 3)) {
    png_destroy_read_struct(&png, &info, nullptr);
    png_fail(path, "unsupported PNG layout");
  }
  img.pixels.resize(stride * img.height);
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

ImageU8 to_u8(const Tensor<float>& x) {
  if (x.rank() != 3) throw DimensionError("to_u8: expected C x H x W, got " + shape_str(x.shape()));
  ImageU8 img;
  img.channels = x.dim(0);
  img.height = x.dim(1);
  img.width = x.dim(2);
  img.pixels.resize(x.size());
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t i = 0; i < img.width; ++i) {
        const double v = (static_cast<double>(x(c, y, i)) + 1.0) * 127.5;
        img.pixels[(y * img.width + i) * img.channels + c] =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return img;
}

Tensor<float> from_u8(const ImageU8& img) {
  Tensor<float> x(Shape{img.channels, img.height, img.width});
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t i = 0; i < img.width; ++i) {
        const double b = img.pixels[(y * img.width + i) * img.channels + c];
        x(c, y, i) = static_cast<float>(b / 127.5 - 1.0);
      }
    }
  }
  return x;
}

Tensor<float> make_grid(std::span<const Tensor<float>> images, std::size_t cols, std::size_t pad) {
  if (images.empty()) throw DimensionError("make_grid: no images");
  if (cols == 0) throw DimensionError("make_grid: zero columns");
  const Shape& s = images.front().shape();
  if (s.size() != 3) throw DimensionError("make_grid: expected C x H x W images");
  cols = std::min(cols, images.size());
  const std::size_t rows = (images.size() + cols - 1) / cols;
  const std::size_t C = s[0], H = s[1], W = s[2];
  Tensor<float> grid(Shape{C, pad + rows * (H + pad), pad + cols * (W + pad)}, -1.0f);
  for (std::size_t n = 0; n < images.size(); ++n) {
    require_same_shape(s, images[n].shape(), "make_grid");
    const std::size_t oy = pad + (n / cols) * (H + pad), ox = pad + (n % cols) * (W + pad);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) grid(c, oy + y, ox + x) = images[n](c, y, x);
  }
  return grid;
}

}  // namespace lapflow
