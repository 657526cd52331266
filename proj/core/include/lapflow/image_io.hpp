#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lapflow/tensor.hpp"

namespace lapflow {

/// 8-bit image, channel-interleaved rows (gray or RGB).
struct ImageU8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;
};

void write_png(const std::string& path, const ImageU8& image);
/// Palette images expand to RGB, 16-bit samples are reduced to 8 bits and
/// alpha is dropped.
ImageU8 read_png(const std::string& path);

/// [-1, 1] -> [0, 255] with rounding and clamping, and back.
ImageU8 to_u8(const Tensor<float>& chw);
Tensor<float> from_u8(const ImageU8& image);

/// Images tiled row-major in a `cols`-wide grid with `pad` pixels of -1.
Tensor<float> make_grid(std::span<const Tensor<float>> images, std::size_t cols, std::size_t pad = 1);

}  // namespace lapflow
