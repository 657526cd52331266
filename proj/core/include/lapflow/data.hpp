#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lapflow/tensor.hpp"

namespace lapflow {

enum class DatasetKind { gaussians, checkerboard, textures, png_dir, tensor_file };

DatasetKind parse_dataset_kind(std::string_view name);
std::string to_string(DatasetKind kind);

struct DatasetDescriptor {
  DatasetKind kind = DatasetKind::gaussians;
  std::size_t image_size = 16;
  std::size_t channels = 1;
  /// Number of images; 0 loads every file for png_dir and tensor_file.
  std::size_t count = 4096;
  std::uint64_t seed = 0;
  /// Directory (png_dir) or file (tensor_file).
  std::string path;

  void validate() const;
};

/// Images in [-1, 1], C x S x S. Synthetic kinds carry class labels:
/// gaussians by blob count (3 classes), checkerboard by cell-size exponent
/// (log2(S) classes), textures by component count (3 classes).
struct Dataset {
  std::vector<Tensor<float>> images;
  std::vector<std::optional<std::size_t>> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return images.size(); }
};

/// Image i of a synthetic kind draws from Rng(seed).stream(kind).substream(i).
Dataset gen_dataset(const DatasetDescriptor& desc);

/// Center crop to a square, then area-weighted (box filter) resampling.
Tensor<float> crop_resize(const Tensor<float>& image, std::size_t size);

/// "LAPD", u32 version, u32 count, channels, height, width, u32 has_labels,
/// u32 num_classes, then count*C*H*W f32 values and, with labels, one u32 per image
/// (0xFFFFFFFF for none). Little-endian.
void save_tensor_file(const std::string& path, const Dataset& data);
Dataset load_tensor_file(const std::string& path);

}  // namespace lapflow
