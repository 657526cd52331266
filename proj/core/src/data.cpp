#include "lapflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "lapflow/error.hpp"
#include "lapflow/image_io.hpp"
#include "lapflow/rng.hpp"

namespace lapflow {

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "gaussians") return DatasetKind::gaussians;
  if (name == "checkerboard") return DatasetKind::checkerboard;
  if (name == "textures") return DatasetKind::textures;
  if (name == "png_dir") return DatasetKind::png_dir;
  if (name == "tensor_file") return DatasetKind::tensor_file;
  throw ConfigError("dataset.kind",
                    "unknown dataset '" + std::string(name) +
                        "' (expected gaussians, checkerboard, textures, png_dir or tensor_file)");
}

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::gaussians: return "gaussians";
    case DatasetKind::checkerboard: return "checkerboard";
    case DatasetKind::textures: return "textures";
    case DatasetKind::png_dir: return "png_dir";
    case DatasetKind::tensor_file: return "tensor_file";
  }
  return "gaussians";
}

void DatasetDescriptor::validate() const {
  if (image_size < 2 || (image_size & (image_size - 1)) != 0) {
    throw ConfigError("dataset.image_size", "must be a power of two >= 2");
  }
  if (channels != 1 && channels != 3) throw ConfigError("dataset.channels", "must be 1 or 3");
  const bool file_kind = kind == DatasetKind::png_dir || kind == DatasetKind::tensor_file;
  if (!file_kind && count == 0) throw ConfigError("dataset.count", "must be positive");
  if (file_kind && path.empty()) throw ConfigError("dataset.path", "required for " + to_string(kind));
}

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

std::size_t log2_of(std::size_t n) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < n) ++k;
  return k;
}

Tensor<float> render_gaussians(Rng& rng, std::size_t S, std::size_t C, std::size_t& label) {
  const std::size_t blobs = 1 + static_cast<std::size_t>(rng.uniform_int(3));
  label = blobs - 1;
  struct Blob {
    double cx, cy, sigma, amp;
  };
  std::vector<Blob> bs;
  const double s = static_cast<double>(S);
  for (std::size_t b = 0; b < blobs; ++b) {
    Blob bl;
    bl.cx = (0.15 + 0.7 * rng.uniform()) * s;
    bl.cy = (0.15 + 0.7 * rng.uniform()) * s;
    bl.sigma = (0.06 + 0.14 * rng.uniform()) * s;
    bl.amp = (0.6 + 0.4 * rng.uniform()) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    bs.push_back(bl);
  }
  std::vector<double> gain(C);
  for (auto& g : gain) g = C == 1 ? 1.0 : 0.5 + 0.5 * rng.uniform();
  Tensor<float> x(Shape{C, S, S});
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t i = 0; i < S; ++i) {
      double v = 0.0;
      for (const auto& bl : bs) {
        const double dx = static_cast<double>(i) + 0.5 - bl.cx, dy = static_cast<double>(y) + 0.5 - bl.cy;
        v += bl.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * bl.sigma * bl.sigma));
      }
      for (std::size_t c = 0; c < C; ++c) {
        x(c, y, i) = static_cast<float>(std::clamp(gain[c] * v, -1.0, 1.0));
      }
    }
  }
  return x;
}

Tensor<float> render_checkerboard(Rng& rng, std::size_t S, std::size_t C, std::size_t& label) {
  const std::size_t j = static_cast<std::size_t>(rng.uniform_int(log2_of(S)));
  label = j;
  const std::size_t cell = std::size_t{1} << j;
  const std::size_t ox = static_cast<std::size_t>(rng.uniform_int(cell));
  const std::size_t oy = static_cast<std::size_t>(rng.uniform_int(cell));
  const std::size_t flip = static_cast<std::size_t>(rng.uniform_int(2));
  Tensor<float> x(Shape{C, S, S});
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t i = 0; i < S; ++i) {
      const bool odd = (((i + ox) >> j) + ((y + oy) >> j) + flip) & 1u;
      for (std::size_t c = 0; c < C; ++c) x(c, y, i) = odd ? 1.0f : -1.0f;
    }
  }
  return x;
}

Tensor<float> render_texture(Rng& rng, std::size_t S, std::size_t C, std::size_t& label) {
  const std::size_t comps = 1 + static_cast<std::size_t>(rng.uniform_int(3));
  label = comps - 1;
  const double s = static_cast<double>(S);
  const double fmax = std::max(1.0, s / 4.0);
  struct Wave {
    double fx, fy, phase;
  };
  std::vector<Wave> ws;
  for (std::size_t k = 0; k < comps; ++k) {
    const double f = 1.0 + (fmax - 1.0) * rng.uniform();
    const double theta = std::numbers::pi * rng.uniform();
    ws.push_back({f * std::cos(theta), f * std::sin(theta), two_pi * rng.uniform()});
  }
  std::vector<double> shift(C);
  for (auto& p : shift) p = C == 1 ? 0.0 : two_pi * rng.uniform();
  Tensor<float> x(Shape{C, S, S});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < S; ++y) {
      for (std::size_t i = 0; i < S; ++i) {
        double v = 0.0;
        for (const auto& w : ws) {
          v += std::cos(two_pi * (w.fx * static_cast<double>(i) + w.fy * static_cast<double>(y)) / s +
                        w.phase + shift[c]);
        }
        x(c, y, i) = static_cast<float>(v / static_cast<double>(comps));
      }
    }
  }
  return x;
}

// Weights of the source cells [k*r, (k+1)*r) overlapping output cell o.
void resample_axis(std::size_t src, std::size_t dst, std::size_t offset,
                   std::vector<std::vector<std::pair<std::size_t, double>>>& taps) {
  taps.assign(dst, {});
  const double r = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t o = 0; o < dst; ++o) {
    const double a = static_cast<double>(o) * r, b = a + r;
    for (std::size_t k = static_cast<std::size_t>(a); static_cast<double>(k) < b && k < src; ++k) {
      const double w = std::min(b, static_cast<double>(k + 1)) - std::max(a, static_cast<double>(k));
      if (w > 0.0) taps[o].push_back({k + offset, w / r});
    }
  }
}

Dataset load_png_dir(const DatasetDescriptor& d) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(d.path)) throw std::runtime_error(d.path + ": not a directory");
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(d.path)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error(d.path + ": no PNG files");
  if (d.count > 0 && d.count < files.size()) files.resize(d.count);
  Dataset out;
  for (const auto& f : files) {
    const ImageU8 img = read_png(f);
    if (img.channels != d.channels) {
      throw DimensionError(f + ": has " + std::to_string(img.channels) + " channels, expected " +
                           std::to_string(d.channels));
    }
    out.images.push_back(crop_resize(from_u8(img), d.image_size));
    out.labels.push_back(std::nullopt);
  }
  return out;
}

template <typename V>
void put(std::ofstream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::ifstream& is, const std::string& path) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) {
    throw std::runtime_error(path + ": truncated tensor file");
  }
  return v;
}

}  // namespace

Tensor<float> crop_resize(const Tensor<float>& image, std::size_t size) {
  if (image.rank() != 3) throw DimensionError("crop_resize: expected C x H x W");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const std::size_t side = std::min(H, W);
  const std::size_t y0 = (H - side) / 2, x0 = (W - side) / 2;
  std::vector<std::vector<std::pair<std::size_t, double>>> ty, tx;
  resample_axis(side, size, y0, ty);
  resample_axis(side, size, x0, tx);
  Tensor<float> out(Shape{C, size, size});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t oy = 0; oy < size; ++oy) {
      for (std::size_t ox = 0; ox < size; ++ox) {
        double acc = 0.0;
        for (const auto& [yy, wy] : ty[oy])
          for (const auto& [xx, wx] : tx[ox]) acc += wy * wx * static_cast<double>(image(c, yy, xx));
        out(c, oy, ox) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Dataset gen_dataset(const DatasetDescriptor& d) {
  d.validate();
  if (d.kind == DatasetKind::png_dir) return load_png_dir(d);
  if (d.kind == DatasetKind::tensor_file) {
    Dataset data = load_tensor_file(d.path);
    if (data.images.front().shape() != Shape{d.channels, d.image_size, d.image_size}) {
      throw DimensionError(d.path + ": images are " + shape_str(data.images.front().shape()) +
                           ", dataset expects " + std::to_string(d.channels) + "x" +
                           std::to_string(d.image_size) + "x" + std::to_string(d.image_size));
    }
    if (d.count > 0 && d.count < data.size()) {
      data.images.resize(d.count);
      data.labels.resize(d.count);
    }
    return data;
  }
  Dataset out;
  const Rng root = Rng(d.seed).stream(to_string(d.kind));
  out.num_classes = d.kind == DatasetKind::checkerboard ? log2_of(d.image_size) : 3;
  for (std::size_t i = 0; i < d.count; ++i) {
    Rng rng = root.substream(i);
    std::size_t label = 0;
    switch (d.kind) {
      case DatasetKind::gaussians:
        out.images.push_back(render_gaussians(rng, d.image_size, d.channels, label));
        break;
      case DatasetKind::checkerboard:
        out.images.push_back(render_checkerboard(rng, d.image_size, d.channels, label));
        break;
      default:
        out.images.push_back(render_texture(rng, d.image_size, d.channels, label));
        break;
    }
    out.labels.push_back(label);
  }
  return out;
}

void save_tensor_file(const std::string& path, const Dataset& data) {
  if (data.images.empty()) throw DimensionError(path + ": no images to save");
  const Shape s = data.images.front().shape();
  if (s.size() != 3) throw DimensionError(path + ": expected C x H x W images");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(path + ": cannot open for writing");
  const bool labels = std::any_of(data.labels.begin(), data.labels.end(),
                                  [](const auto& l) { return l.has_value(); });
  os.write("LAPD", 4);
  put<std::uint32_t>(os, 1);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(data.images.size()));
  for (std::size_t v : s) put<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  put<std::uint32_t>(os, labels ? 1u : 0u);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(data.num_classes));
  for (const auto& img : data.images) {
    require_same_shape(s, img.shape(), "save_tensor_file");
    os.write(reinterpret_cast<const char*>(img.data().data()),
             static_cast<std::streamsize>(img.size() * sizeof(float)));
  }
  if (labels) {
    for (std::size_t i = 0; i < data.images.size(); ++i) {
      const auto& l = i < data.labels.size() ? data.labels[i] : std::nullopt;
      put<std::uint32_t>(os, l ? static_cast<std::uint32_t>(*l) : 0xFFFFFFFFu);
    }
  }
  if (!os) throw std::runtime_error(path + ": write failed");
}

Dataset load_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error(path + ": cannot open for reading");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "LAPD", 4) != 0) {
    throw std::runtime_error(path + ": not a LAPD tensor file");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != 1) throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
  const std::size_t n = get<std::uint32_t>(is, path);
  const std::size_t c = get<std::uint32_t>(is, path);
  const std::size_t h = get<std::uint32_t>(is, path);
  const std::size_t w = get<std::uint32_t>(is, path);
  const bool labels = get<std::uint32_t>(is, path) != 0;
  Dataset out;
  out.num_classes = get<std::uint32_t>(is, path);
  if (n == 0) throw std::runtime_error(path + ": empty tensor file");
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<float> img(Shape{c, h, w});
    if (!is.read(reinterpret_cast<char*>(img.data().data()),
                 static_cast<std::streamsize>(img.size() * sizeof(float)))) {
      throw std::runtime_error(path + ": truncated tensor file");
    }
    out.images.push_back(std::move(img));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!labels) {
      out.labels.push_back(std::nullopt);
      continue;
    }
    const auto l = get<std::uint32_t>(is, path);
    out.labels.push_back(l == 0xFFFFFFFFu ? std::nullopt : std::optional<std::size_t>(l));
  }
  return out;
}

}  // namespace lapflow
