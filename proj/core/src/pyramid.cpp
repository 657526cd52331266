#include "lapflow/pyramid.hpp"

#include <bit>
#include <string>

namespace lapflow {
namespace {

void require_image(const Shape& s, const char* what) {
  if (s.size() != 3) {
    throw DimensionError(std::string(what) + ": expected C x H x W, got " + shape_str(s));
  }
}

template <typename T>
void down_into(const T* in, T* out, std::size_t c, std::size_t h, std::size_t w) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = in + ch * h * w;
    T* dst = out + ch * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const T* r0 = src + (2 * y) * w;
      const T* r1 = r0 + w;
      for (std::size_t x = 0; x < ow; ++x) {
        dst[y * ow + x] = T(0.25) * ((r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]));
      }
    }
  }
}

template <typename T>
void up_into(const T* in, T* out, std::size_t c, std::size_t h, std::size_t w) {
  const std::size_t ow = 2 * w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* src = in + ch * h * w;
    T* dst = out + ch * 4 * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      T* r0 = dst + (2 * y) * ow;
      T* r1 = r0 + ow;
      for (std::size_t x = 0; x < w; ++x) {
        const T v = src[y * w + x];
        r0[2 * x] = r0[2 * x + 1] = r1[2 * x] = r1[2 * x + 1] = v;
      }
    }
  }
}

std::size_t log2_exact(std::size_t factor) {
  if (factor == 0 || !std::has_single_bit(factor)) {
    throw DomainError("pooling factor " + std::to_string(factor) + " is not a power of two");
  }
  return static_cast<std::size_t>(std::countr_zero(factor));
}

}  // namespace

template <typename T>
Tensor<T> down(const Tensor<T>& x) {
  require_image(x.shape(), "down");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("down: odd spatial size " + shape_str(x.shape()));
  }
  Tensor<T> out({c, h / 2, w / 2});
  down_into(x.data().data(), out.data().data(), c, h, w);
  return out;
}

template <typename T>
Tensor<T> up(const Tensor<T>& x) {
  require_image(x.shape(), "up");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out({c, 2 * h, 2 * w});
  up_into(x.data().data(), out.data().data(), c, h, w);
  return out;
}

template <typename T>
Tensor<T> down_by(const Tensor<T>& x, std::size_t factor) {
  Tensor<T> out = x;
  for (std::size_t i = log2_exact(factor); i > 0; --i) out = down(out);
  return out;
}

template <typename T>
Tensor<T> up_by(const Tensor<T>& x, std::size_t factor) {
  Tensor<T> out = x;
  for (std::size_t i = log2_exact(factor); i > 0; --i) out = up(out);
  return out;
}

std::size_t max_scales(std::size_t height, std::size_t width) {
  std::size_t k = 1;
  while (height % 2 == 0 && width % 2 == 0 && height > 1 && width > 1) {
    height /= 2;
    width /= 2;
    ++k;
  }
  return k;
}

template <typename T>
Pyramid<T> decompose(const Tensor<T>& x, std::size_t scales) {
  require_image(x.shape(), "decompose");
  if (scales == 0) throw DomainError("decompose: scale count must be at least 1");
  const std::size_t limit = max_scales(x.dim(1), x.dim(2));
  if (scales > limit) {
    throw DomainError("decompose: " + std::to_string(scales) + " scales requested but " +
                      shape_str(x.shape()) + " supports at most " + std::to_string(limit));
  }
  // gaussian[k] = Down^k(x)
  std::vector<Tensor<T>> gaussian{x};
  for (std::size_t k = 1; k < scales; ++k) gaussian.push_back(down(gaussian.back()));
  Pyramid<T> p;
  p.levels.resize(scales);
  p.levels[scales - 1] = gaussian[scales - 1];
  for (std::size_t k = 0; k + 1 < scales; ++k) p.levels[k] = gaussian[k] - up(gaussian[k + 1]);
  return p;
}

template <typename T>
Tensor<T> reconstruct(const Pyramid<T>& pyramid) {
  if (pyramid.levels.empty()) throw DimensionError("reconstruct: empty pyramid");
  Tensor<T> x = pyramid.levels.back();
  for (std::size_t k = pyramid.levels.size() - 1; k-- > 0;) {
    const Tensor<T>& level = pyramid.levels[k];
    require_image(level.shape(), "reconstruct");
    if (level.shape() != Shape{x.dim(0), 2 * x.dim(1), 2 * x.dim(2)}) {
      throw DimensionError("reconstruct: level " + std::to_string(k) + " has shape " +
                           shape_str(level.shape()) + ", expected twice " + shape_str(x.shape()));
    }
    Tensor<T> u = up(x);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += level[i];
    x = std::move(u);
  }
  return x;
}

template <typename T>
Pyramid<T> noise_pyramid(Rng& rng, const Shape& shape, std::size_t scales,
                         bool independent_scale_noise) {
  require_image(shape, "noise_pyramid");
  Pyramid<T> p = decompose(rng.normal_tensor<T>(shape), scales);
  if (independent_scale_noise) {
    for (auto& level : p.levels) level = rng.normal_tensor<T>(level.shape());
  }
  return p;
}

namespace ops {

template <typename T>
Var<T> down(Var<T> x) {
  Tensor<T> out = lapflow::down(x.value());
  const Shape in_shape = x.shape();
  return x.tape->record(std::move(out), {x}, [x, in_shape](Tape<T>& t, std::size_t self) {
    // Adjoint of averaging: each input pixel receives a quarter of its block's gradient.
    const Tensor<T> g = lapflow::up(t.grad(self));
    axpy(T(0.25), g, t.accumulator(x.id));
  });
}

template <typename T>
Var<T> up(Var<T> x) {
  Tensor<T> out = lapflow::up(x.value());
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const Tensor<T> g = lapflow::down(t.grad(self));
    axpy(T(4), g, t.accumulator(x.id));
  });
}

}  // namespace ops

#define LAPFLOW_INSTANTIATE_PYRAMID(T)                                                   \
  template Tensor<T> down(const Tensor<T>&);                                             \
  template Tensor<T> up(const Tensor<T>&);                                               \
  template Tensor<T> down_by(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> up_by(const Tensor<T>&, std::size_t);                               \
  template Pyramid<T> decompose(const Tensor<T>&, std::size_t);                          \
  template Tensor<T> reconstruct(const Pyramid<T>&);                                     \
  template Pyramid<T> noise_pyramid(Rng&, const Shape&, std::size_t, bool);              \
  template Var<T> ops::down(Var<T>);                                                     \
  template Var<T> ops::up(Var<T>);

LAPFLOW_INSTANTIATE_PYRAMID(float)
LAPFLOW_INSTANTIATE_PYRAMID(double)

}  // namespace lapflow
