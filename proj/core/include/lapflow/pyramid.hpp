#pragma once

#include <cstddef>
#include <vector>

#include "lapflow/rng.hpp"
#include "lapflow/tape.hpp"
#include "lapflow/tensor.hpp"

namespace lapflow {

/// Laplacian pyramid of a C x H x W image. levels[0] is the finest residual,
/// levels[K-1] the coarse base; level k is C x (H/2^k) x (W/2^k).
template <typename T>
struct Pyramid {
  std::vector<Tensor<T>> levels;

  std::size_t scales() const noexcept { return levels.size(); }
};

/// 2x2 average pooling. H and W must be even.
template <typename T> Tensor<T> down(const Tensor<T>& x);
/// Nearest-neighbour 2x upsampling.
template <typename T> Tensor<T> up(const Tensor<T>& x);
/// Average pooling by `factor` (a power of two); down_by(x, 1) == x.
template <typename T> Tensor<T> down_by(const Tensor<T>& x, std::size_t factor);
template <typename T> Tensor<T> up_by(const Tensor<T>& x, std::size_t factor);

/// Largest admissible scale count for an H x W image: every level must keep
/// integer size, so 2^(K-1) divides H and W.
std::size_t max_scales(std::size_t height, std::size_t width);

template <typename T> Pyramid<T> decompose(const Tensor<T>& x, std::size_t scales);
template <typename T> Tensor<T> reconstruct(const Pyramid<T>& pyramid);

/// Pyramid of a fresh standard-normal image. By default the single draw is
/// decomposed as-is, so level k carries its natural (non-unit) variance; with
/// `independent_scale_noise` each level is an independent unit normal instead.
template <typename T>
Pyramid<T> noise_pyramid(Rng& rng, const Shape& shape, std::size_t scales,
                         bool independent_scale_noise = false);

namespace ops {
/// Differentiable 2x2 average pooling on a C x H x W value.
template <typename T> Var<T> down(Var<T> x);
/// Differentiable nearest upsampling; the backward pass sums each 2x2 block.
template <typename T> Var<T> up(Var<T> x);
}  // namespace ops

}  // namespace lapflow
