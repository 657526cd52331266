#pragma once

#include <cstddef>
#include <span>

#include "lapflow/tape.hpp"

// Differentiable primitives. Rank>=2 tensors are treated as [rows x last_dim];
// "rowvec" arguments hold exactly last_dim values and broadcast over rows.
namespace lapflow::ops {

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);

template <typename T> Var<T> add_rowvec(Var<T> x, Var<T> v);
template <typename T> Var<T> mul_rowvec(Var<T> x, Var<T> v);
/// x * (1 + scale) + shift, the DiT modulation.
template <typename T> Var<T> modulate(Var<T> x, Var<T> shift, Var<T> scale);
/// x + gate * h (gated residual).
template <typename T> Var<T> add_gated(Var<T> x, Var<T> h, Var<T> gate);

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// x W + b; `b` may be an invalid Var for a bias-free projection.
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <typename T> Var<T> transpose(Var<T> a);

/// Affine-free normalisation over the last axis: mean 0, variance 1.
template <typename T> Var<T> layernorm(Var<T> x, T eps = T(1e-6));

/// Row softmax of logits + mask, where mask holds 0 (visible) or -inf (blocked).
/// A row without any visible entry is an error.
template <typename T> Var<T> softmax_masked(Var<T> logits, const Tensor<T>& mask);

/// Multi-head attention over a packed [n x 3d] query/key/value matrix with an
/// additive [n x n] mask. Scores are scaled by 1/sqrt(d/heads).
template <typename T>
Var<T> masked_attention(Var<T> qkv, const Tensor<T>& mask, std::size_t heads);

/// tanh-approximated GELU.
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> silu(Var<T> x);

template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_rows(Var<T> x, std::size_t start, std::size_t count);
template <typename T> Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t count);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
/// Row `row` of a [n x d] table as a [1 x d] tensor.
template <typename T> Var<T> gather_row(Var<T> table, std::size_t row);

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
/// mean((a - b)^2) over all elements.
template <typename T> Var<T> mse(Var<T> a, Var<T> b);
/// sum((a - b)^2) over all elements.
template <typename T> Var<T> sse(Var<T> a, Var<T> b);

}  // namespace lapflow::ops
