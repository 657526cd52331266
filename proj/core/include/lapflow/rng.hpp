#pragma once

#include <cstdint>
#include <string_view>

#include "lapflow/tensor.hpp"

namespace lapflow {

/// Counter-based random source. Draw i of a stream is a pure function of
/// (key, i), so results never depend on evaluation order or thread count.
/// Named and indexed sub-streams derive fresh keys from the parent key.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  Rng stream(std::string_view name) const;
  Rng substream(std::uint64_t index) const;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Raw 64 bits at an absolute draw index; does not advance the counter.
  std::uint64_t bits_at(std::uint64_t index) const noexcept;

  std::uint64_t next_u64() noexcept { return bits_at(counter_++); }
  /// Uniform on [0, 1).
  double uniform() noexcept;
  /// Uniform on [0, 1], both endpoints reachable.
  double uniform_closed() noexcept;
  /// Uniform integer on {0, ..., n-1}.
  std::uint64_t uniform_int(std::uint64_t n);
  double normal() noexcept;

  template <typename T>
  Tensor<T> normal_tensor(Shape shape);

  template <typename T>
  Tensor<T> uniform_tensor(Shape shape, T lo, T hi);

 private:
  Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace lapflow
