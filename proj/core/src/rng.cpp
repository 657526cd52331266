#include "lapflow/rng.hpp"

#include <cmath>
#include <numbers>

namespace lapflow {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Box-Muller pair from two raw draws; u1 is mapped to (0, 1] so log() is finite.
std::pair<double, double> box_muller(std::uint64_t b1, std::uint64_t b2) noexcept {
  const double u1 = (static_cast<double>(b1 >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = to_unit(b2);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(a), r * std::sin(a)};
}

}  // namespace

Rng::Rng(std::uint64_t seed) : key_(mix64(seed + kGolden)) {}

Rng Rng::stream(std::string_view name) const {
  return Rng(mix64(key_ ^ mix64(fnv1a(name))), 0);
}

Rng Rng::substream(std::uint64_t index) const {
  return Rng(mix64(key_ + mix64(index ^ 0xA5A5A5A5A5A5A5A5ULL) * kGolden), 0);
}

std::uint64_t Rng::bits_at(std::uint64_t index) const noexcept {
  return mix64(key_ + (index + 1) * kGolden);
}

double Rng::uniform() noexcept { return to_unit(next_u64()); }

double Rng::uniform_closed() noexcept {
  return static_cast<double>(next_u64() >> 11) / static_cast<double>((1ULL << 53) - 1);
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw DomainError("uniform_int: empty range");
  // Reject the low 2^64 mod n values so the remaining range is a multiple of n.
  const std::uint64_t threshold = (std::uint64_t{0} - n) % n;
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x >= threshold) return x % n;
  }
}

double Rng::normal() noexcept {
  const std::uint64_t b1 = next_u64();
  const std::uint64_t b2 = next_u64();
  return box_muller(b1, b2).first;
}

template <typename T>
Tensor<T> Rng::normal_tensor(Shape shape) {
  Tensor<T> out(std::move(shape));
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; i += 2) {
    const std::uint64_t b1 = next_u64();
    const std::uint64_t b2 = next_u64();
    const auto [z0, z1] = box_muller(b1, b2);
    out[i] = static_cast<T>(z0);
    if (i + 1 < n) out[i + 1] = static_cast<T>(z1);
  }
  return out;
}

template <typename T>
Tensor<T> Rng::uniform_tensor(Shape shape, T lo, T hi) {
  Tensor<T> out(std::move(shape));
  for (auto& v : out.storage()) v = static_cast<T>(lo + (hi - lo) * uniform());
  return out;
}

template Tensor<float> Rng::normal_tensor<float>(Shape);
template Tensor<double> Rng::normal_tensor<double>(Shape);
template Tensor<float> Rng::uniform_tensor<float>(Shape, float, float);
template Tensor<double> Rng::uniform_tensor<double>(Shape, double, double);

}  // namespace lapflow
