#include "lapflow/analysis.hpp"

#include <algorithm>
#include <cmath>

#include <fftw3.h>

#include "lapflow/error.hpp"

namespace lapflow {

CostReport attention_cost(std::size_t n_tokens, std::size_t width, const ScheduleSpec& spec) {
  spec.validate();
  const std::size_t K = spec.scales;
  const std::size_t div = std::size_t{1} << (2 * (K - 1));
  if (n_tokens == 0 || n_tokens % div != 0) {
    throw DomainError("attention_cost: " + std::to_string(n_tokens) +
                      " tokens not divisible by 4^" + std::to_string(K - 1));
  }
  CostReport r;
  r.n_tokens = n_tokens;
  r.width = width;
  const double N = static_cast<double>(n_tokens), d = static_cast<double>(width);
  for (std::size_t j = 0; j < K; ++j) {
    double nj = 0.0;
    for (std::size_t k = j; k < K; ++k) nj += N / std::pow(4.0, static_cast<double>(k));
    const double dt = spec.critical(j) - spec.critical(j + 1);
    r.tokens.push_back(nj);
    r.dt.push_back(dt);
    r.cost += dt * nj * nj * d;
  }
  r.ratio = r.cost / (N * N * d);
  return r;
}

FlopReport model_flops(const ModelConfig& cf, const ScheduleSpec& spec) {
  cf.validate();
  spec.validate();
  const double d = static_cast<double>(cf.width);
  const double pd = static_cast<double>(cf.patch_dim());
  const double hidden = static_cast<double>(cf.mlp_ratio) * d;
  const double depth = static_cast<double>(cf.depth);
  const bool staged = cf.num_stages > 0;
  if (staged && cf.num_stages != spec.scales) {
    throw DimensionError("model_flops: " + std::to_string(cf.num_stages) +
                         " stage tokens for a " + std::to_string(spec.scales) + "-stage schedule");
  }
  if (!staged && cf.scales != spec.scales) {
    throw DimensionError("model_flops: model and schedule disagree on the scale count");
  }
  FlopReport rep;
  const std::size_t segs = spec.scales;
  for (std::size_t j = 0; j < segs; ++j) {
    SegmentFlops s;
    s.segment = j;
    s.dt = spec.critical(j) - spec.critical(j + 1);
    // Active scales and their token counts.
    std::vector<double> n_scale;
    if (staged) {
      const double side = static_cast<double>((cf.image_size >> j) / cf.patch);
      n_scale.push_back(side * side);
    } else {
      for (std::size_t k = j; k < cf.scales; ++k) {
        const double side = static_cast<double>((cf.image_size >> k) / cf.patch);
        n_scale.push_back(side * side);
      }
    }
    double n_img = 0.0;
    for (double n : n_scale) n_img += n;
    const double n_all = n_img + static_cast<double>(cf.cond_tokens());
    s.tokens = static_cast<std::size_t>(n_all);
    const double n_active = static_cast<double>(n_scale.size());

    s.embed = static_cast<double>(cf.freq_dim) * d + d * d + n_img * pd * d +
              n_active * (depth * 6.0 * d * d + 2.0 * d * d);
    s.projection = depth * n_all * 4.0 * d * d;
    s.attention = depth * 2.0 * n_all * n_all * d;
    s.ffn = depth * n_all * 2.0 * d * hidden;
    s.decode = n_img * d * pd;
    rep.time_weighted_macs += s.dt * s.macs();
    rep.time_weighted_attention += s.dt * s.attention;
    rep.segments.push_back(s);
  }
  return rep;
}

namespace {

std::vector<double> project(std::span<const Tensor<float>> set, const std::vector<double>& dir) {
  std::vector<double> out;
  out.reserve(set.size());
  for (const auto& x : set) {
    double s = 0.0;
    for (std::size_t i = 0; i < dir.size(); ++i) s += dir[i] * static_cast<double>(x[i]);
    out.push_back(s);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Integral of |F_a^{-1}(u) - F_b^{-1}(u)| over u in [0, 1] for sorted samples.
double w1_sorted(const std::vector<double>& a, const std::vector<double>& b) {
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double u = 0.0, total = 0.0;
  while (i < a.size() && j < b.size()) {
    const double ua = static_cast<double>(i + 1) / na, ub = static_cast<double>(j + 1) / nb;
    const double next = std::min(ua, ub);
    total += (next - u) * std::abs(a[i] - b[j]);
    u = next;
    if (ua <= next) ++i;
    if (ub <= next) ++j;
  }
  return total;
}

}  // namespace

double sliced_wasserstein(std::span<const Tensor<float>> a, std::span<const Tensor<float>> b,
                          std::size_t n_proj, const Rng& rng) {
  if (a.empty() || b.empty()) throw DimensionError("sliced_wasserstein: empty sample set");
  if (a.size() < kMinMetricSamples || b.size() < kMinMetricSamples) {
    throw DomainError("sliced_wasserstein: need at least " + std::to_string(kMinMetricSamples) +
                      " samples per set, got " + std::to_string(a.size()) + " and " +
                      std::to_string(b.size()));
  }
  if (n_proj == 0) throw DomainError("sliced_wasserstein: need at least one projection");
  const Shape& shape = a.front().shape();
  for (auto set : {a, b}) {
    for (const auto& x : set) require_same_shape(shape, x.shape(), "sliced_wasserstein");
  }
  const std::size_t dim = a.front().size();
  double total = 0.0;
  for (std::size_t p = 0; p < n_proj; ++p) {
    Rng r = rng.substream(p);
    std::vector<double> dir(dim);
    double norm = 0.0;
    for (auto& v : dir) {
      v = r.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : dir) v /= norm;
    total += w1_sorted(project(a, dir), project(b, dir));
  }
  return total / static_cast<double>(n_proj);
}

std::vector<double> spectrum_stats(std::span<const Tensor<float>> images) {
  if (images.empty()) return {};
  const Shape& shape = images.front().shape();
  if (shape.size() != 3 || shape[1] != shape[2] || shape[1] < 2 ||
      (shape[1] & (shape[1] - 1)) != 0) {
    throw DimensionError("spectrum_stats: expected square C x n x n images with n a power of two, got " +
                         shape_str(shape));
  }
  const std::size_t C = shape[0], n = shape[1];
  std::size_t bands = 0;
  while ((std::size_t{1} << bands) < n) ++bands;

  auto band_of = [&](std::size_t fy, std::size_t fx) {
    const std::size_t ry = std::min(fy, n - fy), rx = std::min(fx, n - fx);
    const std::size_t r = std::max(ry, rx);
    if (r == 0) return std::size_t{0};
    std::size_t b = 1;
    while ((std::size_t{1} << b) <= r) ++b;
    return std::min(b, bands - 1);
  };
  std::vector<std::size_t> band(n * n);
  std::vector<double> count(bands, 0.0);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      band[y * n + x] = band_of(y, x);
      count[band[y * n + x]] += 1.0;
    }
  }

  // Real-to-complex transform: the half plane fx in [0, n/2] plus Hermitian
  // symmetry covers the full spectrum, and band_of is symmetric under the mirror.
  const std::size_t half = n / 2 + 1;
  std::vector<double> in(n * n);
  fftw_complex* out = fftw_alloc_complex(n * half);
  const int ni = static_cast<int>(n);
  fftw_plan plan = fftw_plan_dft_r2c_2d(ni, ni, in.data(), out, FFTW_ESTIMATE);
  std::vector<double> power(bands, 0.0);
  for (const auto& img : images) {
    require_same_shape(shape, img.shape(), "spectrum_stats");
    for (std::size_t c = 0; c < C; ++c) {
      const float* px = img.data().data() + c * n * n;
      for (std::size_t i = 0; i < n * n; ++i) in[i] = static_cast<double>(px[i]);
      fftw_execute(plan);
      for (std::size_t fy = 0; fy < n; ++fy) {
        for (std::size_t fx = 0; fx < half; ++fx) {
          const double* z = out[fy * half + fx];
          const double mult = (fx == 0 || fx == n / 2) ? 1.0 : 2.0;
          power[band[fy * n + fx]] += mult * (z[0] * z[0] + z[1] * z[1]);
        }
      }
    }
  }
  fftw_destroy_plan(plan);
  fftw_free(out);
  const double norm = static_cast<double>(images.size() * C) * static_cast<double>(n * n);
  for (std::size_t b = 0; b < bands; ++b) power[b] /= norm * count[b];
  return power;
}

}  // namespace lapflow
