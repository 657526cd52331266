#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lapflow/model.hpp"
#include "lapflow/rng.hpp"
#include "lapflow/schedule.hpp"
#include "lapflow/tensor.hpp"

namespace lapflow {

/// Time-weighted attention cost of one MoT layer. Segment j (finest first)
/// has length dt[j] = T(j) - T(j+1) and attends over tokens[j] = sum_{k>=j} N/4^k.
struct CostReport {
  std::size_t n_tokens = 0;
  std::size_t width = 0;
  std::vector<double> tokens;
  std::vector<double> dt;
  /// sum_j dt_j * tokens_j^2 * d, in multiply-accumulates.
  double cost = 0.0;
  /// cost / (N^2 d).
  double ratio = 0.0;
};

/// `n_tokens` is the finest-scale token count and must be divisible by 4^(K-1).
CostReport attention_cost(std::size_t n_tokens, std::size_t width, const ScheduleSpec& spec);

/// Multiply-accumulate counts of one forward pass while segment j is active.
struct SegmentFlops {
  std::size_t segment = 0;
  double dt = 0.0;
  /// Image tokens plus conditioning tokens.
  std::size_t tokens = 0;
  double embed = 0.0;       ///< time MLP, patch embedding, modulation regressors
  double projection = 0.0;  ///< qkv and attention output
  double attention = 0.0;   ///< QK^T and AV
  double ffn = 0.0;
  double decode = 0.0;      ///< final linear unpatchify

  double macs() const { return embed + projection + attention + ffn + decode; }
  double flops() const { return 2.0 * macs(); }
};

struct FlopReport {
  std::vector<SegmentFlops> segments;
  /// Per-forward MACs averaged over segments by their time fraction; one
  /// full-schedule sampling step costs this on average.
  double time_weighted_macs = 0.0;
  double time_weighted_attention = 0.0;
  double time_weighted_flops() const { return 2.0 * time_weighted_macs; }
};

/// 1 MAC = 2 FLOPs. Stage-token models (scales == 1) report one segment per
/// stage at resolution image_size / 2^stage.
FlopReport model_flops(const ModelConfig& config, const ScheduleSpec& spec);

/// Mean over n_proj random unit directions of the 1-D Wasserstein-1 distance
/// between the projected flattened images. Projection j uses rng.substream(j).
double sliced_wasserstein(std::span<const Tensor<float>> a, std::span<const Tensor<float>> b,
                          std::size_t n_proj, const Rng& rng);

inline constexpr std::size_t kMinMetricSamples = 64;

/// Mean |DFT|^2 / (H W) per radial band for square n x n images, averaged
/// over images and channels. With r = max(|fy|, |fx|) on wrapped frequencies,
/// band 0 is DC, band b covers 2^(b-1) <= r < 2^b and the last band ends at
/// n/2; there are log2(n) bands. Unit white noise has every band at 1.
std::vector<double> spectrum_stats(std::span<const Tensor<float>> images);

}  // namespace lapflow
