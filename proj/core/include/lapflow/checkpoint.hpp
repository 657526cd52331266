#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lapflow/model.hpp"
#include "lapflow/schedule.hpp"

namespace lapflow {

/// On-disk model record: "LAPF", u32 version, u64 header length, UTF-8 JSON
/// header, then little-endian f32 payloads in header order.
struct Checkpoint {
  ModelConfig model;
  ScheduleSpec schedule;
  std::string method = "lapflow";
  std::uint64_t step = 0;
  /// Serialized JSON object stored verbatim under "run_config".
  std::string run_config = "{}";
  std::vector<NamedTensor<float>> params;
  /// EMA shadow weights, same names and order as params (may be empty).
  std::vector<NamedTensor<float>> ema;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Builds a model from the stored weights (EMA weights when requested and present).
MoTModel<float> model_from_checkpoint(const Checkpoint& ckpt, bool use_ema);

}  // namespace lapflow
