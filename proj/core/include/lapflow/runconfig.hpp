#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lapflow/baselines.hpp"
#include "lapflow/data.hpp"
#include "lapflow/flowtrain.hpp"
#include "lapflow/model.hpp"
#include "lapflow/odesolve.hpp"
#include "lapflow/sampler.hpp"
#include "lapflow/schedule.hpp"

namespace lapflow {

struct EvalConfig {
  /// Generated and reference images compared by the metrics.
  std::size_t samples = 256;
  std::size_t n_proj = 128;
};

/// Complete description of one experiment. Parsing is strict: unknown keys
/// and type mismatches are ConfigErrors naming the dotted key. Required keys:
/// method, dataset.kind, dataset.image_size, schedule.scales.
struct RunConfig {
  std::string method = "lapflow";
  std::uint64_t seed = 0;
  std::string output_dir = "runs/lapflow";
  DatasetDescriptor dataset;
  /// scales, image_size, channels and num_stages follow from the method,
  /// dataset and schedule; if given they must agree.
  ModelConfig model;
  ScheduleSpec schedule;
  TrainConfig train;
  SolverConfig solver;
  /// Sampling options; `solver` mirrors the top-level solver and the seed
  /// defaults to the run seed.
  SampleConfig sample;
  MeanSchedule edify_mean = MeanSchedule::linear;
  EvalConfig eval;
  /// Pipeline stages executed by `run`, in order.
  std::vector<std::string> stages{"train", "sample", "eval"};
  /// Whether sample.seed was given rather than inherited from `seed`.
  bool sample_seed_set = false;

  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
/// Canonical JSON with every default materialized; parse_run_config of this
/// text yields an equal configuration.
std::string to_json_string(const RunConfig& config);

/// Applies a LAPFLOW_SEED value (decimal) to the run seed and to the sample
/// seed when it was not set explicitly. Malformed values are ConfigErrors.
void apply_seed_override(RunConfig& config, const char* value);

/// The training objective of the configured method.
std::shared_ptr<const Objective> make_objective(const RunConfig& config);

}  // namespace lapflow
