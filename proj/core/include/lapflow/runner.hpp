#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "lapflow/checkpoint.hpp"
#include "lapflow/runconfig.hpp"

namespace lapflow {

/// Class labels fed to training: the dataset labels for a conditional model,
/// empty otherwise. Labels outside model.num_classes are a ConfigError.
std::vector<std::optional<std::size_t>> training_labels(const RunConfig& config,
                                                        const Dataset& data);

/// Trains a fresh model on `data`. The checkpoint stores the resolved config.
Checkpoint train_model(const RunConfig& config, const Dataset& data,
                       const std::function<void(const StepResult&)>& on_step = {});

/// step,loss,lr,grad_norm followed by one stage_<k> count column per stage.
void write_train_log(const std::string& path, const std::vector<StepResult>& rows);

/// Writes grid.png, sample_NNNN.png and samples.json (labels, per-segment NFE
/// and wall time) into `dir`.
void write_samples(const std::string& dir, const SampleBatch& batch);

using Metrics = std::vector<std::pair<std::string, double>>;

/// Sliced Wasserstein plus per-band log10 spectrum ratio (fake / real).
Metrics evaluate(std::span<const Tensor<float>> fake, std::span<const Tensor<float>> real,
                 std::size_t n_proj, std::uint64_t seed);

/// metric,value rows.
void write_metrics(const std::string& path, const Metrics& metrics);

/// Reference images for metrics: a fresh draw with a different generator seed
/// for synthetic kinds, the first `count` dataset images otherwise.
Dataset reference_set(const DatasetDescriptor& desc, std::size_t count);

/// Runs the configured stages into config.output_dir, always writing
/// resolved_config.json first. A dry run prints the resolved config and the
/// FLOP report instead.
void run(const RunConfig& config, bool dry_run, std::ostream& log);

/// Prints the per-segment FLOP breakdown and the attention cost summary.
void print_flop_report(const RunConfig& config, std::ostream& out);

}  // namespace lapflow
