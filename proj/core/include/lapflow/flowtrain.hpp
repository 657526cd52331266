#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lapflow/gradcheck.hpp"
#include "lapflow/model.hpp"
#include "lapflow/rng.hpp"
#include "lapflow/schedule.hpp"

namespace lapflow {

enum class LrSchedule { constant, cosine };
enum class LossReduction { mean, sum };

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t steps = 20000;
  double lr = 2e-4;
  double final_lr = 1e-6;
  LrSchedule lr_schedule = LrSchedule::cosine;
  double ema_decay = 0.9999;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm clip; 0 disables clipping.
  double grad_clip = 0.0;
  /// Per-scale loss weights; empty means 1 for every scale.
  std::vector<double> loss_weights;
  LossReduction reduction = LossReduction::mean;
  /// Probability of replacing a label with the null label (conditional models).
  double cfg_dropout = 0.1;
  std::size_t log_every = 100;

  void validate() const;
};

/// final + (init - final) * (1 + cos(pi * step / total)) / 2
double cosine_lr(std::size_t step, std::size_t total, double init, double final_lr);

/// shadow = decay * shadow + (1 - decay) * params, elementwise.
template <typename T>
void ema_update(Tensor<T>& shadow, const Tensor<T>& params, double decay);

/// One AdamW update of `w` at 1-based step `t` using gradient `g * grad_scale`.
/// Weight decay is decoupled: w -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * w).
void adamw_update(Tensor<float>& w, const Tensor<float>& g, Tensor<float>& m, Tensor<float>& v,
                  std::size_t t, const TrainConfig& config, double lr, float grad_scale = 1.0f);

/// Replaces `label` by `null_label` with probability p_drop.
std::size_t train_cfg_dropout(std::size_t label, std::size_t null_label, Rng& rng, double p_drop);

/// sum_k w_k * reduce((pred_k - target_k)^2) over the scales where pred is
/// valid. Scales present in only one of pred/target are an error.
template <typename T>
Var<T> loss_mv(std::span<const Var<T>> pred, std::span<const Tensor<T>> target,
               std::span<const double> weights, LossReduction reduction = LossReduction::mean);

/// One regression example: model input, per-scale targets (empty where the
/// scale is inactive) and the sampled stage and time.
template <typename T>
struct TrainExample {
  FlowState<T> state;
  std::vector<Tensor<T>> target;
  std::size_t stage = 0;
  double t = 0.0;
};

/// Turns a clean image into a training example. Implementations must draw all
/// randomness from `rng`.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::string name() const = 0;
  virtual TrainExample<float> make(const Tensor<float>& x1, Rng& rng) const = 0;
  /// How many scales or stages the stage histogram tracks.
  virtual std::size_t stages() const = 0;
};

/// Multi-scale noising of a Laplacian pyramid; K = 1 is plain flow matching.
class LapFlowObjective final : public Objective {
 public:
  explicit LapFlowObjective(ScheduleSpec spec);
  std::string name() const override { return spec_.scales == 1 ? "lfm" : "lapflow"; }
  TrainExample<float> make(const Tensor<float>& x1, Rng& rng) const override;
  std::size_t stages() const override { return spec_.scales; }
  const ScheduleSpec& spec() const noexcept { return spec_; }

 private:
  ScheduleSpec spec_;
};

struct StepResult {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::vector<std::size_t> stage_counts;
};

/// AdamW training with EMA shadows; the model is updated in place. Sample i of
/// step n draws from Rng(seed).stream("step").substream(n).substream(i), and
/// batch indices of step n from Rng(seed).stream("batch").substream(n).
class Trainer {
 public:
  Trainer(MoTModel<float>& model, std::shared_ptr<const Objective> objective, TrainConfig config,
          std::uint64_t seed);

  /// One optimizer step on the given clean images (labels optional, one per image).
  StepResult step(std::span<const Tensor<float>> images,
                  std::span<const std::optional<std::size_t>> labels = {});

  /// Runs config.steps steps on batches drawn uniformly with replacement.
  void fit(std::span<const Tensor<float>> dataset,
           std::span<const std::optional<std::size_t>> labels,
           const std::function<void(const StepResult&)>& on_step = {});

  std::size_t steps_done() const noexcept { return step_; }
  const std::vector<NamedTensor<float>>& ema() const noexcept { return ema_; }
  /// Model with EMA weights in place of the live ones.
  MoTModel<float> ema_model() const;
  const TrainConfig& config() const noexcept { return config_; }
  MoTModel<float>& model() noexcept { return model_; }

 private:
  MoTModel<float>& model_;
  std::shared_ptr<const Objective> objective_;
  TrainConfig config_;
  Rng rng_;
  std::size_t step_ = 0;
  std::vector<Tensor<float>> m_, v_;
  std::vector<NamedTensor<float>> ema_;
};

/// Finite-difference check of the full training loss over every parameter of a
/// 64-bit model randomized with `init_std`, on one example drawn by `objective`
/// from a random image, preferring one where every scale is active.
GradCheckReport training_loss_grad_check(const ModelConfig& model, const Objective& objective,
                                         std::uint64_t seed, double h = 1e-5,
                                         double init_std = 0.3);

}  // namespace lapflow
