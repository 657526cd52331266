#include "lapflow/flowtrain.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "lapflow/error.hpp"
#include "lapflow/ops.hpp"
#include "lapflow/pyramid.hpp"

namespace lapflow {

void TrainConfig::validate() const {
  auto fail = [](const char* key, const std::string& msg) { throw ConfigError(key, msg); };
  if (batch_size == 0) fail("train.batch_size", "must be positive");
  if (!(lr > 0.0)) fail("train.lr", "must be positive");
  if (final_lr < 0.0) fail("train.final_lr", "must be non-negative");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("train.ema_decay", "must lie in [0, 1)");
  if (weight_decay < 0.0) fail("train.weight_decay", "must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("train.beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("train.beta2", "must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("train.adam_eps", "must be positive");
  if (grad_clip < 0.0) fail("train.grad_clip", "must be non-negative");
  if (!(cfg_dropout >= 0.0 && cfg_dropout <= 1.0)) fail("train.cfg_dropout", "must lie in [0, 1]");
  for (double w : loss_weights) {
    if (!(w >= 0.0)) fail("train.loss_weights", "weights must be non-negative");
  }
}

double cosine_lr(std::size_t step, std::size_t total, double init, double final_lr) {
  if (total == 0) return init;
  const double frac = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return final_lr + (init - final_lr) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

template <typename T>
void ema_update(Tensor<T>& shadow, const Tensor<T>& params, double decay) {
  require_same_shape(shadow.shape(), params.shape(), "ema_update");
  const T a = static_cast<T>(decay), b = static_cast<T>(1.0 - decay);
  for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = a * shadow[i] + b * params[i];
}

void adamw_update(Tensor<float>& w, const Tensor<float>& g, Tensor<float>& m, Tensor<float>& v,
                  std::size_t t, const TrainConfig& config, double lr, float grad_scale) {
  require_same_shape(w.shape(), g.shape(), "adamw_update");
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  const float b1 = static_cast<float>(config.beta1), b2 = static_cast<float>(config.beta2);
  const float lrf = static_cast<float>(lr), wd = static_cast<float>(config.weight_decay);
  const float eps = static_cast<float>(config.adam_eps);
  const float s1 = static_cast<float>(1.0 / bc1), s2 = static_cast<float>(1.0 / bc2);
  for (std::size_t j = 0; j < w.size(); ++j) {
    const float gj = g[j] * grad_scale;
    m[j] = b1 * m[j] + (1.0f - b1) * gj;
    v[j] = b2 * v[j] + (1.0f - b2) * gj * gj;
    w[j] -= lrf * ((m[j] * s1) / (std::sqrt(v[j] * s2) + eps) + wd * w[j]);
  }
}

std::size_t train_cfg_dropout(std::size_t label, std::size_t null_label, Rng& rng, double p_drop) {
  const double u = rng.uniform();
  return u < p_drop ? null_label : label;
}

template <typename T>
Var<T> loss_mv(std::span<const Var<T>> pred, std::span<const Tensor<T>> target,
               std::span<const double> weights, LossReduction reduction) {
  if (pred.size() != target.size()) {
    throw DimensionError("loss_mv: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(target.size()) + " targets");
  }
  Var<T> total;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k].valid() != !target[k].empty()) {
      throw DimensionError("loss_mv: scale " + std::to_string(k) +
                           " present in only one of prediction and target");
    }
    if (!pred[k].valid()) continue;
    Tape<T>& tape = *pred[k].tape;
    Var<T> tgt = tape.constant(target[k]);
    Var<T> term = reduction == LossReduction::mean ? ops::mse(pred[k], tgt) : ops::sse(pred[k], tgt);
    const double w = k < weights.size() ? weights[k] : 1.0;
    if (w != 1.0) term = ops::scale(term, static_cast<T>(w));
    total = total.valid() ? ops::add(total, term) : term;
  }
  if (!total.valid()) throw DimensionError("loss_mv: no active scale");
  return total;
}

LapFlowObjective::LapFlowObjective(ScheduleSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
}

TrainExample<float> LapFlowObjective::make(const Tensor<float>& x1, Rng& rng) const {
  const std::size_t K = spec_.scales;
  Rng noise_rng = rng.stream("noise");
  Rng time_rng = rng.stream("time");
  const Pyramid<float> data = decompose(x1, K);
  const Pyramid<float> noise = noise_pyramid<float>(noise_rng, x1.shape(), K, spec_.independent_scale_noise);
  const StageTime st = sample_stage_time(time_rng, spec_);
  TrainExample<float> ex;
  ex.stage = st.stage;
  ex.t = st.t;
  ex.state.first = st.stage;
  ex.state.t = st.t;
  ex.state.levels.resize(K);
  ex.target.resize(K);
  for (std::size_t k = st.stage; k < K; ++k) {
    const PathCoeffs c = coeffs(spec_, k, st.t);
    ex.state.levels[k] = noisy_state(data.levels[k], noise.levels[k], c);
    ex.target[k] = velocity_target(data.levels[k], noise.levels[k], c);
  }
  return ex;
}

Trainer::Trainer(MoTModel<float>& model, std::shared_ptr<const Objective> objective,
                 TrainConfig config, std::uint64_t seed)
    : model_(model), objective_(std::move(objective)), config_(std::move(config)), rng_(seed) {
  config_.validate();
  for (const auto& p : model_.params()) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
  ema_ = model_.params();
}

StepResult Trainer::step(std::span<const Tensor<float>> images,
                         std::span<const std::optional<std::size_t>> labels) {
  if (images.empty()) throw DimensionError("train step needs at least one image");
  if (!labels.empty() && labels.size() != images.size()) {
    throw DimensionError("train step: label count does not match image count");
  }
  const auto& cf = model_.config();
  const std::size_t n_params = model_.params().size();
  std::vector<Tensor<float>> grads;
  for (const auto& p : model_.params()) grads.emplace_back(p.value.shape());

  StepResult res;
  res.step = step_ + 1;
  res.stage_counts.assign(objective_->stages(), 0);
  const float inv_b = 1.0f / static_cast<float>(images.size());
  const std::span<Tensor<float>> sinks(grads);
  Rng step_rng = rng_.stream("step").substream(step_);
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng sample_rng = step_rng.substream(i);
    TrainExample<float> ex = objective_->make(images[i], sample_rng);
    if (cf.num_classes > 0) {
      Rng drop_rng = sample_rng.stream("cfg_dropout");
      std::size_t label = cf.null_label();
      if (!labels.empty() && labels[i]) {
        label = train_cfg_dropout(*labels[i], cf.null_label(), drop_rng, config_.cfg_dropout);
      }
      ex.state.label = label;
    }
    res.stage_counts.at(ex.stage)++;

    Tape<float> tape;
    const auto bound = model_.bind(tape, sinks);
    const auto pred = model_.forward(tape, bound, ex.state);
    const Var<float> loss = loss_mv<float>(pred, ex.target, config_.loss_weights, config_.reduction);
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) {
      std::ostringstream os;
      os << "non-finite loss at step " << res.step << " (stage s=" << ex.stage << ", t=" << ex.t
         << ")";
      throw DivergenceError(os.str());
    }
    loss_sum += lv;
    // Scaling the loss by 1/B makes the sinks accumulate the batch mean gradient.
    tape.backward(ops::scale(loss, inv_b));
  }
  res.loss = loss_sum / static_cast<double>(images.size());

  double sq = 0.0;
  for (const auto& g : grads)
    for (float v : g.data()) sq += static_cast<double>(v) * v;
  res.grad_norm = std::sqrt(sq);
  if (!std::isfinite(res.grad_norm)) {
    throw DivergenceError("non-finite gradient at step " + std::to_string(res.step));
  }
  float clip = 1.0f;
  if (config_.grad_clip > 0.0 && res.grad_norm > config_.grad_clip) {
    clip = static_cast<float>(config_.grad_clip / res.grad_norm);
  }

  res.lr = config_.lr_schedule == LrSchedule::cosine
               ? cosine_lr(step_, config_.steps, config_.lr, config_.final_lr)
               : config_.lr;
  ++step_;
  for (std::size_t p = 0; p < n_params; ++p) {
    auto& w = model_.params()[p].value;
    adamw_update(w, grads[p], m_[p], v_[p], step_, config_, res.lr, clip);
    ema_update(ema_[p].value, w, config_.ema_decay);
  }
  return res;
}

void Trainer::fit(std::span<const Tensor<float>> dataset,
                  std::span<const std::optional<std::size_t>> labels,
                  const std::function<void(const StepResult&)>& on_step) {
  if (dataset.empty()) throw DimensionError("fit: empty dataset");
  std::vector<Tensor<float>> batch(config_.batch_size);
  std::vector<std::optional<std::size_t>> batch_labels(labels.empty() ? 0 : config_.batch_size);
  while (step_ < config_.steps) {
    Rng pick = rng_.stream("batch").substream(step_);
    for (std::size_t i = 0; i < config_.batch_size; ++i) {
      const std::size_t idx = pick.uniform_int(dataset.size());
      batch[i] = dataset[idx];
      if (!labels.empty()) batch_labels[i] = labels[idx];
    }
    const StepResult r = step(batch, batch_labels);
    if (on_step) on_step(r);
  }
}

MoTModel<float> Trainer::ema_model() const {
  MoTModel<float> out(model_.config());
  for (std::size_t i = 0; i < ema_.size(); ++i) out.params()[i].value = ema_[i].value;
  return out;
}

template void ema_update(Tensor<float>&, const Tensor<float>&, double);
template void ema_update(Tensor<double>&, const Tensor<double>&, double);
GradCheckReport training_loss_grad_check(const ModelConfig& config, const Objective& objective,
                                         std::uint64_t seed, double h, double init_std) {
  MoTModel<double> model(config);
  Rng rng(seed);
  Rng init = rng.stream("init");
  model.randomize_all(init, init_std);
  Rng data = rng.stream("data");
  const auto x1 = data.normal_tensor<float>({config.channels, config.image_size, config.image_size});
  // Prefer an example where every scale is active so all parameters get a gradient.
  const Rng examples = rng.stream("example");
  TrainExample<float> ex;
  for (std::uint64_t i = 0; i < 64; ++i) {
    Rng draw = examples.substream(i);
    ex = objective.make(x1, draw);
    if (ex.state.first == 0) break;
  }

  FlowState<double> state;
  state.first = ex.state.first;
  state.t = ex.state.t;
  state.label = ex.state.label;
  if (config.num_classes > 0 && !state.label) state.label = config.num_classes - 1;
  state.stage = ex.state.stage;
  for (const auto& l : ex.state.levels) state.levels.push_back(l.empty() ? Tensor<double>() : l.cast<double>());
  std::vector<Tensor<double>> target;
  for (const auto& tg : ex.target) target.push_back(tg.empty() ? Tensor<double>() : tg.cast<double>());

  std::vector<Tensor<double>> inputs;
  for (const auto& p : model.params()) inputs.push_back(p.value);
  return grad_check(
      [&](Tape<double>& tape, std::span<const Var<double>> params) {
        const auto pred = model.forward(tape, params, state);
        return loss_mv<double>(pred, target, {}, LossReduction::mean);
      },
      std::move(inputs), h);
}

template Var<float> loss_mv(std::span<const Var<float>>, std::span<const Tensor<float>>,
                            std::span<const double>, LossReduction);
template Var<double> loss_mv(std::span<const Var<double>>, std::span<const Tensor<double>>,
                             std::span<const double>, LossReduction);

}  // namespace lapflow
