#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lapflow/rng.hpp"
#include "lapflow/tape.hpp"
#include "lapflow/tensor.hpp"

namespace lapflow {

struct ModelConfig {
  std::size_t scales = 2;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t depth = 4;
  std::size_t patch = 2;
  std::size_t channels = 1;
  /// 0 means unconditional. Conditional models get one extra null-label row.
  std::size_t num_classes = 0;
  /// Finest spatial size (square images).
  std::size_t image_size = 16;
  std::size_t mlp_ratio = 4;
  std::size_t freq_dim = 256;
  /// Non-zero adds a learned stage token; used by the single-pathway
  /// cascaded baselines, whose input resolution depends on the stage.
  std::size_t num_stages = 0;
  double init_std = 0.02;

  /// Throws ConfigError (keys under "model.") when the sizes do not fit.
  void validate() const;
  std::size_t head_dim() const { return width / heads; }
  std::size_t patch_dim() const { return channels * patch * patch; }
  std::size_t cond_tokens() const {
    return 1 + (num_classes > 0 ? 1 : 0) + (num_stages > 0 ? 1 : 0);
  }
  /// Null label id used for classifier-free guidance.
  std::size_t null_label() const { return num_classes; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Noisy per-scale inputs of one velocity evaluation. `levels` has one entry
/// per model scale; scales below `first` are inactive and must be empty.
template <typename T>
struct FlowState {
  std::size_t first = 0;
  std::vector<Tensor<T>> levels;
  double t = 0.0;
  /// Class id, or ModelConfig::null_label() for the unconditional branch.
  std::optional<std::size_t> label;
  std::optional<std::size_t> stage;
};

/// Additive attention mask over [cond; group 0; group 1; ...] where groups are
/// listed coarsest first. A group attends to the conditioning prefix and to
/// itself and every earlier (coarser) group; the prefix attends only to itself.
template <typename T>
Tensor<T> build_mask(std::span<const std::size_t> group_tokens, std::size_t n_cond);

/// C x h x w image to [(h/p)(w/p) x C p p] patch rows in row-major patch
/// order; each row lists channel, then patch row, then patch column.
template <typename T> Tensor<T> patchify(const Tensor<T>& x, std::size_t p);
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& rows, std::size_t channels, std::size_t h, std::size_t w,
                     std::size_t p);

namespace ops {
template <typename T> Var<T> patchify(Var<T> x, std::size_t p);
template <typename T>
Var<T> unpatchify(Var<T> rows, std::size_t channels, std::size_t h, std::size_t w, std::size_t p);
}  // namespace ops

/// 2-D sine-cosine table [h*w x d]; the first d/2 columns encode the row,
/// the rest the column. d must be divisible by 4.
template <typename T> Tensor<T> pos_embed(std::size_t h, std::size_t w, std::size_t d);

/// Sinusoidal features [1 x dim] of t * 1000: cosines then sines.
template <typename T> Tensor<T> time_features(double t, std::size_t dim);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

/// Multi-scale Mixture-of-Transformers velocity network. Attention is global
/// over all active scales; every projection, FFN and modulation regressor is
/// owned by one scale. Conditioning tokens use the coarsest scale's weights.
template <typename T>
class MoTModel {
 public:
  explicit MoTModel(ModelConfig config);

  /// Truncated-normal projections and embeddings; modulation regressors,
  /// final modulation and decode stay zero.
  void init(Rng& rng);

  /// Gaussian values of standard deviation `std` in every tensor, including
  /// the zero-initialised ones; used by gradient and causality diagnostics.
  void randomize_all(Rng& rng, double std);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<NamedTensor<T>>& params() noexcept { return params_; }
  const std::vector<NamedTensor<T>>& params() const noexcept { return params_; }
  std::size_t num_parameters() const;
  std::size_t index_of(const std::string& name) const;
  Tensor<T>& param(const std::string& name) { return params_[index_of(name)].value; }
  const Tensor<T>& param(const std::string& name) const { return params_[index_of(name)].value; }

  /// Parameters as tape leaves that borrow this model's storage.
  std::vector<Var<T>> bind(Tape<T>& tape, bool requires_grad = true) const;
  /// As bind(), with each parameter's gradient added into grad_sinks[i].
  std::vector<Var<T>> bind(Tape<T>& tape, std::span<Tensor<T>> grad_sinks) const;

  /// Per-scale velocities on `tape`; entries below state.first are invalid Vars.
  /// `trace`, when given, receives the full token matrix before the first
  /// block and after every block.
  std::vector<Var<T>> forward(Tape<T>& tape, std::span<const Var<T>> bound,
                              const FlowState<T>& state,
                              std::vector<Tensor<T>>* trace = nullptr) const;

  /// Forward pass without gradient bookkeeping.
  std::vector<Tensor<T>> velocity(const FlowState<T>& state) const;

  /// Validates a state against the configuration and returns the spatial
  /// size of level `first`.
  std::size_t check_state(const FlowState<T>& state) const;

  template <typename U>
  MoTModel<U> cast() const {
    MoTModel<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.params()[i].value = params_[i].value.template cast<U>();
    }
    return out;
  }

 private:
  struct BlockIdx {
    std::size_t mod_w, mod_b, qkv_w, qkv_b, out_w, out_b, ffn1_w, ffn1_b, ffn2_w, ffn2_b;
  };
  struct ScaleIdx {
    std::size_t patch_w, patch_b;
    std::vector<BlockIdx> blocks;
    std::size_t final_mod_w, final_mod_b, decode_w, decode_b;
  };

  std::size_t add(std::string name, Shape shape);

  ModelConfig config_;
  std::size_t t1_w_ = 0, t1_b_ = 0, t2_w_ = 0, t2_b_ = 0;
  std::size_t label_table_ = 0, stage_table_ = 0;
  std::vector<ScaleIdx> scale_idx_;
  std::vector<NamedTensor<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace lapflow
