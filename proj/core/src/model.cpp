#include "lapflow/model.hpp"

#include <cmath>
#include <limits>

#include "lapflow/error.hpp"
#include "lapflow/ops.hpp"

namespace lapflow {

void ModelConfig::validate() const {
  auto fail = [](const char* key, const std::string& msg) { throw ConfigError(key, msg); };
  if (scales == 0) fail("model.scales", "must be at least 1");
  if (width == 0) fail("model.width", "must be positive");
  if (heads == 0 || width % heads != 0) {
    fail("model.heads", "width " + std::to_string(width) + " is not divisible by heads " +
                            std::to_string(heads));
  }
  if (width % 4 != 0) fail("model.width", "must be divisible by 4 for 2-D positional tables");
  if (depth == 0) fail("model.depth", "must be at least 1");
  if (patch == 0) fail("model.patch", "must be positive");
  if (channels == 0) fail("model.channels", "must be positive");
  if (mlp_ratio == 0) fail("model.mlp_ratio", "must be positive");
  if (freq_dim == 0 || freq_dim % 2 != 0) fail("model.freq_dim", "must be positive and even");
  if (!(init_std > 0.0)) fail("model.init_std", "must be positive");
  if (num_stages > 0 && scales != 1) {
    fail("model.num_stages", "stage tokens are only supported by single-pathway models");
  }
  const std::size_t coarse_levels = std::max(scales, num_stages) - 1;
  const std::size_t coarsest = image_size >> coarse_levels;
  if (image_size == 0 || (coarsest << coarse_levels) != image_size || coarsest % patch != 0 ||
      coarsest == 0) {
    fail("model.image_size", "image size " + std::to_string(image_size) +
                                 " must be divisible by 2^(levels-1) * patch = " +
                                 std::to_string((std::size_t{1} << coarse_levels) * patch));
  }
}

template <typename T>
Tensor<T> build_mask(std::span<const std::size_t> group_tokens, std::size_t n_cond) {
  std::size_t n = n_cond;
  for (std::size_t c : group_tokens) n += c;
  Tensor<T> mask({n, n}, -std::numeric_limits<T>::infinity());
  for (std::size_t i = 0; i < n_cond; ++i)
    for (std::size_t j = 0; j < n_cond; ++j) mask(i, j) = T(0);
  std::size_t begin = n_cond;
  for (std::size_t g = 0; g < group_tokens.size(); ++g) {
    const std::size_t end = begin + group_tokens[g];
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < end; ++j) mask(i, j) = T(0);
    begin = end;
  }
  return mask;
}

namespace {

// Flat source index in the C x h x w image for every patch-row element.
std::vector<std::size_t> patch_index(std::size_t c, std::size_t h, std::size_t w, std::size_t p) {
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw DimensionError("patchify: " + std::to_string(h) + "x" + std::to_string(w) +
                         " grid is not divisible by patch " + std::to_string(p));
  }
  const std::size_t gh = h / p, gw = w / p, cols = c * p * p;
  std::vector<std::size_t> idx(gh * gw * cols);
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) {
            const std::size_t row = py * gw + px;
            const std::size_t col = (ch * p + dy) * p + dx;
            idx[row * cols + col] = (ch * h + py * p + dy) * w + px * p + dx;
          }
  return idx;
}

void require_image(const Shape& s, const char* what) {
  if (s.size() != 3) throw DimensionError(std::string(what) + ": expected C x H x W, got " + shape_str(s));
}

}  // namespace

template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t p) {
  require_image(x.shape(), "patchify");
  const auto idx = patch_index(x.dim(0), x.dim(1), x.dim(2), p);
  Tensor<T> out({(x.dim(1) / p) * (x.dim(2) / p), x.dim(0) * p * p});
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = x[idx[i]];
  return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& rows, std::size_t channels, std::size_t h, std::size_t w,
                     std::size_t p) {
  const auto idx = patch_index(channels, h, w, p);
  if (rows.size() != idx.size()) {
    throw DimensionError("unpatchify: " + shape_str(rows.shape()) + " does not tile " +
                         std::to_string(channels) + "x" + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  Tensor<T> out({channels, h, w});
  for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] = rows[i];
  return out;
}

namespace ops {

template <typename T>
Var<T> patchify(Var<T> x, std::size_t p) {
  Tensor<T> out = lapflow::patchify(x.value(), p);
  const Shape s = x.shape();
  return x.tape->record(std::move(out), {x}, [x, s, p](Tape<T>& t, std::size_t self) {
    const auto idx = patch_index(s[0], s[1], s[2], p);
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& acc = t.accumulator(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i) acc[idx[i]] += g[i];
  });
}

template <typename T>
Var<T> unpatchify(Var<T> rows, std::size_t channels, std::size_t h, std::size_t w, std::size_t p) {
  Tensor<T> out = lapflow::unpatchify(rows.value(), channels, h, w, p);
  return rows.tape->record(std::move(out), {rows},
                           [rows, channels, h, w, p](Tape<T>& t, std::size_t self) {
                             const auto idx = patch_index(channels, h, w, p);
                             const Tensor<T>& g = t.grad(self);
                             Tensor<T>& acc = t.accumulator(rows.id);
                             for (std::size_t i = 0; i < idx.size(); ++i) acc[i] += g[idx[i]];
                           });
}

}  // namespace ops

template <typename T>
Tensor<T> pos_embed(std::size_t h, std::size_t w, std::size_t d) {
  if (d % 4 != 0) throw DimensionError("pos_embed: width must be divisible by 4");
  const std::size_t quarter = d / 4;
  Tensor<T> out({h * w, d});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t row = y * w + x;
      for (std::size_t i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        out(row, i) = static_cast<T>(std::sin(y * omega));
        out(row, quarter + i) = static_cast<T>(std::cos(y * omega));
        out(row, 2 * quarter + i) = static_cast<T>(std::sin(x * omega));
        out(row, 3 * quarter + i) = static_cast<T>(std::cos(x * omega));
      }
    }
  return out;
}

template <typename T>
Tensor<T> time_features(double t, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor<T> out({1, dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    const double arg = 1000.0 * t * freq;
    out[i] = static_cast<T>(std::cos(arg));
    out[half + i] = static_cast<T>(std::sin(arg));
  }
  return out;
}

template <typename T>
MoTModel<T>::MoTModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t d = config_.width, pd = config_.patch_dim(), hid = d * config_.mlp_ratio;
  t1_w_ = add("t_embed.fc1.w", {config_.freq_dim, d});
  t1_b_ = add("t_embed.fc1.b", {d});
  t2_w_ = add("t_embed.fc2.w", {d, d});
  t2_b_ = add("t_embed.fc2.b", {d});
  if (config_.num_classes > 0) label_table_ = add("y_embed.table", {config_.num_classes + 1, d});
  if (config_.num_stages > 0) stage_table_ = add("stage_embed.table", {config_.num_stages, d});
  for (std::size_t k = 0; k < config_.scales; ++k) {
    const std::string pre = "scale" + std::to_string(k) + ".";
    ScaleIdx s;
    s.patch_w = add(pre + "patch.w", {pd, d});
    s.patch_b = add(pre + "patch.b", {d});
    for (std::size_t i = 0; i < config_.depth; ++i) {
      const std::string b = pre + "block" + std::to_string(i) + ".";
      BlockIdx bi;
      bi.mod_w = add(b + "mod.w", {d, 6 * d});
      bi.mod_b = add(b + "mod.b", {6 * d});
      bi.qkv_w = add(b + "qkv.w", {d, 3 * d});
      bi.qkv_b = add(b + "qkv.b", {3 * d});
      bi.out_w = add(b + "attn_out.w", {d, d});
      bi.out_b = add(b + "attn_out.b", {d});
      bi.ffn1_w = add(b + "ffn1.w", {d, hid});
      bi.ffn1_b = add(b + "ffn1.b", {hid});
      bi.ffn2_w = add(b + "ffn2.w", {hid, d});
      bi.ffn2_b = add(b + "ffn2.b", {d});
      s.blocks.push_back(bi);
    }
    s.final_mod_w = add(pre + "final.mod.w", {d, 2 * d});
    s.final_mod_b = add(pre + "final.mod.b", {2 * d});
    s.decode_w = add(pre + "final.decode.w", {d, pd});
    s.decode_b = add(pre + "final.decode.b", {pd});
    scale_idx_.push_back(std::move(s));
  }
}

template <typename T>
std::size_t MoTModel<T>::add(std::string name, Shape shape) {
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), Tensor<T>(std::move(shape))});
  return params_.size() - 1;
}

template <typename T>
void MoTModel<T>::init(Rng& rng) {
  auto zero_init = [](const std::string& name) {
    auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    return ends_with(".b") || name.find(".mod.") != std::string::npos ||
           name.find("final.decode") != std::string::npos;
  };
  for (auto& p : params_) {
    auto& data = p.value.storage();
    std::fill(data.begin(), data.end(), T(0));
    if (zero_init(p.name)) continue;
    Rng r = rng.stream(p.name);
    for (auto& v : data) {
      double z;
      do {
        z = r.normal();
      } while (std::abs(z) > 2.0);
      v = static_cast<T>(config_.init_std * z);
    }
  }
}

template <typename T>
void MoTModel<T>::randomize_all(Rng& rng, double std) {
  for (auto& p : params_) {
    Rng r = rng.stream(p.name);
    for (auto& v : p.value.storage()) v = static_cast<T>(std * r.normal());
  }
}

template <typename T>
std::size_t MoTModel<T>::num_parameters() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
std::size_t MoTModel<T>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DimensionError("model has no parameter '" + name + "'");
  return it->second;
}

template <typename T>
std::vector<Var<T>> MoTModel<T>::bind(Tape<T>& tape, bool requires_grad) const {
  std::vector<Var<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(tape.borrow(p.value, requires_grad));
  return out;
}

template <typename T>
std::vector<Var<T>> MoTModel<T>::bind(Tape<T>& tape, std::span<Tensor<T>> grad_sinks) const {
  if (grad_sinks.size() != params_.size()) {
    throw DimensionError("bind: " + std::to_string(grad_sinks.size()) + " gradient sinks for " +
                         std::to_string(params_.size()) + " parameters");
  }
  std::vector<Var<T>> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back(tape.borrow(params_[i].value, grad_sinks[i]));
  }
  return out;
}

template <typename T>
std::size_t MoTModel<T>::check_state(const FlowState<T>& state) const {
  const std::size_t K = config_.scales;
  if (state.levels.size() != K) {
    throw DimensionError("flow state has " + std::to_string(state.levels.size()) +
                         " levels for a " + std::to_string(K) + "-scale model");
  }
  if (state.first >= K) throw DimensionError("flow state activates no scale");
  std::size_t base = config_.image_size;
  if (config_.num_stages > 0) {
    if (!state.stage || *state.stage >= config_.num_stages) {
      throw DomainError("flow state needs a stage below " + std::to_string(config_.num_stages));
    }
    base >>= *state.stage;
  } else if (state.stage) {
    throw DomainError("flow state carries a stage but the model has no stage token");
  }
  if (state.label && (config_.num_classes == 0 || *state.label > config_.num_classes)) {
    throw DomainError("label " + std::to_string(*state.label) + " outside the model's " +
                      std::to_string(config_.num_classes) + " classes");
  }
  for (std::size_t k = 0; k < K; ++k) {
    const auto& lv = state.levels[k];
    if (k < state.first) {
      if (!lv.empty()) {
        throw DimensionError("input present for inactive scale " + std::to_string(k));
      }
      continue;
    }
    const std::size_t size = base >> k;
    const Shape want{config_.channels, size, size};
    if (lv.shape() != want) {
      throw DimensionError("scale " + std::to_string(k) + " input " + shape_str(lv.shape()) +
                           " expected " + shape_str(want));
    }
  }
  return base >> state.first;
}

template <typename T>
std::vector<Var<T>> MoTModel<T>::forward(Tape<T>& tape, std::span<const Var<T>> bound,
                                         const FlowState<T>& state,
                                         std::vector<Tensor<T>>* trace) const {
  if (bound.size() != params_.size()) {
    throw DimensionError("forward: " + std::to_string(bound.size()) + " bound parameters for " +
                         std::to_string(params_.size()));
  }
  check_state(state);
  const ModelConfig& cf = config_;
  const std::size_t K = cf.scales, d = cf.width, p = cf.patch;
  auto P = [&](std::size_t i) { return bound[i]; };

  // Conditioning: the time, label and stage tokens; their sum drives modulation.
  Var<T> feats = tape.constant(time_features<T>(state.t, cf.freq_dim));
  Var<T> t_emb = ops::linear(ops::silu(ops::linear(feats, P(t1_w_), P(t1_b_))), P(t2_w_), P(t2_b_));
  std::vector<Var<T>> cond_rows{t_emb};
  Var<T> c = t_emb;
  if (cf.num_classes > 0) {
    Var<T> y = ops::gather_row(P(label_table_), state.label.value_or(cf.null_label()));
    cond_rows.push_back(y);
    c = ops::add(c, y);
  }
  if (cf.num_stages > 0) {
    Var<T> s = ops::gather_row(P(stage_table_), *state.stage);
    cond_rows.push_back(s);
    c = ops::add(c, s);
  }
  const Var<T> c_act = ops::silu(c);
  const std::size_t n_cond = cond_rows.size();

  // Groups are coarsest first; group 0 carries the conditioning prefix.
  std::vector<std::size_t> scale_of, grid, counts;
  std::vector<Var<T>> x;
  for (std::size_t k = K; k-- > state.first;) {
    const Tensor<T>& lv = state.levels[k];
    const std::size_t side = lv.dim(1);
    const ScaleIdx& si = scale_idx_[k];
    Var<T> rows = tape.constant(patchify(lv, p));
    Var<T> tok = ops::add(ops::linear(rows, P(si.patch_w), P(si.patch_b)),
                          tape.constant(pos_embed<T>(side / p, side / p, d)));
    counts.push_back(tok.shape()[0]);
    if (x.empty()) {
      std::vector<Var<T>> parts = cond_rows;
      parts.push_back(tok);
      tok = ops::concat_rows<T>(parts);
    }
    scale_of.push_back(k);
    grid.push_back(side);
    x.push_back(tok);
  }
  const Tensor<T> mask = build_mask<T>(counts, n_cond);
  const std::size_t G = x.size();

  auto record_trace = [&] {
    if (!trace) return;
    Tape<T> scratch(false);
    std::vector<Var<T>> parts;
    for (auto& v : x) parts.push_back(scratch.constant(v.value()));
    trace->push_back(ops::concat_rows<T>(parts).value());
  };
  record_trace();

  for (std::size_t b = 0; b < cf.depth; ++b) {
    std::vector<Var<T>> mods(G), qkv(G);
    for (std::size_t g = 0; g < G; ++g) {
      const BlockIdx& bi = scale_idx_[scale_of[g]].blocks[b];
      mods[g] = ops::linear(c_act, P(bi.mod_w), P(bi.mod_b));
      Var<T> h = ops::modulate(ops::layernorm(x[g]), ops::slice_cols(mods[g], 0, d),
                               ops::slice_cols(mods[g], d, d));
      qkv[g] = ops::linear(h, P(bi.qkv_w), P(bi.qkv_b));
    }
    Var<T> att = ops::masked_attention(ops::concat_rows<T>(qkv), mask, cf.heads);
    std::size_t offset = 0;
    for (std::size_t g = 0; g < G; ++g) {
      const BlockIdx& bi = scale_idx_[scale_of[g]].blocks[b];
      const std::size_t n = x[g].shape()[0];
      Var<T> a = ops::linear(ops::slice_rows(att, offset, n), P(bi.out_w), P(bi.out_b));
      offset += n;
      x[g] = ops::add_gated(x[g], a, ops::slice_cols(mods[g], 2 * d, d));
      Var<T> h = ops::modulate(ops::layernorm(x[g]), ops::slice_cols(mods[g], 3 * d, d),
                               ops::slice_cols(mods[g], 4 * d, d));
      Var<T> f = ops::linear(ops::gelu(ops::linear(h, P(bi.ffn1_w), P(bi.ffn1_b))),
                             P(bi.ffn2_w), P(bi.ffn2_b));
      x[g] = ops::add_gated(x[g], f, ops::slice_cols(mods[g], 5 * d, d));
    }
    record_trace();
  }

  std::vector<Var<T>> out(K);
  for (std::size_t g = 0; g < G; ++g) {
    const std::size_t k = scale_of[g];
    const ScaleIdx& si = scale_idx_[k];
    Var<T> tok = g == 0 ? ops::slice_rows(x[g], n_cond, counts[0]) : x[g];
    Var<T> fm = ops::linear(c_act, P(si.final_mod_w), P(si.final_mod_b));
    Var<T> h = ops::modulate(ops::layernorm(tok), ops::slice_cols(fm, 0, d),
                             ops::slice_cols(fm, d, d));
    Var<T> rows = ops::linear(h, P(si.decode_w), P(si.decode_b));
    out[k] = ops::unpatchify(rows, cf.channels, grid[g], grid[g], p);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> MoTModel<T>::velocity(const FlowState<T>& state) const {
  Tape<T> tape(false);
  const auto bound = bind(tape, false);
  auto vars = forward(tape, bound, state);
  std::vector<Tensor<T>> out(vars.size());
  for (std::size_t k = 0; k < vars.size(); ++k) {
    if (vars[k].valid()) out[k] = vars[k].value();
  }
  return out;
}

#define LAPFLOW_INSTANTIATE_MODEL(T)                                                        \
  template Tensor<T> build_mask<T>(std::span<const std::size_t>, std::size_t);              \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> unpatchify(const Tensor<T>&, std::size_t, std::size_t, std::size_t,    \
                                std::size_t);                                               \
  template Var<T> ops::patchify(Var<T>, std::size_t);                                       \
  template Var<T> ops::unpatchify(Var<T>, std::size_t, std::size_t, std::size_t,            \
                                  std::size_t);                                             \
  template Tensor<T> pos_embed<T>(std::size_t, std::size_t, std::size_t);                   \
  template Tensor<T> time_features<T>(double, std::size_t);                                 \
  template class MoTModel<T>;

LAPFLOW_INSTANTIATE_MODEL(float)
LAPFLOW_INSTANTIATE_MODEL(double)

}  // namespace lapflow
