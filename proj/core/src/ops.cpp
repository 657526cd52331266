#include "lapflow/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

namespace lapflow::ops {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatR<T>>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;
template <typename T>
using Arr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using StridedMap = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

std::size_t last_dim(const Shape& s) {
  if (s.empty()) return 1;
  return s.back();
}

std::size_t rows_of(const Shape& s) {
  const std::size_t d = last_dim(s);
  return d == 0 ? 0 : shape_numel(s) / d;
}

template <typename T>
Tape<T>& tape_of(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw DimensionError("operands recorded on different tapes");
  return *a.tape;
}

template <typename T>
void require_rowvec(const Tensor<T>& x, const Tensor<T>& v, const char* what) {
  if (v.size() != last_dim(x.shape())) {
    throw DimensionError(std::string(what) + ": vector of " + std::to_string(v.size()) +
                         " values does not match last axis of " + shape_str(x.shape()));
  }
}

template <typename T>
void require_matrix(const Tensor<T>& x, const char* what) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_str(x.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tp = tape_of(a, b);
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value() + b.value();
  return tp.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(a)) axpy(T{1}, g, t.accumulator(a.id));
    if (t.requires_grad(b)) axpy(T{1}, g, t.accumulator(b.id));
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tp = tape_of(a, b);
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value() - b.value();
  return tp.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(a)) axpy(T{1}, g, t.accumulator(a.id));
    if (t.requires_grad(b)) axpy(T{-1}, g, t.accumulator(b.id));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tp = tape_of(a, b);
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tp.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.accumulator(a.id);
      const Tensor<T>& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.accumulator(b.id);
      const Tensor<T>& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = s * a.value();
  return a.tape->record(std::move(out), {a}, [a, s](Tape<T>& t, std::size_t self) {
    axpy(s, t.grad(self), t.accumulator(a.id));
  });
}

template <typename T>
Var<T> add_rowvec(Var<T> x, Var<T> v) {
  Tape<T>& tp = tape_of(x, v);
  require_rowvec(x.value(), v.value(), "add_rowvec");
  const std::size_t d = v.value().size();
  Tensor<T> out = x.value();
  const Tensor<T>& vv = v.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vv[i % d];
  return tp.record(std::move(out), {x, v}, [x, v, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(x)) axpy(T{1}, g, t.accumulator(x.id));
    if (t.requires_grad(v)) {
      Tensor<T>& gv = t.accumulator(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i % d] += g[i];
    }
  });
}

template <typename T>
Var<T> mul_rowvec(Var<T> x, Var<T> v) {
  Tape<T>& tp = tape_of(x, v);
  require_rowvec(x.value(), v.value(), "mul_rowvec");
  const std::size_t d = v.value().size();
  Tensor<T> out = x.value();
  const Tensor<T>& vv = v.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vv[i % d];
  return tp.record(std::move(out), {x, v}, [x, v, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = x.value();
    const Tensor<T>& vv = v.value();
    if (t.requires_grad(x)) {
      Tensor<T>& gx = t.accumulator(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * vv[i % d];
    }
    if (t.requires_grad(v)) {
      Tensor<T>& gv = t.accumulator(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i % d] += g[i] * xv[i];
    }
  });
}

template <typename T>
Var<T> modulate(Var<T> x, Var<T> shift, Var<T> scale_v) {
  Tape<T>& tp = tape_of(x, shift);
  require_rowvec(x.value(), shift.value(), "modulate");
  require_rowvec(x.value(), scale_v.value(), "modulate");
  const std::size_t d = shift.value().size();
  const Tensor<T>& xv = x.value();
  const Tensor<T>& sh = shift.value();
  const Tensor<T>& sc = scale_v.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * (T{1} + sc[i % d]) + sh[i % d];
  return tp.record(std::move(out), {x, shift, scale_v},
                   [x, shift, scale_v, d](Tape<T>& t, std::size_t self) {
                     const Tensor<T>& g = t.grad(self);
                     const Tensor<T>& xv = x.value();
                     const Tensor<T>& sc = scale_v.value();
                     if (t.requires_grad(x)) {
                       Tensor<T>& gx = t.accumulator(x.id);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T{1} + sc[i % d]);
                     }
                     if (t.requires_grad(shift)) {
                       Tensor<T>& gs = t.accumulator(shift.id);
                       for (std::size_t i = 0; i < g.size(); ++i) gs[i % d] += g[i];
                     }
                     if (t.requires_grad(scale_v)) {
                       Tensor<T>& gc = t.accumulator(scale_v.id);
                       for (std::size_t i = 0; i < g.size(); ++i) gc[i % d] += g[i] * xv[i];
                     }
                   });
}

template <typename T>
Var<T> add_gated(Var<T> x, Var<T> h, Var<T> gate) {
  Tape<T>& tp = tape_of(x, h);
  require_same_shape(x.shape(), h.shape(), "add_gated");
  require_rowvec(h.value(), gate.value(), "add_gated");
  const std::size_t d = gate.value().size();
  const Tensor<T>& hv = h.value();
  const Tensor<T>& gv = gate.value();
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += gv[i % d] * hv[i];
  return tp.record(std::move(out), {x, h, gate}, [x, h, gate, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.requires_grad(x)) axpy(T{1}, g, t.accumulator(x.id));
    if (t.requires_grad(h)) {
      Tensor<T>& gh = t.accumulator(h.id);
      const Tensor<T>& gv = gate.value();
      for (std::size_t i = 0; i < g.size(); ++i) gh[i] += g[i] * gv[i % d];
    }
    if (t.requires_grad(gate)) {
      Tensor<T>& gg = t.accumulator(gate.id);
      const Tensor<T>& hv = h.value();
      for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * hv[i];
    }
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tp = tape_of(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  Tensor<T> out({m, n});
  Map<T>(out.data().data(), m, n).noalias() =
      CMap<T>(av.data().data(), m, k) * CMap<T>(bv.data().data(), k, n);
  return tp.record(std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, std::size_t self) {
    CMap<T> g(t.grad(self).data().data(), m, n);
    if (t.requires_grad(a)) {
      Map<T>(t.accumulator(a.id).data().data(), m, k).noalias() +=
          g * CMap<T>(b.value().data().data(), k, n).transpose();
    }
    if (t.requires_grad(b)) {
      Map<T>(t.accumulator(b.id).data().data(), k, n).noalias() +=
          CMap<T>(a.value().data().data(), m, k).transpose() * g;
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  require_matrix(wv, "linear");
  const std::size_t k = wv.dim(0), n = wv.dim(1);
  if (last_dim(xv.shape()) != k) {
    throw DimensionError("linear: input " + shape_str(xv.shape()) + " does not match weight " +
                         shape_str(wv.shape()));
  }
  const bool has_bias = b.valid();
  if (has_bias && b.value().size() != n) {
    throw DimensionError("linear: bias of " + std::to_string(b.value().size()) +
                         " values for output width " + std::to_string(n));
  }
  const std::size_t m = rows_of(xv.shape());
  Shape out_shape = xv.shape();
  if (out_shape.empty()) out_shape = {1};
  out_shape.back() = n;
  Tensor<T> out(out_shape);
  Map<T> o(out.data().data(), m, n);
  o.noalias() = CMap<T>(xv.data().data(), m, k) * CMap<T>(wv.data().data(), k, n);
  if (has_bias) {
    o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value().data().data(), n);
  }
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return tp.record(std::move(out), std::span<const Var<T>>(inputs),
                   [x, w, b, has_bias, m, k, n](Tape<T>& t, std::size_t self) {
                     CMap<T> g(t.grad(self).data().data(), m, n);
                     if (t.requires_grad(x)) {
                       Map<T>(t.accumulator(x.id).data().data(), m, k).noalias() +=
                           g * CMap<T>(w.value().data().data(), k, n).transpose();
                     }
                     if (t.requires_grad(w)) {
                       Map<T>(t.accumulator(w.id).data().data(), k, n).noalias() +=
                           CMap<T>(x.value().data().data(), m, k).transpose() * g;
                     }
                     if (has_bias && t.requires_grad(b)) {
                       Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(
                           t.accumulator(b.id).data().data(), n) += g.colwise().sum();
                     }
                   });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const Tensor<T>& av = a.value();
  require_matrix(av, "transpose");
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor<T> out({n, m});
  Map<T>(out.data().data(), n, m) = CMap<T>(av.data().data(), m, n).transpose();
  return a.tape->record(std::move(out), {a}, [a, m, n](Tape<T>& t, std::size_t self) {
    Map<T>(t.accumulator(a.id).data().data(), m, n) +=
        CMap<T>(t.grad(self).data().data(), n, m).transpose();
  });
}

template <typename T>
Var<T> layernorm(Var<T> x, T eps) {
  const Tensor<T>& xv = x.value();
  const std::size_t d = last_dim(xv.shape());
  const std::size_t rows = rows_of(xv.shape());
  Tensor<T> out(xv.shape());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data().data() + r * d;
    T* o = out.data().data() + r * d;
    T mu{0};
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) o[j] = (in[j] - mu) * rs;
  }
  return x.tape->record(std::move(out), {x},
                        [x, rstd, d, rows](Tape<T>& t, std::size_t self) {
                          const Tensor<T>& g = t.grad(self);
                          const Tensor<T>& yv = t.value(self);
                          Tensor<T>& gx = t.accumulator(x.id);
                          const T inv_d = T{1} / static_cast<T>(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* gr = g.data().data() + r * d;
                            const T* yr = yv.data().data() + r * d;
                            T* dx = gx.data().data() + r * d;
                            T mg{0}, mgy{0};
                            for (std::size_t j = 0; j < d; ++j) {
                              mg += gr[j];
                              mgy += gr[j] * yr[j];
                            }
                            mg *= inv_d;
                            mgy *= inv_d;
                            const T rs = (*rstd)[r];
                            for (std::size_t j = 0; j < d; ++j) dx[j] += rs * (gr[j] - mg - yr[j] * mgy);
                          }
                        });
}

namespace {

// In-place masked softmax over `n` entries. Returns false for a fully masked row.
// Blocked entries come out as exact zeros.
template <typename T>
bool softmax_row(T* z, const T* mask, std::size_t n) {
  Arr<T> zr(z, static_cast<Eigen::Index>(n));
  CArr<T> mr(mask, static_cast<Eigen::Index>(n));
  zr += mr;
  const T mx = zr.maxCoeff();
  if (!std::isfinite(mx)) return false;
  zr = (mr == -std::numeric_limits<T>::infinity()).select(T{0}, (zr - mx).exp());
  zr *= T{1} / zr.sum();
  return true;
}

template <typename T>
void softmax_row_backward(const T* p, const T* g, T* dz, std::size_t n) {
  T dotp{0};
  for (std::size_t j = 0; j < n; ++j) dotp += g[j] * p[j];
  for (std::size_t j = 0; j < n; ++j) dz[j] += p[j] * (g[j] - dotp);
}

}  // namespace

template <typename T>
Var<T> softmax_masked(Var<T> logits, const Tensor<T>& mask) {
  const Tensor<T>& lv = logits.value();
  require_same_shape(lv.shape(), mask.shape(), "softmax_masked");
  const std::size_t n = last_dim(lv.shape());
  const std::size_t rows = rows_of(lv.shape());
  Tensor<T> out = lv;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!softmax_row(out.data().data() + r * n, mask.data().data() + r * n, n)) {
      throw DomainError("softmax_masked: row " + std::to_string(r) + " is fully masked");
    }
  }
  return logits.tape->record(std::move(out), {logits},
                             [logits, n, rows](Tape<T>& t, std::size_t self) {
                               const Tensor<T>& probs = t.value(self);
                               const Tensor<T>& g = t.grad(self);
                               Tensor<T>& gz = t.accumulator(logits.id);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 softmax_row_backward(probs.data().data() + r * n,
                                                      g.data().data() + r * n,
                                                      gz.data().data() + r * n, n);
                               }
                             });
}

template <typename T>
Var<T> masked_attention(Var<T> qkv, const Tensor<T>& mask, std::size_t heads) {
  const Tensor<T>& in = qkv.value();
  require_matrix(in, "masked_attention");
  const std::size_t n = in.dim(0);
  if (in.dim(1) % 3 != 0) throw DimensionError("masked_attention: width must be 3*d");
  const std::size_t d = in.dim(1) / 3;
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("masked_attention: width " + std::to_string(d) +
                         " not divisible by head count " + std::to_string(heads));
  }
  require_same_shape(mask.shape(), Shape{n, n}, "masked_attention mask");
  const std::size_t dh = d / heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  const std::size_t ld = 3 * d;

  Tensor<T> out({n, d});
  auto probs = std::make_shared<typename Tensor<T>::Storage>(heads * n * n);
  for (std::size_t h = 0; h < heads; ++h) {
    CStridedMap<T> q(in.data().data() + h * dh, n, dh, Eigen::OuterStride<>(ld));
    CStridedMap<T> k(in.data().data() + d + h * dh, n, dh, Eigen::OuterStride<>(ld));
    CStridedMap<T> v(in.data().data() + 2 * d + h * dh, n, dh, Eigen::OuterStride<>(ld));
    Map<T> p(probs->data() + h * n * n, n, n);
    p.noalias() = scale * (q * k.transpose());
    for (std::size_t r = 0; r < n; ++r) {
      if (!softmax_row(p.data() + r * n, mask.data().data() + r * n, n)) {
        throw DomainError("masked_attention: query row " + std::to_string(r) + " is fully masked");
      }
    }
    StridedMap<T>(out.data().data() + h * dh, n, dh, Eigen::OuterStride<>(d)).noalias() = p * v;
  }
  return qkv.tape->record(
      std::move(out), {qkv}, [qkv, probs, n, d, dh, heads, scale, ld](Tape<T>& t, std::size_t self) {
        const Tensor<T>& gout = t.grad(self);
        const Tensor<T>& in = qkv.value();
        Tensor<T>& gin = t.accumulator(qkv.id);
        MatR<T> dp(n, n);
        for (std::size_t h = 0; h < heads; ++h) {
          CStridedMap<T> q(in.data().data() + h * dh, n, dh, Eigen::OuterStride<>(ld));
          CStridedMap<T> k(in.data().data() + d + h * dh, n, dh, Eigen::OuterStride<>(ld));
          CStridedMap<T> v(in.data().data() + 2 * d + h * dh, n, dh, Eigen::OuterStride<>(ld));
          StridedMap<T> gq(gin.data().data() + h * dh, n, dh, Eigen::OuterStride<>(ld));
          StridedMap<T> gk(gin.data().data() + d + h * dh, n, dh, Eigen::OuterStride<>(ld));
          StridedMap<T> gv(gin.data().data() + 2 * d + h * dh, n, dh, Eigen::OuterStride<>(ld));
          CStridedMap<T> go(gout.data().data() + h * dh, n, dh, Eigen::OuterStride<>(d));
          CMap<T> p(probs->data() + h * n * n, n, n);
          gv.noalias() += p.transpose() * go;
          dp.noalias() = go * v.transpose();
          // dS = P * (dP - rowsum(dP * P))
          for (std::size_t r = 0; r < n; ++r) {
            T dotp{0};
            for (std::size_t j = 0; j < n; ++j) dotp += dp(r, j) * p(r, j);
            for (std::size_t j = 0; j < n; ++j) dp(r, j) = p(r, j) * (dp(r, j) - dotp) * scale;
          }
          gq.noalias() += dp * k;
          gk.noalias() += dp.transpose() * q;
        }
      });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = static_cast<T>(0.044715);
  const Tensor<T>& xv = x.value();
  const auto n = static_cast<Eigen::Index>(xv.size());
  Tensor<T> out(xv.shape());
  auto th = std::make_shared<Eigen::Array<T, Eigen::Dynamic, 1>>(n);
  CArr<T> v(xv.data().data(), n);
  *th = (c * (v + a * v.cube())).tanh();
  Arr<T>(out.data().data(), n) = T(0.5) * v * (T{1} + *th);
  return x.tape->record(std::move(out), {x}, [x, th, n, c, a](Tape<T>& t, std::size_t self) {
    CArr<T> g(t.grad(self).data().data(), n);
    CArr<T> v(x.value().data().data(), n);
    Arr<T>(t.accumulator(x.id).data().data(), n) +=
        g * (T(0.5) * (T{1} + *th) +
             T(0.5) * v * (T{1} - th->square()) * c * (T{1} + T{3} * a * v.square()));
  });
}

template <typename T>
Var<T> silu(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const auto n = static_cast<Eigen::Index>(xv.size());
  Tensor<T> out(xv.shape());
  CArr<T> v(xv.data().data(), n);
  Arr<T>(out.data().data(), n) = v / (T{1} + (-v).exp());
  return x.tape->record(std::move(out), {x}, [x, n](Tape<T>& t, std::size_t self) {
    CArr<T> g(t.grad(self).data().data(), n);
    CArr<T> v(x.value().data().data(), n);
    const Eigen::Array<T, Eigen::Dynamic, 1> sg = T{1} / (T{1} + (-v).exp());
    Arr<T>(t.accumulator(x.id).data().data(), n) += g * sg * (T{1} + v * (T{1} - sg));
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t d = last_dim(parts[0].shape());
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.tape != parts[0].tape) throw DimensionError("concat_rows: mixed tapes");
    const Tensor<T>& v = p.value();
    if (v.rank() != 2 || v.dim(1) != d) {
      throw DimensionError("concat_rows: part " + shape_str(v.shape()) + " is not [rows x " +
                           std::to_string(d) + "]");
    }
    offsets.push_back(rows * d);
    rows += v.dim(0);
  }
  Tensor<T> out({rows, d});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& src = parts[i].value().storage();
    std::copy(src.begin(), src.end(), out.storage().begin() + static_cast<std::ptrdiff_t>(offsets[i]));
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), std::span<const Var<T>>(inputs),
                               [inputs, offsets](Tape<T>& t, std::size_t self) {
                                 const Tensor<T>& g = t.grad(self);
                                 for (std::size_t i = 0; i < inputs.size(); ++i) {
                                   if (!t.requires_grad(inputs[i])) continue;
                                   Tensor<T>& gi = t.accumulator(inputs[i].id);
                                   for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += g[offsets[i] + j];
                                 }
                               });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t start, std::size_t count) {
  const Tensor<T>& xv = x.value();
  require_matrix(xv, "slice_rows");
  if (start + count > xv.dim(0)) throw DimensionError("slice_rows: range out of bounds");
  const std::size_t d = xv.dim(1);
  Tensor<T> out({count, d});
  std::copy_n(xv.data().data() + start * d, count * d, out.data().data());
  return x.tape->record(std::move(out), {x}, [x, start, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.accumulator(x.id);
    for (std::size_t j = 0; j < g.size(); ++j) gx[start * d + j] += g[j];
  });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t count) {
  const Tensor<T>& xv = x.value();
  require_matrix(xv, "slice_cols");
  if (start + count > xv.dim(1)) throw DimensionError("slice_cols: range out of bounds");
  const std::size_t rows = xv.dim(0), d = xv.dim(1);
  Tensor<T> out({rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data().data() + r * d + start, count, out.data().data() + r * count);
  }
  return x.tape->record(std::move(out), {x}, [x, start, count, rows, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.accumulator(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < count; ++j) gx[r * d + start + j] += g[r * count + j];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gx = t.accumulator(x.id);
    for (std::size_t j = 0; j < g.size(); ++j) gx[j] += g[j];
  });
}

template <typename T>
Var<T> gather_row(Var<T> table, std::size_t row) {
  const Tensor<T>& tv = table.value();
  require_matrix(tv, "gather_row");
  if (row >= tv.dim(0)) {
    throw DomainError("gather_row: row " + std::to_string(row) + " outside table of " +
                      std::to_string(tv.dim(0)) + " rows");
  }
  const std::size_t d = tv.dim(1);
  Tensor<T> out({1, d});
  std::copy_n(tv.data().data() + row * d, d, out.data().data());
  return table.tape->record(std::move(out), {table}, [table, row, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& gt = t.accumulator(table.id);
    for (std::size_t j = 0; j < d; ++j) gt[row * d + j] += g[j];
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  Tensor<T> out({1}, lapflow::sum(x.value()));
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.accumulator(x.id).storage()) v += g;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const T inv = T{1} / static_cast<T>(x.value().size());
  Tensor<T> out({1}, lapflow::sum(x.value()) * inv);
  return x.tape->record(std::move(out), {x}, [x, inv](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0] * inv;
    for (auto& v : t.accumulator(x.id).storage()) v += g;
  });
}

namespace {

template <typename T>
Var<T> squared_error(Var<T> a, Var<T> b, T factor) {
  Tape<T>& tp = tape_of(a, b);
  require_same_shape(a.shape(), b.shape(), "squared_error");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  T acc{0};
  for (std::size_t i = 0; i < av.size(); ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
  Tensor<T> out({1}, acc * factor);
  return tp.record(std::move(out), {a, b}, [a, b, factor](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0] * T{2} * factor;
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.accumulator(a.id);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * (av[i] - bv[i]);
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.accumulator(b.id);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= g * (av[i] - bv[i]);
    }
  });
}

}  // namespace

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  return squared_error(a, b, T{1} / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> sse(Var<T> a, Var<T> b) {
  return squared_error(a, b, T{1});
}

#define LAPFLOW_INSTANTIATE_OPS(T)                                                   \
  template Var<T> add(Var<T>, Var<T>);                                               \
  template Var<T> sub(Var<T>, Var<T>);                                               \
  template Var<T> mul(Var<T>, Var<T>);                                               \
  template Var<T> scale(Var<T>, T);                                                  \
  template Var<T> add_rowvec(Var<T>, Var<T>);                                        \
  template Var<T> mul_rowvec(Var<T>, Var<T>);                                        \
  template Var<T> modulate(Var<T>, Var<T>, Var<T>);                                  \
  template Var<T> add_gated(Var<T>, Var<T>, Var<T>);                                 \
  template Var<T> matmul(Var<T>, Var<T>);                                            \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                    \
  template Var<T> transpose(Var<T>);                                                 \
  template Var<T> layernorm(Var<T>, T);                                              \
  template Var<T> softmax_masked(Var<T>, const Tensor<T>&);                          \
  template Var<T> masked_attention(Var<T>, const Tensor<T>&, std::size_t);           \
  template Var<T> gelu(Var<T>);                                                      \
  template Var<T> silu(Var<T>);                                                      \
  template Var<T> concat_rows(std::span<const Var<T>>);                              \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                      \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                      \
  template Var<T> reshape(Var<T>, Shape);                                            \
  template Var<T> gather_row(Var<T>, std::size_t);                                   \
  template Var<T> sum(Var<T>);                                                       \
  template Var<T> mean(Var<T>);                                                      \
  template Var<T> mse(Var<T>, Var<T>);                                               \
  template Var<T> sse(Var<T>, Var<T>);

LAPFLOW_INSTANTIATE_OPS(float)
LAPFLOW_INSTANTIATE_OPS(double)

}  // namespace lapflow::ops
