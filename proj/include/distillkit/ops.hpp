// Copyright (c) 2026 distillkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "distillkit/rng.hpp"
#include "distillkit/tensor.hpp"

namespace distillkit {

inline constexpr double kCosineNormEpsilon = 1e-8;
inline constexpr double kNormEpsilon = 1e-5;

namespace detail {

// C (M,N) += A (M,K) * B (K,N). k-blocked with a contiguous axpy inner
// loop; accumulation order is fixed, so results are bit-stable run to run.
inline void mm_accum(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kb = 64;
  for (std::size_t k0 = 0; k0 < k; k0 += kb) {
    std::size_t k1 = std::min(k0 + kb, k);
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      for (std::size_t kk = k0; kk < k1; ++kk) {
        double av = a[i * k + kk];
        const double* brow = b + kk * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// C (M,N) += A (M,K) * B^T where B is (N,K). Row-dot-row kernel with four
// independent accumulators folded in a fixed order.
inline void mm_abt_accum(const double* a, const double* b, double* c,
                         std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t kk = 0;
      for (; kk + 4 <= k; kk += 4) {
        s0 += arow[kk] * brow[kk];
        s1 += arow[kk + 1] * brow[kk + 1];
        s2 += arow[kk + 2] * brow[kk + 2];
        s3 += arow[kk + 3] * brow[kk + 3];
      }
      double s = (s0 + s1) + (s2 + s3);
      for (; kk < k; ++kk) s += arow[kk] * brow[kk];
      c[i * n + j] += s;
    }
  }
}

// C (K,N) += A^T * B where A is (M,K) and B is (M,N).
inline void mm_atb_accum(const double* a, const double* b, double* c,
                         std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double av = a[i * k + kk];
      double* crow = c + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline std::size_t rows_of(const Shape& s) {
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and structural ops
// ---------------------------------------------------------------------------

// add supports equal shapes, or a `b` whose shape equals the trailing
// dims of `a` (row-vector broadcast, used for biases).
inline Tensor add(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool same = sa == sb;
  bool suffix = !same && sb.size() <= sa.size() &&
                std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!same && !suffix) {
    throw ShapeError("add: " + shape_str(sa) + " vs " + shape_str(sb));
  }
  std::size_t nb = b.numel();
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % nb];
  auto an = a.handle();
  auto bn = b.handle();
  return Tensor::make_op("add", sa, std::move(out), {a, b},
                         [an, bn, nb](detail::TensorNode& node) {
                           if (an->requires_grad) {
                             an->ensure_grad();
                             for (std::size_t i = 0; i < node.grad.size(); ++i)
                               an->grad[i] += node.grad[i];
                           }
                           if (bn->requires_grad) {
                             bn->ensure_grad();
                             for (std::size_t i = 0; i < node.grad.size(); ++i)
                               bn->grad[i % nb] += node.grad[i];
                           }
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("sub: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto an = a.handle();
  auto bn = b.handle();
  return Tensor::make_op("sub", a.shape(), std::move(out), {a, b},
                         [an, bn](detail::TensorNode& node) {
                           if (an->requires_grad) {
                             an->ensure_grad();
                             for (std::size_t i = 0; i < node.grad.size(); ++i)
                               an->grad[i] += node.grad[i];
                           }
                           if (bn->requires_grad) {
                             bn->ensure_grad();
                             for (std::size_t i = 0; i < node.grad.size(); ++i)
                               bn->grad[i] -= node.grad[i];
                           }
                         });
}

inline Tensor scale(const Tensor& x, double c) {
  if (!std::isfinite(c)) throw NumericError("scale: factor is non-finite");
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xv[i];
  auto xn = x.handle();
  return Tensor::make_op("scale", x.shape(), std::move(out), {x},
                         [xn, c](detail::TensorNode& node) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < node.grad.size(); ++i)
                             xn->grad[i] += c * node.grad[i];
                         });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " +
                     shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  auto xn = x.handle();
  return Tensor::make_op("reshape", std::move(shape), std::move(out), {x},
                         [xn](detail::TensorNode& node) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < node.grad.size(); ++i)
                             xn->grad[i] += node.grad[i];
                         });
}

inline Tensor transpose2d(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose2d: need rank 2");
  std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  auto xn = x.handle();
  return Tensor::make_op("transpose2d", {n, m}, std::move(out), {x},
                         [xn, m, n](detail::TensorNode& node) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               xn->grad[i * n + j] += node.grad[j * m + i];
                         });
}

inline Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  if (x.rank() != 2) throw ShapeError("slice_rows: need rank 2");
  std::size_t m = x.dim(0), n = x.dim(1);
  if (r0 >= r1 || r1 > m) throw ShapeError("slice_rows: bad range");
  std::vector<double> out(x.values().begin() + r0 * n,
                          x.values().begin() + r1 * n);
  auto xn = x.handle();
  return Tensor::make_op("slice_rows", {r1 - r0, n}, std::move(out), {x},
                         [xn, r0, n](detail::TensorNode& node) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < node.grad.size(); ++i)
                             xn->grad[r0 * n + i] += node.grad[i];
                         });
}

inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  if (x.rank() != 2) throw ShapeError("slice_cols: need rank 2");
  std::size_t m = x.dim(0), n = x.dim(1);
  if (c0 >= c1 || c1 > n) throw ShapeError("slice_cols: bad range");
  std::size_t w = c1 - c0;
  std::vector<double> out(m * w);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = xv[i * n + c0 + j];
  auto xn = x.handle();
  return Tensor::make_op("slice_cols", {m, w}, std::move(out), {x},
                         [xn, c0, n, m, w](detail::TensorNode& node) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < w; ++j)
                               xn->grad[i * n + c0 + j] +=
                                   node.grad[i * w + j];
                         });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  std::size_t m = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m) {
      throw ShapeError("concat_cols: row mismatch");
    }
    total += p.dim(1);
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::size_t w = p.dim(1);
    auto pv = p.values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out[i * total + off + j] = pv[i * w + j];
    off += w;
  }
  std::vector<std::shared_ptr<detail::TensorNode>> handles;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    handles.push_back(p.handle());
    widths.push_back(p.dim(1));
  }
  return Tensor::make_op(
      "concat_cols", {m, total}, std::move(out), parts,
      [handles, widths, m, total](detail::TensorNode& node) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < handles.size(); ++pi) {
          std::size_t w = widths[pi];
          if (handles[pi]->requires_grad) {
            handles[pi]->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < w; ++j)
                handles[pi]->grad[i * w + j] += node.grad[i * total + off + j];
          }
          off += w;
        }
      });
}

// Zero padding on both sides of the column (time) axis of a 2D tensor.
inline Tensor pad_cols(const Tensor& x, std::size_t before, std::size_t after) {
  if (x.rank() != 2) throw ShapeError("pad_cols: need rank 2");
  std::size_t m = x.dim(0), n = x.dim(1);
  std::size_t w = before + n + after;
  std::vector<double> out(m * w, 0.0);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * w + before + j] = xv[i * n + j];
  auto xn = x.handle();
  return Tensor::make_op("pad_cols", {m, w}, std::move(out), {x},
                         [xn, m, n, w, before](detail::TensorNode& node) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               xn->grad[i * n + j] +=
                                   node.grad[i * w + before + j];
                         });
}

// Stack rank-2 items (T_i, D) into (B, T_max, D); rows past each item's
// length stay zero. Inverse of slice_item.
inline Tensor stack_items(const std::vector<Tensor>& items, std::size_t t_max) {
  if (items.empty()) throw ShapeError("stack_items: no inputs");
  std::size_t d = items[0].dim(1);
  for (const auto& it : items) {
    if (it.rank() != 2 || it.dim(1) != d) {
      throw ShapeError("stack_items: width mismatch");
    }
    if (it.dim(0) > t_max) throw ShapeError("stack_items: item longer than t_max");
  }
  std::size_t b = items.size();
  std::vector<double> out(b * t_max * d, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    auto v = items[i].values();
    std::copy(v.begin(), v.end(), out.begin() + i * t_max * d);
  }
  std::vector<std::shared_ptr<detail::TensorNode>> handles;
  std::vector<std::size_t> lens;
  for (const auto& it : items) {
    handles.push_back(it.handle());
    lens.push_back(it.dim(0));
  }
  return Tensor::make_op(
      "stack_items", {b, t_max, d}, std::move(out), items,
      [handles, lens, t_max, d](detail::TensorNode& node) {
        for (std::size_t i = 0; i < handles.size(); ++i) {
          if (!handles[i]->requires_grad) continue;
          handles[i]->ensure_grad();
          std::size_t n = lens[i] * d;
          for (std::size_t j = 0; j < n; ++j)
            handles[i]->grad[j] += node.grad[i * t_max * d + j];
        }
      });
}

// (B, T, D) -> (len, D) for batch item i.
inline Tensor slice_item(const Tensor& x, std::size_t i, std::size_t len) {
  if (x.rank() != 3) throw ShapeError("slice_item: need rank 3");
  std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  if (i >= b || len == 0 || len > t) throw ShapeError("slice_item: bad index");
  std::vector<double> out(x.values().begin() + i * t * d,
                          x.values().begin() + i * t * d + len * d);
  auto xn = x.handle();
  return Tensor::make_op("slice_item", {len, d}, std::move(out), {x},
                         [xn, i, t, d, len](detail::TensorNode& node) {
                           xn->ensure_grad();
                           for (std::size_t j = 0; j < len * d; ++j)
                             xn->grad[i * t * d + j] += node.grad[j];
                         });
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

// Exact Gaussian-CDF gelu, not the tanh fit.
inline Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
  }
  auto xn = x.handle();
  return Tensor::make_op(
      "gelu", x.shape(), std::move(out), {x},
      [xn](detail::TensorNode& node) {
        constexpr double kInvSqrt2Pi = 0.39894228040143267794;
        xn->ensure_grad();
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
          double v = xn->values[i];
          double phi = 0.5 * (1.0 + std::erf(v * 0.70710678118654752440));
          double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
          xn->grad[i] += node.grad[i] * (phi + v * pdf);
        }
      });
}

// Numerically stable log(sigmoid(x)).
inline Tensor log_sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = xv[i];
    out[i] = v >= 0.0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
  }
  auto xn = x.handle();
  return Tensor::make_op("log_sigmoid", x.shape(), std::move(out), {x},
                         [xn](detail::TensorNode& node) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < node.grad.size(); ++i) {
                             double v = xn->values[i];
                             // d/dx log sigmoid(x) = sigmoid(-x)
                             double s = v >= 0.0
                                            ? std::exp(-v) / (1.0 + std::exp(-v))
                                            : 1.0 / (1.0 + std::exp(v));
                             xn->grad[i] += node.grad[i] * s;
                           }
                         });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto xn = x.handle();
  return Tensor::make_op("sum", {1}, {s}, {x},
                         [xn](detail::TensorNode& node) {
                           xn->ensure_grad();
                           double g = node.grad[0];
                           for (double& gv : xn->grad) gv += g;
                         });
}

inline Tensor mean_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  double inv = 1.0 / static_cast<double>(x.numel());
  auto xn = x.handle();
  return Tensor::make_op("mean", {1}, {s * inv}, {x},
                         [xn, inv](detail::TensorNode& node) {
                           xn->ensure_grad();
                           double g = node.grad[0] * inv;
                           for (double& gv : xn->grad) gv += g;
                         });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: need rank-2 operands, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::mm_accum(a.values().data(), b.values().data(), out.data(), m, k, n);
  auto an = a.handle();
  auto bn = b.handle();
  return Tensor::make_op(
      "matmul", {m, n}, std::move(out), {a, b},
      [an, bn, m, k, n](detail::TensorNode& node) {
        if (an->requires_grad) {
          an->ensure_grad();
          // dA += dC * B^T
          detail::mm_abt_accum(node.grad.data(), bn->values.data(),
                               an->grad.data(), m, n, k);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          // dB += A^T * dC
          detail::mm_atb_accum(an->values.data(), node.grad.data(),
                               bn->grad.data(), m, k, n);
        }
      });
}

// y = x W + b with W (in, out) and optional bias (out).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  if (!b.defined()) return y;
  return add(y, b);
}

// ---------------------------------------------------------------------------
// conv1d
// ---------------------------------------------------------------------------

// x (B, Cin, T), w (Cout, Cin/groups, K), optional bias (Cout), stride >= 1.
// No implicit padding; compose with pad_cols for same-style padding.
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     std::size_t stride, std::size_t groups) {
  if (x.rank() != 3 || w.rank() != 3) {
    throw ShapeError("conv1d: x must be (B,Cin,T) and w (Cout,Cin/g,K)");
  }
  if (stride == 0 || groups == 0) throw ShapeError("conv1d: bad stride/groups");
  std::size_t bsz = x.dim(0), cin = x.dim(1), t = x.dim(2);
  std::size_t cout = w.dim(0), cing = w.dim(1), k = w.dim(2);
  if (cin % groups != 0 || cout % groups != 0 || cing != cin / groups) {
    throw ShapeError("conv1d: channel/group mismatch, x " +
                     shape_str(x.shape()) + " w " + shape_str(w.shape()) +
                     " groups " + std::to_string(groups));
  }
  if (k > t) {
    throw ShapeError("conv1d: kernel " + std::to_string(k) +
                     " longer than input " + std::to_string(t));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError("conv1d: bias shape");
  }
  std::size_t tout = (t - k) / stride + 1;
  std::size_t coutg = cout / groups;
  std::vector<double> out(bsz * cout * tout, 0.0);
  auto xv = x.values();
  auto wv = w.values();

  std::vector<double> col(cing * k * tout);
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t g = 0; g < groups; ++g) {
      // im2col for this (item, group)
      for (std::size_t ci = 0; ci < cing; ++ci) {
        const double* src = &xv[(b * cin + g * cing + ci) * t];
        for (std::size_t kk = 0; kk < k; ++kk) {
          double* dst = &col[(ci * k + kk) * tout];
          for (std::size_t to = 0; to < tout; ++to) {
            dst[to] = src[to * stride + kk];
          }
        }
      }
      detail::mm_accum(&wv[g * coutg * cing * k], col.data(),
                       &out[(b * cout + g * coutg) * tout], coutg, cing * k,
                       tout);
    }
  }
  if (bias.defined()) {
    auto bv = bias.values();
    for (std::size_t b = 0; b < bsz; ++b)
      for (std::size_t co = 0; co < cout; ++co) {
        double add_v = bv[co];
        double* row = &out[(b * cout + co) * tout];
        for (std::size_t to = 0; to < tout; ++to) row[to] += add_v;
      }
  }

  auto xn = x.handle();
  auto wn = w.handle();
  std::vector<Tensor> parents{x, w};
  auto bnode = bias.defined() ? bias.handle() : nullptr;
  if (bias.defined()) parents.push_back(bias);
  return Tensor::make_op(
      "conv1d", {bsz, cout, tout}, std::move(out), std::move(parents),
      [xn, wn, bnode, bsz, cin, t, cout, cing, k, stride, groups,
       tout](detail::TensorNode& node) {
        std::size_t coutg = cout / groups;
        std::vector<double> col(cing * k * tout);
        std::vector<double> dcol(cing * k * tout);
        for (std::size_t b = 0; b < bsz; ++b) {
          for (std::size_t g = 0; g < groups; ++g) {
            const double* dout = &node.grad[(b * cout + g * coutg) * tout];
            if (wn->requires_grad) {
              // rebuild col, dW_g += dOut_g * col^T
              for (std::size_t ci = 0; ci < cing; ++ci) {
                const double* src = &xn->values[(b * cin + g * cing + ci) * t];
                for (std::size_t kk = 0; kk < k; ++kk) {
                  double* dst = &col[(ci * k + kk) * tout];
                  for (std::size_t to = 0; to < tout; ++to)
                    dst[to] = src[to * stride + kk];
                }
              }
              wn->ensure_grad();
              detail::mm_abt_accum(dout, col.data(),
                                   &wn->grad[g * coutg * cing * k], coutg,
                                   tout, cing * k);
            }
            if (xn->requires_grad) {
              std::fill(dcol.begin(), dcol.end(), 0.0);
              detail::mm_atb_accum(&wn->values[g * coutg * cing * k], dout,
                                   dcol.data(), coutg, cing * k, tout);
              xn->ensure_grad();
              for (std::size_t ci = 0; ci < cing; ++ci) {
                double* dst = &xn->grad[(b * cin + g * cing + ci) * t];
                for (std::size_t kk = 0; kk < k; ++kk) {
                  const double* src = &dcol[(ci * k + kk) * tout];
                  for (std::size_t to = 0; to < tout; ++to)
                    dst[to * stride + kk] += src[to];
                }
              }
            }
          }
          if (bnode && bnode->requires_grad) {
            bnode->ensure_grad();
            for (std::size_t co = 0; co < cout; ++co) {
              const double* row = &node.grad[(b * cout + co) * tout];
              double s = 0.0;
              for (std::size_t to = 0; to < tout; ++to) s += row[to];
              bnode->grad[co] += s;
            }
          }
        }
      });
}

inline Tensor conv1d(const Tensor& x, const Tensor& w, std::size_t stride,
                     std::size_t groups) {
  return conv1d(x, w, Tensor(), stride, groups);
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

// Normalizes over the trailing axis; gain/bias have that axis's extent.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = kNormEpsilon) {
  if (x.rank() < 1) throw ShapeError("layer_norm: need rank >= 1");
  std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias must have extent " +
                     std::to_string(d));
  }
  std::size_t rows = detail::rows_of(x.shape());
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xv[r * d];
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double istd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = istd;
    for (std::size_t j = 0; j < d; ++j) {
      double h = (row[j] - mu) * istd;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  auto xn = x.handle();
  auto gn = gain.handle();
  auto bn = bias.handle();
  auto xhat_s = std::make_shared<std::vector<double>>(std::move(xhat));
  auto istd_s = std::make_shared<std::vector<double>>(std::move(inv_std));
  return Tensor::make_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, xhat_s, istd_s, rows, d](detail::TensorNode& node) {
        const auto& xh = *xhat_s;
        const auto& istd = *istd_s;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = &node.grad[r * d];
          const double* h = &xh[r * d];
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (std::size_t j = 0; j < d; ++j) gn->grad[j] += dy[j] * h[j];
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t j = 0; j < d; ++j) bn->grad[j] += dy[j];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              double dh = dy[j] * gn->values[j];
              m1 += dh;
              m2 += dh * h[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              double dh = dy[j] * gn->values[j];
              xn->grad[r * d + j] += (dh - m1 - h[j] * m2) * istd[r];
            }
          }
        }
      });
}

// x (C, T); statistics are per group over (C/groups, T); gain/bias (C).
inline Tensor group_norm(const Tensor& x, std::size_t groups,
                         const Tensor& gain, const Tensor& bias,
                         double eps = kNormEpsilon) {
  if (x.rank() != 2) throw ShapeError("group_norm: need (C, T)");
  std::size_t c = x.dim(0), t = x.dim(1);
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm: channels " + std::to_string(c) +
                     " not divisible into " + std::to_string(groups) +
                     " groups");
  }
  if (gain.numel() != c || bias.numel() != c) {
    throw ShapeError("group_norm: gain/bias must have extent " +
                     std::to_string(c));
  }
  std::size_t cg = c / groups;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(groups);
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (std::size_t g = 0; g < groups; ++g) {
    std::size_t base = g * cg * t;
    std::size_t n = cg * t;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += xv[base + i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = xv[base + i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double istd = 1.0 / std::sqrt(var + eps);
    inv_std[g] = istd;
    for (std::size_t ci = 0; ci < cg; ++ci) {
      std::size_t ch = g * cg + ci;
      for (std::size_t ti = 0; ti < t; ++ti) {
        double h = (xv[ch * t + ti] - mu) * istd;
        xhat[ch * t + ti] = h;
        out[ch * t + ti] = h * gv[ch] + bv[ch];
      }
    }
  }
  auto xn = x.handle();
  auto gn = gain.handle();
  auto bn = bias.handle();
  auto xhat_s = std::make_shared<std::vector<double>>(std::move(xhat));
  auto istd_s = std::make_shared<std::vector<double>>(std::move(inv_std));
  return Tensor::make_op(
      "group_norm", x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, xhat_s, istd_s, groups, cg, t](detail::TensorNode& node) {
        const auto& xh = *xhat_s;
        const auto& istd = *istd_s;
        for (std::size_t g = 0; g < groups; ++g) {
          std::size_t n = cg * t;
          if (gn->requires_grad || bn->requires_grad) {
            for (std::size_t ci = 0; ci < cg; ++ci) {
              std::size_t ch = g * cg + ci;
              double dg = 0.0, db = 0.0;
              for (std::size_t ti = 0; ti < t; ++ti) {
                dg += node.grad[ch * t + ti] * xh[ch * t + ti];
                db += node.grad[ch * t + ti];
              }
              if (gn->requires_grad) {
                gn->ensure_grad();
                gn->grad[ch] += dg;
              }
              if (bn->requires_grad) {
                bn->ensure_grad();
                bn->grad[ch] += db;
              }
            }
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t ci = 0; ci < cg; ++ci) {
              std::size_t ch = g * cg + ci;
              for (std::size_t ti = 0; ti < t; ++ti) {
                double dh = node.grad[ch * t + ti] * gn->values[ch];
                m1 += dh;
                m2 += dh * xh[ch * t + ti];
              }
            }
            m1 /= static_cast<double>(n);
            m2 /= static_cast<double>(n);
            for (std::size_t ci = 0; ci < cg; ++ci) {
              std::size_t ch = g * cg + ci;
              for (std::size_t ti = 0; ti < t; ++ti) {
                double dh = node.grad[ch * t + ti] * gn->values[ch];
                xn->grad[ch * t + ti] +=
                    (dh - m1 - xh[ch * t + ti] * m2) * istd[g];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

// Softmax over the trailing axis with max subtraction.
inline Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax: need rank >= 1");
  std::size_t d = x.shape().back();
  std::size_t rows = detail::rows_of(x.shape());
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xv[r * d];
    double m = row[0];
    for (std::size_t j = 1; j < d; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double e = std::exp(row[j] - m);
      out[r * d + j] = e;
      s += e;
    }
    double inv = 1.0 / s;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] *= inv;
  }
  auto xn = x.handle();
  return Tensor::make_op(
      "softmax", x.shape(), std::move(out), {x},
      [xn, rows, d](detail::TensorNode& node) {
        xn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = &node.values[r * d];
          const double* dy = &node.grad[r * d];
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += dy[j] * y[j];
          for (std::size_t j = 0; j < d; ++j)
            xn->grad[r * d + j] += y[j] * (dy[j] - dot);
        }
      });
}

// ---------------------------------------------------------------------------
// distance / similarity
// ---------------------------------------------------------------------------

// Mean absolute difference over all elements; scalar output. The
// subgradient at exact ties is taken as zero.
inline Tensor l1_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("l1_distance: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  auto av = a.values();
  auto bv = b.values();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += std::fabs(av[i] - bv[i]);
  double inv = 1.0 / static_cast<double>(av.size());
  auto an = a.handle();
  auto bn = b.handle();
  return Tensor::make_op(
      "l1_distance", {1}, {s * inv}, {a, b},
      [an, bn, inv](detail::TensorNode& node) {
        double g = node.grad[0] * inv;
        for (std::size_t i = 0; i < an->values.size(); ++i) {
          double diff = an->values[i] - bn->values[i];
          double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          if (an->requires_grad) {
            an->ensure_grad();
            an->grad[i] += g * sgn;
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            bn->grad[i] -= g * sgn;
          }
        }
      });
}

// Cosine over the trailing (channel) axis: (..., D) x (..., D) -> (...).
// Each norm is stabilized with +1e-8, keeping outputs strictly in (-1, 1).
inline Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("cosine_similarity: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  if (a.rank() < 1) throw ShapeError("cosine_similarity: need rank >= 1");
  std::size_t d = a.shape().back();
  std::size_t rows = detail::rows_of(a.shape());
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * d];
    const double* y = &bv[r * d];
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += x[j] * y[j];
      na += x[j] * x[j];
      nb += y[j] * y[j];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    out[r] = dot / ((na + kCosineNormEpsilon) * (nb + kCosineNormEpsilon));
  }
  auto an = a.handle();
  auto bn = b.handle();
  return Tensor::make_op(
      "cosine_similarity", std::move(out_shape), std::move(out), {a, b},
      [an, bn, rows, d](detail::TensorNode& node) {
        for (std::size_t r = 0; r < rows; ++r) {
          const double* x = &an->values[r * d];
          const double* y = &bn->values[r * d];
          double dot = 0.0, na2 = 0.0, nb2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dot += x[j] * y[j];
            na2 += x[j] * x[j];
            nb2 += y[j] * y[j];
          }
          double na = std::sqrt(na2);
          double nb = std::sqrt(nb2);
          double ra = na + kCosineNormEpsilon;
          double rb = nb + kCosineNormEpsilon;
          double inv = 1.0 / (ra * rb);
          double c = dot * inv;
          double g = node.grad[r];
          if (an->requires_grad) {
            an->ensure_grad();
            double coef = na > 0.0 ? c / (na * ra) : 0.0;
            for (std::size_t j = 0; j < d; ++j)
              an->grad[r * d + j] += g * (y[j] * inv - coef * x[j]);
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            double coef = nb > 0.0 ? c / (nb * rb) : 0.0;
            for (std::size_t j = 0; j < d; ++j)
              bn->grad[r * d + j] += g * (x[j] * inv - coef * y[j]);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

// Inverted dropout; draws one uniform per element from the given stream.
inline Tensor dropout(const Tensor& x, double rate, RngStream& stream) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ContractError("dropout: rate must be in [0, 1)");
  }
  if (rate == 0.0) return x;
  double keep = 1.0 - rate;
  double inv = 1.0 / keep;
  auto xv = x.values();
  std::vector<double> out(x.numel());
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double m = stream.next_unit() < rate ? 0.0 : inv;
    (*mask)[i] = m;
    out[i] = xv[i] * m;
  }
  auto xn = x.handle();
  return Tensor::make_op("dropout", x.shape(), std::move(out), {x},
                         [xn, mask](detail::TensorNode& node) {
                           xn->ensure_grad();
                           for (std::size_t i = 0; i < node.grad.size(); ++i)
                             xn->grad[i] += node.grad[i] * (*mask)[i];
                         });
}

// Mean of a list of scalar tensors (loss aggregation helper).
inline Tensor mean_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("mean_scalars: no inputs");
  Tensor acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return scale(acc, 1.0 / static_cast<double>(xs.size()));
}

}  // namespace distillkit
