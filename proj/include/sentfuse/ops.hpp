// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sentfuse/autodiff.hpp"

namespace sentfuse::ops {

using std::size_t;

namespace detail {

using sentfuse::detail::make_op;

template <class S>
inline void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

// Rows/cols view: 1-D tensors behave as a single row.
template <class S>
inline size_t view_rows(const Tensor<S>& t) {
  return t.ndim() == 2 ? t.shape()[0] : 1;
}

template <class S>
inline size_t view_cols(const Tensor<S>& t) {
  return t.ndim() == 2 ? t.shape()[1] : t.shape()[0];
}

template <class S>
Tensor<S> mm(const Tensor<S>& a, const Tensor<S>& b) {  // A·B
  const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<S> c({m, n});
  for (size_t i = 0; i < m; ++i)
    for (size_t p = 0; p < k; ++p) {
      const S aip = a.at(i, p);
      for (size_t j = 0; j < n; ++j) c.at(i, j) += aip * b.at(p, j);
    }
  return c;
}

template <class S>
Tensor<S> mm_bt(const Tensor<S>& a, const Tensor<S>& b) {  // A·Bᵀ
  const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  Tensor<S> c({m, n});
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      S s = 0;
      for (size_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(j, p);
      c.at(i, j) = s;
    }
  return c;
}

template <class S>
Tensor<S> mm_at(const Tensor<S>& a, const Tensor<S>& b) {  // Aᵀ·B
  const size_t k = a.shape()[0], m = a.shape()[1], n = b.shape()[1];
  Tensor<S> c({m, n});
  for (size_t p = 0; p < k; ++p)
    for (size_t i = 0; i < m; ++i) {
      const S api = a.at(p, i);
      for (size_t j = 0; j < n; ++j) c.at(i, j) += api * b.at(p, j);
    }
  return c;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor<S> out = a.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make_op<S>(
      std::move(out), {a, b},
      [](Node<S>* self) {
        if (self->parents[0]->requires_grad) self->parents[0]->accumulate(self->grad);
        if (self->parents[1]->requires_grad) self->parents[1]->accumulate(self->grad);
      },
      "add");
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a.value(), b.value(), "mul");
  Tensor<S> out = a.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make_op<S>(
      std::move(out), {a, b},
      [](Node<S>* self) {
        const Tensor<S>& g = self->grad;
        auto& pa = self->parents[0];
        auto& pb = self->parents[1];
        if (pa->requires_grad) {
          Tensor<S> ga = g;
          for (size_t i = 0; i < ga.size(); ++i) ga[i] *= pb->value[i];
          pa->accumulate(ga);
        }
        if (pb->requires_grad) {
          Tensor<S> gb = g;
          for (size_t i = 0; i < gb.size(); ++i) gb[i] *= pa->value[i];
          pb->accumulate(gb);
        }
      },
      "mul");
}

template <class S>
Var<S> scale(const Var<S>& x, S c) {
  Tensor<S> out = x.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= c;
  return detail::make_op<S>(
      std::move(out), {x},
      [c](Node<S>* self) {
        Tensor<S> g = self->grad;
        for (size_t i = 0; i < g.size(); ++i) g[i] *= c;
        self->parents[0]->accumulate(g);
      },
      "scale");
}

template <class S>
Var<S> add_const(const Var<S>& x, S c) {
  Tensor<S> out = x.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] += c;
  return detail::make_op<S>(
      std::move(out), {x},
      [](Node<S>* self) { self->parents[0]->accumulate(self->grad); }, "add_const");
}

template <class S>
Var<S> sigmoid(const Var<S>& x) {
  Tensor<S> out = x.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] = S(1) / (S(1) + std::exp(-out[i]));
  return detail::make_op<S>(
      std::move(out), {x},
      [](Node<S>* self) {
        Tensor<S> g = self->grad;
        for (size_t i = 0; i < g.size(); ++i) {
          const S y = self->value[i];
          g[i] *= y * (S(1) - y);
        }
        self->parents[0]->accumulate(g);
      },
      "sigmoid");
}

template <class S>
Var<S> silu(const Var<S>& x) {
  Tensor<S> out = x.value();
  for (size_t i = 0; i < out.size(); ++i) {
    const S s = S(1) / (S(1) + std::exp(-out[i]));
    out[i] *= s;
  }
  return detail::make_op<S>(
      std::move(out), {x},
      [](Node<S>* self) {
        Tensor<S> g = self->grad;
        const Tensor<S>& xin = self->parents[0]->value;
        for (size_t i = 0; i < g.size(); ++i) {
          const S s = S(1) / (S(1) + std::exp(-xin[i]));
          g[i] *= s * (S(1) + xin[i] * (S(1) - s));
        }
        self->parents[0]->accumulate(g);
      },
      "silu");
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  sentfuse::detail::require_2d(a.value(), "matmul");
  sentfuse::detail::require_2d(b.value(), "matmul");
  if (a.value().shape()[1] != b.value().shape()[0]) {
    throw ShapeError("matmul: inner dimensions differ, " + a.value().shape_str() + " vs " +
                     b.value().shape_str());
  }
  return detail::make_op<S>(
      detail::mm(a.value(), b.value()), {a, b},
      [](Node<S>* self) {
        const Tensor<S>& g = self->grad;
        auto& pa = self->parents[0];
        auto& pb = self->parents[1];
        if (pa->requires_grad) pa->accumulate(detail::mm_bt(g, pb->value));
        if (pb->requires_grad) pb->accumulate(detail::mm_at(pa->value, g));
      },
      "matmul");
}

// A·Bᵀ without materializing the transpose.
template <class S>
Var<S> matmul_bt(const Var<S>& a, const Var<S>& b) {
  sentfuse::detail::require_2d(a.value(), "matmul_bt");
  sentfuse::detail::require_2d(b.value(), "matmul_bt");
  if (a.value().shape()[1] != b.value().shape()[1]) {
    throw ShapeError("matmul_bt: trailing dimensions differ, " + a.value().shape_str() +
                     " vs " + b.value().shape_str());
  }
  return detail::make_op<S>(
      detail::mm_bt(a.value(), b.value()), {a, b},
      [](Node<S>* self) {
        const Tensor<S>& g = self->grad;
        auto& pa = self->parents[0];
        auto& pb = self->parents[1];
        if (pa->requires_grad) pa->accumulate(detail::mm(g, pb->value));
        if (pb->requires_grad) pb->accumulate(detail::mm_at(g, pa->value));
      },
      "matmul_bt");
}

// x·W + b with b broadcast over rows; x may be 1-D or 2-D.
template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  sentfuse::detail::require_2d(w.value(), "linear");
  const size_t din = w.value().shape()[0], dout = w.value().shape()[1];
  if (detail::view_cols(x.value()) != din) {
    throw ShapeError("linear: input " + x.value().shape_str() + " incompatible with weight " +
                     w.value().shape_str());
  }
  if (b.value().ndim() != 1 || b.value().size() != dout) {
    throw ShapeError("linear: bias " + b.value().shape_str() + " must be [" +
                     std::to_string(dout) + "]");
  }
  const size_t rows = detail::view_rows(x.value());
  Tensor<S> out = x.value().ndim() == 2 ? Tensor<S>({rows, dout}) : Tensor<S>({dout});
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < dout; ++j) {
      S s = b.value()[j];
      for (size_t p = 0; p < din; ++p) s += x.value()[i * din + p] * w.value().at(p, j);
      out[i * dout + j] = s;
    }
  return detail::make_op<S>(
      std::move(out), {x, w, b},
      [rows, din, dout](Node<S>* self) {
        const Tensor<S>& g = self->grad;
        auto& px = self->parents[0];
        auto& pw = self->parents[1];
        auto& pb = self->parents[2];
        if (px->requires_grad) {
          Tensor<S> gx(px->value.shape());
          for (size_t i = 0; i < rows; ++i)
            for (size_t p = 0; p < din; ++p) {
              S s = 0;
              for (size_t j = 0; j < dout; ++j) s += g[i * dout + j] * pw->value.at(p, j);
              gx[i * din + p] = s;
            }
          px->accumulate(gx);
        }
        if (pw->requires_grad) {
          Tensor<S> gw({din, dout});
          for (size_t i = 0; i < rows; ++i)
            for (size_t p = 0; p < din; ++p) {
              const S xv = px->value[i * din + p];
              for (size_t j = 0; j < dout; ++j) gw.at(p, j) += xv * g[i * dout + j];
            }
          pw->accumulate(gw);
        }
        if (pb->requires_grad) {
          Tensor<S> gb({dout});
          for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < dout; ++j) gb[j] += g[i * dout + j];
          pb->accumulate(gb);
        }
      },
      "linear");
}

// ---------------------------------------------------------------------------
// softmax / normalization / convolution
// ---------------------------------------------------------------------------

// Row-wise softmax with per-row max subtraction. 1-D input is one row.
template <class S>
Var<S> softmax_rows(const Var<S>& x) {
  const size_t rows = detail::view_rows(x.value());
  const size_t cols = detail::view_cols(x.value());
  Tensor<S> out = x.value();
  for (size_t i = 0; i < rows; ++i) {
    S mx = out[i * cols];
    for (size_t j = 1; j < cols; ++j) mx = std::max(mx, out[i * cols + j]);
    S sum = 0;
    for (size_t j = 0; j < cols; ++j) {
      const S e = std::exp(out[i * cols + j] - mx);
      out[i * cols + j] = e;
      sum += e;
    }
    for (size_t j = 0; j < cols; ++j) out[i * cols + j] /= sum;
  }
  return detail::make_op<S>(
      std::move(out), {x},
      [rows, cols](Node<S>* self) {
        const Tensor<S>& g = self->grad;
        const Tensor<S>& y = self->value;
        Tensor<S> gx(self->parents[0]->value.shape());
        for (size_t i = 0; i < rows; ++i) {
          S dot = 0;
          for (size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * y[i * cols + j];
          for (size_t j = 0; j < cols; ++j)
            gx[i * cols + j] = y[i * cols + j] * (g[i * cols + j] - dot);
        }
        self->parents[0]->accumulate(gx);
      },
      "softmax_rows");
}

// Layer normalization over the trailing feature axis, then affine gamma/beta.
template <class S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5)) {
  const size_t rows = detail::view_rows(x.value());
  const size_t d = detail::view_cols(x.value());
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw ShapeError("layer_norm: gamma/beta must have length " + std::to_string(d));
  }
  if (eps <= S(0)) throw ConfigError("layer_norm: eps must be positive");
  Tensor<S> out = x.value();
  Tensor<S> xhat = x.value();
  std::vector<S> inv_std(rows);
  for (size_t i = 0; i < rows; ++i) {
    S mean = 0;
    for (size_t j = 0; j < d; ++j) mean += out[i * d + j];
    mean /= S(d);
    S var = 0;
    for (size_t j = 0; j < d; ++j) {
      const S c = out[i * d + j] - mean;
      var += c * c;
    }
    var /= S(d);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (size_t j = 0; j < d; ++j) {
      const S h = (out[i * d + j] - mean) * is;
      xhat[i * d + j] = h;
      out[i * d + j] = gamma.value()[j] * h + beta.value()[j];
    }
  }
  return detail::make_op<S>(
      std::move(out), {x, gamma, beta},
      [rows, d, xhat, inv_std](Node<S>* self) {
        const Tensor<S>& g = self->grad;
        auto& px = self->parents[0];
        auto& pg = self->parents[1];
        auto& pb = self->parents[2];
        if (pg->requires_grad) {
          Tensor<S> gg({d});
          for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
          pg->accumulate(gg);
        }
        if (pb->requires_grad) {
          Tensor<S> gb({d});
          for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
          pb->accumulate(gb);
        }
        if (px->requires_grad) {
          Tensor<S> gx(px->value.shape());
          for (size_t i = 0; i < rows; ++i) {
            S mean_dh = 0, mean_dh_h = 0;
            for (size_t j = 0; j < d; ++j) {
              const S dh = g[i * d + j] * pg->value[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[i * d + j];
            }
            mean_dh /= S(d);
            mean_dh_h /= S(d);
            for (size_t j = 0; j < d; ++j) {
              const S dh = g[i * d + j] * pg->value[j];
              gx[i * d + j] = inv_std[i] * (dh - mean_dh - xhat[i * d + j] * mean_dh_h);
            }
          }
          px->accumulate(gx);
        }
      },
      "layer_norm");
}

// Depthwise 1-D convolution along the token axis with zero "same" padding.
// kernel is [w×d]; w must be odd.
template <class S>
Var<S> conv1d_same(const Var<S>& x, const Var<S>& kernel, const Var<S>& bias) {
  sentfuse::detail::require_2d(x.value(), "conv1d_same");
  sentfuse::detail::require_2d(kernel.value(), "conv1d_same");
  const size_t len = x.value().shape()[0], d = x.value().shape()[1];
  const size_t w = kernel.value().shape()[0];
  if (w % 2 == 0) throw ConfigError("conv1d_same: kernel width must be odd, got " +
                                    std::to_string(w));
  if (kernel.value().shape()[1] != d || bias.value().size() != d) {
    throw ShapeError("conv1d_same: kernel " + kernel.value().shape_str() + " / bias " +
                     bias.value().shape_str() + " incompatible with input " +
                     x.value().shape_str());
  }
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(w / 2);
  Tensor<S> out({len, d});
  for (size_t t = 0; t < len; ++t)
    for (size_t c = 0; c < d; ++c) {
      S s = bias.value()[c];
      for (size_t j = 0; j < w; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(len))
          s += kernel.value().at(j, c) * x.value().at(static_cast<size_t>(src), c);
      }
      out.at(t, c) = s;
    }
  return detail::make_op<S>(
      std::move(out), {x, kernel, bias},
      [len, d, w, pad](Node<S>* self) {
        const Tensor<S>& g = self->grad;
        auto& px = self->parents[0];
        auto& pk = self->parents[1];
        auto& pb = self->parents[2];
        if (px->requires_grad) {
          Tensor<S> gx({len, d});
          for (size_t t = 0; t < len; ++t)
            for (size_t j = 0; j < w; ++j) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
              for (size_t c = 0; c < d; ++c)
                gx.at(static_cast<size_t>(src), c) += pk->value.at(j, c) * g.at(t, c);
            }
          px->accumulate(gx);
        }
        if (pk->requires_grad) {
          Tensor<S> gk({w, d});
          for (size_t t = 0; t < len; ++t)
            for (size_t j = 0; j < w; ++j) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
              for (size_t c = 0; c < d; ++c)
                gk.at(j, c) += g.at(t, c) * px->value.at(static_cast<size_t>(src), c);
            }
          pk->accumulate(gk);
        }
        if (pb->requires_grad) {
          Tensor<S> gb({d});
          for (size_t t = 0; t < len; ++t)
            for (size_t c = 0; c < d; ++c) gb[c] += g.at(t, c);
          pb->accumulate(gb);
        }
      },
      "conv1d_same");
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

template <class S>
Var<S> slice_rows(const Var<S>& x, size_t start, size_t len) {
  sentfuse::detail::require_2d(x.value(), "slice_rows");
  const size_t rows = x.value().shape()[0], d = x.value().shape()[1];
  if (start + len > rows) {
    throw ShapeError("slice_rows: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") exceeds " + x.value().shape_str());
  }
  Tensor<S> out({len, d});
  std::copy_n(x.value().data().begin() + start * d, len * d, out.data().begin());
  return detail::make_op<S>(
      std::move(out), {x},
      [start, len, d](Node<S>* self) {
        Tensor<S> gx(self->parents[0]->value.shape());
        std::copy_n(self->grad.data().begin(), len * d, gx.data().begin() + start * d);
        self->parents[0]->accumulate(gx);
      },
      "slice_rows");
}

// Single token as a 1-D vector.
template <class S>
Var<S> row(const Var<S>& x, size_t i) {
  sentfuse::detail::require_2d(x.value(), "row");
  const size_t rows = x.value().shape()[0], d = x.value().shape()[1];
  if (i >= rows) throw ShapeError("row: index out of range");
  Tensor<S> out({d});
  std::copy_n(x.value().data().begin() + i * d, d, out.data().begin());
  return detail::make_op<S>(
      std::move(out), {x},
      [i, d](Node<S>* self) {
        Tensor<S> gx(self->parents[0]->value.shape());
        std::copy_n(self->grad.data().begin(), d, gx.data().begin() + i * d);
        self->parents[0]->accumulate(gx);
      },
      "row");
}

// Zero-pad rows up to target (no-op when already target rows).
template <class S>
Var<S> pad_rows(const Var<S>& x, size_t target) {
  sentfuse::detail::require_2d(x.value(), "pad_rows");
  const size_t rows = x.value().shape()[0], d = x.value().shape()[1];
  if (rows > target) throw ShapeError("pad_rows: input already longer than target");
  if (rows == target) return x;
  Tensor<S> out({target, d});
  std::copy_n(x.value().data().begin(), rows * d, out.data().begin());
  return detail::make_op<S>(
      std::move(out), {x},
      [rows, d](Node<S>* self) {
        Tensor<S> gx({rows, d});
        std::copy_n(self->grad.data().begin(), rows * d, gx.data().begin());
        self->parents[0]->accumulate(gx);
      },
      "pad_rows");
}

template <class S>
Var<S> concat_cols(const Var<S>& a, const Var<S>& b) {
  sentfuse::detail::require_2d(a.value(), "concat_cols");
  sentfuse::detail::require_2d(b.value(), "concat_cols");
  const size_t rows = a.value().shape()[0];
  if (b.value().shape()[0] != rows) {
    throw ShapeError("concat_cols: row counts differ, " + a.value().shape_str() + " vs " +
                     b.value().shape_str());
  }
  const size_t da = a.value().shape()[1], db = b.value().shape()[1];
  Tensor<S> out({rows, da + db});
  for (size_t i = 0; i < rows; ++i) {
    std::copy_n(a.value().data().begin() + i * da, da, out.data().begin() + i * (da + db));
    std::copy_n(b.value().data().begin() + i * db, db,
                out.data().begin() + i * (da + db) + da);
  }
  return detail::make_op<S>(
      std::move(out), {a, b},
      [rows, da, db](Node<S>* self) {
        const Tensor<S>& g = self->grad;
        auto& pa = self->parents[0];
        auto& pb = self->parents[1];
        if (pa->requires_grad) {
          Tensor<S> ga({rows, da});
          for (size_t i = 0; i < rows; ++i)
            std::copy_n(g.data().begin() + i * (da + db), da, ga.data().begin() + i * da);
          pa->accumulate(ga);
        }
        if (pb->requires_grad) {
          Tensor<S> gb({rows, db});
          for (size_t i = 0; i < rows; ++i)
            std::copy_n(g.data().begin() + i * (da + db) + da, db,
                        gb.data().begin() + i * db);
          pb->accumulate(gb);
        }
      },
      "concat_cols");
}

template <class S>
Var<S> concat_rows(const Var<S>& a, const Var<S>& b) {
  sentfuse::detail::require_2d(a.value(), "concat_rows");
  sentfuse::detail::require_2d(b.value(), "concat_rows");
  const size_t d = a.value().shape()[1];
  if (b.value().shape()[1] != d) {
    throw ShapeError("concat_rows: column counts differ, " + a.value().shape_str() + " vs " +
                     b.value().shape_str());
  }
  const size_t ra = a.value().shape()[0], rb = b.value().shape()[0];
  Tensor<S> out({ra + rb, d});
  std::copy_n(a.value().data().begin(), ra * d, out.data().begin());
  std::copy_n(b.value().data().begin(), rb * d, out.data().begin() + ra * d);
  return detail::make_op<S>(
      std::move(out), {a, b},
      [ra, rb, d](Node<S>* self) {
        const Tensor<S>& g = self->grad;
        auto& pa = self->parents[0];
        auto& pb = self->parents[1];
        if (pa->requires_grad) {
          Tensor<S> ga({ra, d});
          std::copy_n(g.data().begin(), ra * d, ga.data().begin());
          pa->accumulate(ga);
        }
        if (pb->requires_grad) {
          Tensor<S> gb({rb, d});
          std::copy_n(g.data().begin() + ra * d, rb * d, gb.data().begin());
          pb->accumulate(gb);
        }
      },
      "concat_rows");
}

template <class S>
Var<S> sum_all(const Var<S>& x) {
  S s = 0;
  for (size_t i = 0; i < x.value().size(); ++i) s += x.value()[i];
  return detail::make_op<S>(
      Tensor<S>::scalar(s), {x},
      [](Node<S>* self) {
        const S g = self->grad[0];
        Tensor<S> gx(self->parents[0]->value.shape());
        for (size_t i = 0; i < gx.size(); ++i) gx[i] = g;
        self->parents[0]->accumulate(gx);
      },
      "sum_all");
}

// Broadcast multiply by a scalar Var (shape [1]).
template <class S>
Var<S> mul_scalar(const Var<S>& x, const Var<S>& s) {
  if (s.value().size() != 1) throw ShapeError("mul_scalar: scale must be a scalar");
  const S sv = s.value()[0];
  Tensor<S> out = x.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= sv;
  return detail::make_op<S>(
      std::move(out), {x, s},
      [](Node<S>* self) {
        const Tensor<S>& g = self->grad;
        auto& px = self->parents[0];
        auto& ps = self->parents[1];
        const S sv = ps->value[0];
        if (px->requires_grad) {
          Tensor<S> gx = g;
          for (size_t i = 0; i < gx.size(); ++i) gx[i] *= sv;
          px->accumulate(gx);
        }
        if (ps->requires_grad) {
          S acc = 0;
          for (size_t i = 0; i < g.size(); ++i) acc += g[i] * px->value[i];
          ps->accumulate(Tensor<S>::scalar(acc));
        }
      },
      "mul_scalar");
}

// Pick entries of a 1-D tensor by index (top-k logit gather).
template <class S>
Var<S> gather(const Var<S>& x, std::vector<size_t> idx) {
  if (x.value().ndim() != 1) throw ShapeError("gather: expected a 1-D tensor");
  Tensor<S> out({idx.size()});
  for (size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] >= x.value().size()) throw ShapeError("gather: index out of range");
    out[j] = x.value()[idx[j]];
  }
  return detail::make_op<S>(
      std::move(out), {x},
      [idx](Node<S>* self) {
        Tensor<S> gx(self->parents[0]->value.shape());
        for (size_t j = 0; j < idx.size(); ++j) gx[idx[j]] += self->grad[j];
        self->parents[0]->accumulate(gx);
      },
      "gather");
}

// Diagonal linear state-space scan over the token axis:
//   h_t = lam ⊙ h_{t-1} + b ⊙ x_t,   y_t = c ⊙ h_t + d ⊙ x_t
// Gradients are backpropagated through the unrolled recurrence.
template <class S>
Var<S> ssm_scan(const Var<S>& x, const Var<S>& lam, const Var<S>& b, const Var<S>& c,
                const Var<S>& dft) {
  sentfuse::detail::require_2d(x.value(), "ssm_scan");
  const size_t len = x.value().shape()[0], d = x.value().shape()[1];
  for (const auto* p : {&lam, &b, &c, &dft}) {
    if (p->value().ndim() != 1 || p->value().size() != d)
      throw ShapeError("ssm_scan: per-channel parameters must have length " +
                       std::to_string(d));
  }
  Tensor<S> h({len, d});
  Tensor<S> out({len, d});
  for (size_t t = 0; t < len; ++t)
    for (size_t ch = 0; ch < d; ++ch) {
      const S prev = t == 0 ? S(0) : h.at(t - 1, ch);
      const S ht = lam.value()[ch] * prev + b.value()[ch] * x.value().at(t, ch);
      h.at(t, ch) = ht;
      out.at(t, ch) = c.value()[ch] * ht + dft.value()[ch] * x.value().at(t, ch);
    }
  return detail::make_op<S>(
      std::move(out), {x, lam, b, c, dft},
      [len, d, h](Node<S>* self) {
        const Tensor<S>& g = self->grad;
        auto& px = self->parents[0];
        auto& plam = self->parents[1];
        auto& pb = self->parents[2];
        auto& pc = self->parents[3];
        auto& pd = self->parents[4];
        Tensor<S> gx({len, d});
        Tensor<S> glam({d}), gb({d}), gc({d}), gd({d});
        std::vector<S> gh(d, S(0));
        for (size_t tt = len; tt-- > 0;) {
          for (size_t ch = 0; ch < d; ++ch) {
            const S gy = g.at(tt, ch);
            gc[ch] += gy * h.at(tt, ch);
            gd[ch] += gy * px->value.at(tt, ch);
            S ghc = gh[ch] + gy * pc->value[ch];
            const S hprev = tt == 0 ? S(0) : h.at(tt - 1, ch);
            glam[ch] += ghc * hprev;
            gb[ch] += ghc * px->value.at(tt, ch);
            gx.at(tt, ch) = gy * pd->value[ch] + ghc * pb->value[ch];
            gh[ch] = ghc * plam->value[ch];
          }
        }
        if (px->requires_grad) px->accumulate(gx);
        if (plam->requires_grad) plam->accumulate(glam);
        if (pb->requires_grad) pb->accumulate(gb);
        if (pc->requires_grad) pc->accumulate(gc);
        if (pd->requires_grad) pd->accumulate(gd);
      },
      "ssm_scan");
}

}  // namespace sentfuse::ops
