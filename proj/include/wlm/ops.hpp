#pragma once

// Differentiable primitives. Each op computes its forward value eagerly and,
// when the graph is recording and an input requires a gradient, appends the
// adjoint that accumulates into the inputs' grad buffers.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "wlm/kernels.hpp"
#include "wlm/rng.hpp"
#include "wlm/tensor.hpp"

namespace wlm {

namespace detail {

template <class T>
void require_2d(const Tensor<T>& t, const char* op) {
  if (t.shape.size() != 2) fail(ErrorKind::dimension, std::string(op) + " expects a matrix, got " + shape_str(t.shape));
}

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape)
    fail(ErrorKind::dimension, std::string(op) + ": shapes " + shape_str(a.shape) + " and " + shape_str(b.shape) +
                                   " differ");
}

template <class T>
Var<T> result(Shape shape, bool requires_grad) {
  auto out = std::make_shared<Tensor<T>>(std::move(shape));
  out->requires_grad = requires_grad;
  return out;
}

// Softmax in place over one row that already carries its additive mask.
template <class T>
void softmax_inplace(T* row, std::size_t m) {
  T mx = row[0];
  for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    row[j] = std::exp(row[j] - mx);
    total += row[j];
  }
  const T inv = static_cast<T>(1.0 / total);
  for (std::size_t j = 0; j < m; ++j) row[j] *= inv;
}

}  // namespace detail

template <class T>
Var<T> matmul(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
  detail::require_2d(*a, "matmul");
  detail::require_2d(*b, "matmul");
  const std::size_t m = a->rows(), k = a->cols(), n = b->cols();
  if (b->rows() != k)
    fail(ErrorKind::dimension, "matmul inner dimensions disagree: " + shape_str(a->shape) + " × " + shape_str(b->shape));
  auto out = detail::result<T>({m, n}, g.needs_grad(a, b));
  kernels::gemm_nn(a->data.data(), b->data.data(), out->data.data(), m, k, n);
  if (out->requires_grad) {
    g.record([a, b, out, m, k, n] {
      if (!out->has_grad()) return;
      if (a->requires_grad) kernels::gemm_nt(out->grad.data(), b->data.data(), a->ensure_grad().data(), m, n, k);
      if (b->requires_grad) kernels::gemm_tn(a->data.data(), out->grad.data(), b->ensure_grad().data(), m, k, n);
    });
  }
  return out;
}

// a · bᵀ, with a [m×k] and b [n×k].
template <class T>
Var<T> matmul_nt(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
  detail::require_2d(*a, "matmul_nt");
  detail::require_2d(*b, "matmul_nt");
  const std::size_t m = a->rows(), k = a->cols(), n = b->rows();
  if (b->cols() != k)
    fail(ErrorKind::dimension,
         "matmul_nt inner dimensions disagree: " + shape_str(a->shape) + " × " + shape_str(b->shape) + "ᵀ");
  auto out = detail::result<T>({m, n}, g.needs_grad(a, b));
  kernels::gemm_nt(a->data.data(), b->data.data(), out->data.data(), m, k, n);
  if (out->requires_grad) {
    g.record([a, b, out, m, k, n] {
      if (!out->has_grad()) return;
      if (a->requires_grad) kernels::gemm_nn(out->grad.data(), b->data.data(), a->ensure_grad().data(), m, n, k);
      if (b->requires_grad) kernels::gemm_tn(out->grad.data(), a->data.data(), b->ensure_grad().data(), m, n, k);
    });
  }
  return out;
}

template <class T>
Var<T> add(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
  detail::require_same(*a, *b, "add");
  auto out = detail::result<T>(a->shape, g.needs_grad(a, b));
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (out->requires_grad) {
    g.record([a, b, out] {
      if (!out->has_grad()) return;
      for (const auto& in : {a, b}) {
        if (!in->requires_grad) continue;
        auto& gi = in->ensure_grad();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += out->grad[i];
      }
    });
  }
  return out;
}

// x [n×d] + bias broadcast over rows.
template <class T>
Var<T> add_rowvec(Graph<T>& g, const Var<T>& x, const Var<T>& bias) {
  detail::require_2d(*x, "add_rowvec");
  const std::size_t n = x->rows(), d = x->cols();
  if (bias->size() != d)
    fail(ErrorKind::dimension, "add_rowvec: bias " + shape_str(bias->shape) + " does not match " + shape_str(x->shape));
  auto out = detail::result<T>(x->shape, g.needs_grad(x, bias));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out->data[r * d + c] = x->data[r * d + c] + bias->data[c];
  if (out->requires_grad) {
    g.record([x, bias, out, n, d] {
      if (!out->has_grad()) return;
      if (x->requires_grad) {
        auto& gx = x->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += out->grad[i];
      }
      if (bias->requires_grad) {
        auto& gb = bias->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) gb[c] += out->grad[r * d + c];
      }
    });
  }
  return out;
}

template <class T>
Var<T> linear(Graph<T>& g, const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  return add_rowvec(g, matmul(g, x, weight), bias);
}

template <class T>
Var<T> mul(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
  detail::require_same(*a, *b, "mul");
  auto out = detail::result<T>(a->shape, g.needs_grad(a, b));
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
  if (out->requires_grad) {
    g.record([a, b, out] {
      if (!out->has_grad()) return;
      if (a->requires_grad) {
        auto& ga = a->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out->grad[i] * b->data[i];
      }
      if (b->requires_grad) {
        auto& gb = b->ensure_grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += out->grad[i] * a->data[i];
      }
    });
  }
  return out;
}

template <class T>
Var<T> scale(Graph<T>& g, const Var<T>& a, T factor) {
  auto out = detail::result<T>(a->shape, g.needs_grad(a));
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * factor;
  if (out->requires_grad) {
    g.record([a, out, factor] {
      if (!out->has_grad()) return;
      auto& ga = a->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out->grad[i] * factor;
    });
  }
  return out;
}

template <class T>
Var<T> sum(Graph<T>& g, const Var<T>& a) {
  auto out = detail::result<T>({1}, g.needs_grad(a));
  double total = 0.0;
  for (T v : a->data) total += v;
  out->data[0] = static_cast<T>(total);
  if (out->requires_grad) {
    g.record([a, out] {
      if (!out->has_grad()) return;
      auto& ga = a->ensure_grad();
      for (auto& v : ga) v += out->grad[0];
    });
  }
  return out;
}

template <class T>
Var<T> relu(Graph<T>& g, const Var<T>& a) {
  auto out = detail::result<T>(a->shape, g.needs_grad(a));
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] > T(0) ? a->data[i] : T(0);
  if (out->requires_grad) {
    g.record([a, out] {
      if (!out->has_grad()) return;
      auto& ga = a->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i)
        if (a->data[i] > T(0)) ga[i] += out->grad[i];
    });
  }
  return out;
}

template <class T>
Var<T> tanh(Graph<T>& g, const Var<T>& a) {
  auto out = detail::result<T>(a->shape, g.needs_grad(a));
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = std::tanh(a->data[i]);
  if (out->requires_grad) {
    g.record([a, out] {
      if (!out->has_grad()) return;
      auto& ga = a->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += out->grad[i] * (T(1) - out->data[i] * out->data[i]);
    });
  }
  return out;
}

// Row-wise layer normalization with population variance.
template <class T>
Var<T> layer_norm(Graph<T>& g, const Var<T>& x, const Var<T>& gain, const Var<T>& bias, double eps = 1e-5) {
  detail::require_2d(*x, "layer_norm");
  const std::size_t n = x->rows(), d = x->cols();
  if (d < 2) fail(ErrorKind::dimension, "layer_norm needs at least 2 features, got " + shape_str(x->shape));
  if (gain->size() != d || bias->size() != d)
    fail(ErrorKind::dimension, "layer_norm: gain " + shape_str(gain->shape) + " / bias " + shape_str(bias->shape) +
                                   " do not match " + shape_str(x->shape));
  if (!(eps > 0.0)) fail(ErrorKind::config, "layer_norm eps must be positive");
  auto out = detail::result<T>(x->shape, g.needs_grad(x, gain, bias));
  std::vector<T> xhat(n * d);
  std::vector<T> rstd(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = x->data.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    rstd[r] = static_cast<T>(inv);
    for (std::size_t c = 0; c < d; ++c) {
      const T xh = static_cast<T>((row[c] - mean) * inv);
      xhat[r * d + c] = xh;
      out->data[r * d + c] = xh * gain->data[c] + bias->data[c];
    }
  }
  if (out->requires_grad) {
    g.record([x, gain, bias, out, n, d, xhat = std::move(xhat), rstd = std::move(rstd)] {
      if (!out->has_grad()) return;
      const auto& dy = out->grad;
      if (gain->requires_grad) {
        auto& gg = gain->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) gg[c] += dy[r * d + c] * xhat[r * d + c];
      }
      if (bias->requires_grad) {
        auto& gb = bias->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) gb[c] += dy[r * d + c];
      }
      if (x->requires_grad) {
        auto& gx = x->ensure_grad();
        for (std::size_t r = 0; r < n; ++r) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double dxh = dy[r * d + c] * gain->data[c];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xhat[r * d + c];
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c) {
            const double dxh = dy[r * d + c] * gain->data[c];
            gx[r * d + c] += static_cast<T>(rstd[r] * (dxh - mean_dxh - xhat[r * d + c] * mean_dxh_xh));
          }
        }
      }
    });
  }
  return out;
}

// Row-wise softmax of (scores + mask). Mask entries are 0 or kMaskSentinel;
// a row whose mask blocks every column is a mask-construction bug.
template <class T>
Var<T> softmax_rows(Graph<T>& g, const Var<T>& scores, const Tensor<T>& mask) {
  detail::require_2d(*scores, "softmax_rows");
  if (mask.shape != scores->shape)
    fail(ErrorKind::dimension,
         "softmax_rows: mask " + shape_str(mask.shape) + " does not match scores " + shape_str(scores->shape));
  const std::size_t n = scores->rows(), m = scores->cols();
  auto out = detail::result<T>(scores->shape, g.needs_grad(scores));
  for (std::size_t r = 0; r < n; ++r) {
    bool any_open = false;
    T* row = out->data.data() + r * m;
    for (std::size_t j = 0; j < m; ++j) {
      const T mv = mask.data[r * m + j];
      any_open = any_open || mv > T(kMaskedThreshold);
      row[j] = scores->data[r * m + j] + mv;
    }
    if (!any_open) fail(ErrorKind::degenerate_row, "softmax row " + std::to_string(r) + " is fully masked");
    detail::softmax_inplace(row, m);
  }
  if (out->requires_grad) {
    g.record([scores, out, n, m] {
      if (!out->has_grad()) return;
      auto& gs = scores->ensure_grad();
      for (std::size_t r = 0; r < n; ++r) {
        const T* p = out->data.data() + r * m;
        const T* dp = out->grad.data() + r * m;
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += static_cast<double>(p[j]) * dp[j];
        for (std::size_t j = 0; j < m; ++j) gs[r * m + j] += static_cast<T>(p[j] * (dp[j] - dot));
      }
    });
  }
  return out;
}

// Gather rows of table [V×d] by id.
template <class T>
Var<T> embedding(Graph<T>& g, const Var<T>& table, std::span<const TokenId> ids) {
  detail::require_2d(*table, "embedding");
  const std::size_t vocab = table->rows(), d = table->cols(), n = ids.size();
  if (n == 0) fail(ErrorKind::dimension, "embedding lookup of an empty id list");
  auto out = detail::result<T>({n, d}, g.needs_grad(table));
  for (std::size_t i = 0; i < n; ++i) {
    if (ids[i] >= vocab)
      fail(ErrorKind::range, "token id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab));
    std::copy_n(table->data.data() + ids[i] * d, d, out->data.data() + i * d);
  }
  if (out->requires_grad) {
    g.record([table, out, ids = std::vector<TokenId>(ids.begin(), ids.end()), d] {
      if (!out->has_grad()) return;
      auto& gt = table->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t c = 0; c < d; ++c) gt[ids[i] * d + c] += out->grad[i * d + c];
    });
  }
  return out;
}

template <class T>
Var<T> concat_cols(Graph<T>& g, const Var<T>& a, const Var<T>& b) {
  detail::require_2d(*a, "concat_cols");
  detail::require_2d(*b, "concat_cols");
  if (a->rows() != b->rows())
    fail(ErrorKind::dimension, "concat_cols: row counts differ, " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  const std::size_t n = a->rows(), da = a->cols(), db = b->cols();
  auto out = detail::result<T>({n, da + db}, g.needs_grad(a, b));
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a->data.data() + r * da, da, out->data.data() + r * (da + db));
    std::copy_n(b->data.data() + r * db, db, out->data.data() + r * (da + db) + da);
  }
  if (out->requires_grad) {
    g.record([a, b, out, n, da, db] {
      if (!out->has_grad()) return;
      if (a->requires_grad) {
        auto& ga = a->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < da; ++c) ga[r * da + c] += out->grad[r * (da + db) + c];
      }
      if (b->requires_grad) {
        auto& gb = b->ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < db; ++c) gb[r * db + c] += out->grad[r * (da + db) + da + c];
      }
    });
  }
  return out;
}

// Within every block of `segment` consecutive rows, row i takes row i−1;
// the first row of a block keeps its own value.
template <class T>
Var<T> shift_rows(Graph<T>& g, const Var<T>& x, std::size_t segment) {
  detail::require_2d(*x, "shift_rows");
  const std::size_t n = x->rows(), d = x->cols();
  if (segment == 0 || n % segment != 0)
    fail(ErrorKind::dimension, "shift_rows: segment " + std::to_string(segment) + " does not tile " + shape_str(x->shape));
  auto source = [segment](std::size_t r) { return r % segment == 0 ? r : r - 1; };
  auto out = detail::result<T>(x->shape, g.needs_grad(x));
  for (std::size_t r = 0; r < n; ++r) std::copy_n(x->data.data() + source(r) * d, d, out->data.data() + r * d);
  if (out->requires_grad) {
    g.record([x, out, n, d, source] {
      if (!out->has_grad()) return;
      auto& gx = x->ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) gx[source(r) * d + c] += out->grad[r * d + c];
    });
  }
  return out;
}

// Inverted dropout. Returns the input unchanged outside training or at rate 0.
template <class T>
Var<T> dropout(Graph<T>& g, const Var<T>& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::config, "dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  auto out = detail::result<T>(x->shape, g.needs_grad(x));
  std::vector<T> keep(x->size());
  const T survivor = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < x->size(); ++i) {
    keep[i] = rng.uniform() < rate ? T(0) : survivor;
    out->data[i] = x->data[i] * keep[i];
  }
  if (out->requires_grad) {
    g.record([x, out, keep = std::move(keep)] {
      if (!out->has_grad()) return;
      auto& gx = x->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += out->grad[i] * keep[i];
    });
  }
  return out;
}

struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t seq = 0;
  std::size_t heads = 1;
};

// Multi-head scaled dot-product core. q, k, v are [(batch·seq) × d] with the
// heads laid out as contiguous column blocks. The additive mask [seq×seq] is
// shared by every sequence and head; key_valid (batch·seq flags, optional)
// blocks attention toward padding.
template <class T>
Var<T> attention(Graph<T>& g, const Var<T>& q, const Var<T>& k, const Var<T>& v, AttentionLayout layout,
                 const Tensor<T>& mask, std::span<const std::uint8_t> key_valid = {}) {
  detail::require_same(*q, *k, "attention");
  detail::require_same(*q, *v, "attention");
  detail::require_2d(*q, "attention");
  const std::size_t B = layout.batch, n = layout.seq, H = layout.heads, d = q->cols();
  if (B * n != q->rows() || H == 0 || d % H != 0)
    fail(ErrorKind::dimension, "attention layout does not fit " + shape_str(q->shape));
  if (mask.shape != Shape{n, n})
    fail(ErrorKind::dimension, "attention mask " + shape_str(mask.shape) + " is not " + std::to_string(n) + "×" +
                                   std::to_string(n));
  if (!key_valid.empty() && key_valid.size() != B * n)
    fail(ErrorKind::dimension, "attention key-validity length does not match the batch");
  const std::size_t hd = d / H;
  const T scale_factor = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  auto out = detail::result<T>(q->shape, g.needs_grad(q, k, v));
  std::vector<T> probs(B * H * n * n);
  const T* Q = q->data.data();
  const T* K = k->data.data();
  const T* V = v->data.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        T* p = probs.data() + ((b * H + h) * n + i) * n;
        const T* qi = Q + (b * n + i) * d + h * hd;
        bool any_open = false;
        for (std::size_t j = 0; j < n; ++j) {
          const T* kj = K + (b * n + j) * d + h * hd;
          T dot = 0;
          for (std::size_t c = 0; c < hd; ++c) dot += qi[c] * kj[c];
          T add_mask = mask.data[i * n + j];
          if (!key_valid.empty() && !key_valid[b * n + j]) add_mask = static_cast<T>(kMaskSentinel);
          any_open = any_open || add_mask > T(kMaskedThreshold);
          p[j] = dot * scale_factor + add_mask;
        }
        if (!any_open)
          fail(ErrorKind::degenerate_row, "attention row " + std::to_string(i) + " of sequence " + std::to_string(b) +
                                              " is fully masked");
        detail::softmax_inplace(p, n);
        T* oi = out->data.data() + (b * n + i) * d + h * hd;
        for (std::size_t j = 0; j < n; ++j) {
          const T w = p[j];
          if (w == T(0)) continue;
          const T* vj = V + (b * n + j) * d + h * hd;
          for (std::size_t c = 0; c < hd; ++c) oi[c] += w * vj[c];
        }
      }
    }
  }
  if (out->requires_grad) {
    g.record([q, k, v, out, B, n, H, d, hd, scale_factor, probs = std::move(probs)] {
      if (!out->has_grad()) return;
      T* dQ = q->requires_grad ? q->ensure_grad().data() : nullptr;
      T* dK = k->requires_grad ? k->ensure_grad().data() : nullptr;
      T* dV = v->requires_grad ? v->ensure_grad().data() : nullptr;
      const T* Q = q->data.data();
      const T* K = k->data.data();
      const T* V = v->data.data();
      const T* dO = out->grad.data();
      std::vector<T> ds(n);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
          for (std::size_t i = 0; i < n; ++i) {
            const T* p = probs.data() + ((b * H + h) * n + i) * n;
            const T* doi = dO + (b * n + i) * d + h * hd;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const T* vj = V + (b * n + j) * d + h * hd;
              T dp = 0;
              for (std::size_t c = 0; c < hd; ++c) dp += doi[c] * vj[c];
              ds[j] = dp;
              dot += static_cast<double>(p[j]) * dp;
              if (dV && p[j] != T(0)) {
                T* dvj = dV + (b * n + j) * d + h * hd;
                for (std::size_t c = 0; c < hd; ++c) dvj[c] += p[j] * doi[c];
              }
            }
            const T* qi = Q + (b * n + i) * d + h * hd;
            T* dqi = dQ ? dQ + (b * n + i) * d + h * hd : nullptr;
            for (std::size_t j = 0; j < n; ++j) {
              const T dsj = static_cast<T>(p[j] * (ds[j] - dot)) * scale_factor;
              if (dsj == T(0)) continue;
              const T* kj = K + (b * n + j) * d + h * hd;
              if (dqi)
                for (std::size_t c = 0; c < hd; ++c) dqi[c] += dsj * kj[c];
              if (dK) {
                T* dkj = dK + (b * n + j) * d + h * hd;
                for (std::size_t c = 0; c < hd; ++c) dkj[c] += dsj * qi[c];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

struct CrossEntropyResult {
  std::size_t targets = 0;  // positions with nonzero weight
  double loss = 0.0;        // 64-bit mean, same value as the returned scalar
};

// Mean over weighted positions of −log softmax(logits)[target].
template <class T>
Var<T> cross_entropy(Graph<T>& g, const Var<T>& logits, std::span<const TokenId> targets, std::span<const T> weights,
                     CrossEntropyResult* info = nullptr) {
  detail::require_2d(*logits, "cross_entropy");
  const std::size_t n = logits->rows(), V = logits->cols();
  if (targets.size() != n || weights.size() != n)
    fail(ErrorKind::dimension, "cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                                   std::to_string(weights.size()) + " weights for logits " + shape_str(logits->shape));
  double total_weight = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == T(0)) continue;
    if (targets[i] >= V)
      fail(ErrorKind::range, "target id " + std::to_string(targets[i]) + " outside vocabulary of " + std::to_string(V));
    total_weight += weights[i];
    ++count;
  }
  if (count == 0) fail(ErrorKind::no_signal, "cross_entropy called with every weight zero");

  std::vector<T> probs(n * V, T(0));
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == T(0)) continue;
    const T* row = logits->data.data() + i * V;
    double mx = row[0];
    for (std::size_t j = 1; j < V; ++j) mx = std::max<double>(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    loss += weights[i] * (log_z - row[targets[i]]);
    for (std::size_t j = 0; j < V; ++j) probs[i * V + j] = static_cast<T>(std::exp(row[j] - log_z));
  }
  loss /= total_weight;
  if (info) *info = {count, loss};

  auto out = detail::result<T>({1}, g.needs_grad(logits));
  out->data[0] = static_cast<T>(loss);
  if (out->requires_grad) {
    g.record([logits, out, probs = std::move(probs), tg = std::vector<TokenId>(targets.begin(), targets.end()),
              w = std::vector<T>(weights.begin(), weights.end()), total_weight, n, V] {
      if (!out->has_grad()) return;
      auto& gl = logits->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        if (w[i] == T(0)) continue;
        const T coef = static_cast<T>(out->grad[0] * w[i] / total_weight);
        for (std::size_t j = 0; j < V; ++j) gl[i * V + j] += coef * probs[i * V + j];
        gl[i * V + tg[i]] -= coef;
      }
    });
  }
  return out;
}

}  // namespace wlm
