#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "slimgan/tensor.hpp"

// Differentiable operations over slimgan::Tensor. Every op validates its
// extents, computes the forward value eagerly and, when any input requires a
// gradient, records a closure that pushes the output gradient to its inputs.

namespace slimgan {

namespace detail {

// Gradient buffer of parent `k`, or nullptr when that parent is a constant.
inline double* parent_grad(Node& self, std::size_t k) {
  Node& p = *self.parents[k];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

inline const std::vector<double>& parent_data(Node& self, std::size_t k) { return self.parents[k]->data; }

enum class Broadcast { same, channel, scalar };

inline Broadcast classify_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.ndim() == 0) return Broadcast::scalar;
  if (b.ndim() == 1 && a.ndim() >= 2 && b.dim(0) == a.dim(1)) return Broadcast::channel;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                       shape_str(a.shape()) + " (only equal shapes, per-channel vectors or scalars)");
}

// Maps an element index of `a` to the matching index of the broadcast operand.
struct BroadcastIndex {
  Broadcast kind;
  std::size_t inner = 1;
  std::size_t channels = 1;
  std::size_t operator()(std::size_t e) const {
    switch (kind) {
      case Broadcast::same: return e;
      case Broadcast::scalar: return 0;
      case Broadcast::channel: return (e / inner) % channels;
    }
    return 0;
  }
};

inline BroadcastIndex broadcast_index(const Tensor& a, Broadcast kind) {
  BroadcastIndex idx{kind};
  if (kind == Broadcast::channel) {
    idx.channels = a.dim(1);
    for (std::size_t d = 2; d < a.ndim(); ++d) idx.inner *= a.dim(d);
  }
  return idx;
}

template <class Forward, class Derivative>
Tensor unary(const Tensor& x, Forward f, Derivative df) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor::from_op(x.shape(), std::move(out), {x}, [df](Node& self) {
    double* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = parent_data(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * df(xv[i], self.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  const auto idx = detail::broadcast_index(a, detail::classify_broadcast(a, b, "add"));
  std::vector<double> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = av[e] + bv[idx(e)];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [idx](detail::Node& self) {
    const auto& g = self.grad;
    if (double* ga = detail::parent_grad(self, 0)) {
      for (std::size_t e = 0; e < g.size(); ++e) ga[e] += g[e];
    }
    if (double* gb = detail::parent_grad(self, 1)) {
      for (std::size_t e = 0; e < g.size(); ++e) gb[idx(e)] += g[e];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  const auto idx = detail::broadcast_index(a, detail::classify_broadcast(a, b, "sub"));
  std::vector<double> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = av[e] - bv[idx(e)];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [idx](detail::Node& self) {
    const auto& g = self.grad;
    if (double* ga = detail::parent_grad(self, 0)) {
      for (std::size_t e = 0; e < g.size(); ++e) ga[e] += g[e];
    }
    if (double* gb = detail::parent_grad(self, 1)) {
      for (std::size_t e = 0; e < g.size(); ++e) gb[idx(e)] -= g[e];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  const auto idx = detail::broadcast_index(a, detail::classify_broadcast(a, b, "mul"));
  std::vector<double> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = av[e] * bv[idx(e)];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, [idx](detail::Node& self) {
    const auto& g = self.grad;
    const auto& av = detail::parent_data(self, 0);
    const auto& bv = detail::parent_data(self, 1);
    if (double* ga = detail::parent_grad(self, 0)) {
      for (std::size_t e = 0; e < g.size(); ++e) ga[e] += g[e] * bv[idx(e)];
    }
    if (double* gb = detail::parent_grad(self, 1)) {
      for (std::size_t e = 0; e < g.size(); ++e) gb[idx(e)] += g[e] * av[e];
    }
  });
}

inline Tensor scale(const Tensor& x, double factor) {
  return detail::unary(x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor leaky_relu(const Tensor& x, double slope) {
  return detail::unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
                       [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

/// Domain: x > 0.
inline Tensor log(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

/// Domain: x > 0 unless `p` is a non-negative integer.
inline Tensor pow_scalar(const Tensor& x, double p) {
  return detail::unary(x, [p](double v) { return std::pow(v, p); },
                       [p](double v, double) { return p * std::pow(v, p - 1.0); });
}

// ---------------------------------------------------------------------------
// Reductions and shape plumbing

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::from_op({}, {total}, {x}, [](detail::Node& self) {
    if (double* gx = detail::parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  }
  return Tensor::from_op(std::move(shape), x.values(), {x}, [](detail::Node& self) {
    if (double* gx = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
  });
}

/// Leading block of `x`: index range [0, extents[d]) along every axis.
inline Tensor slice_prefix(const Tensor& x, const Shape& extents) {
  if (extents.size() != x.ndim()) {
    throw DimensionError("slice_prefix: rank of " + shape_str(extents) + " does not match " + shape_str(x.shape()));
  }
  for (std::size_t d = 0; d < extents.size(); ++d) {
    if (extents[d] == 0 || extents[d] > x.dim(d)) {
      throw DimensionError("slice_prefix: " + shape_str(extents) + " is not a prefix of " + shape_str(x.shape()));
    }
  }
  if (extents == x.shape()) return x;

  // Source offset of each output element, computed once and reused by backward.
  const std::size_t n = shape_numel(extents);
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> stride(x.ndim(), 1);
  for (std::size_t d = x.ndim(); d-- > 1;) stride[d - 1] = stride[d] * x.dim(d);
  std::vector<std::size_t> pos(x.ndim(), 0);
  for (std::size_t e = 0; e < n; ++e) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < pos.size(); ++d) off += pos[d] * stride[d];
    src[e] = off;
    for (std::size_t d = pos.size(); d-- > 0;) {
      if (++pos[d] < extents[d]) break;
      pos[d] = 0;
    }
  }
  std::vector<double> out(n);
  const auto xv = x.data();
  for (std::size_t e = 0; e < n; ++e) out[e] = xv[src[e]];
  return Tensor::from_op(extents, std::move(out), {x}, [src = std::move(src)](detail::Node& self) {
    if (double* gx = detail::parent_grad(self, 0)) {
      for (std::size_t e = 0; e < src.size(); ++e) gx[src[e]] += self.grad[e];
    }
  });
}

inline Tensor transpose(const Tensor& x) {
  if (x.ndim() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return Tensor::from_op({c, r}, std::move(out), {x}, [r, c](detail::Node& self) {
    if (double* gx = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
    }
  });
}

/// Gathers rows (axis 0) of `x`; repeated indices accumulate in backward.
inline Tensor index_rows(const Tensor& x, std::vector<std::size_t> rows) {
  if (x.ndim() < 1) throw DimensionError("index_rows: scalar input");
  if (rows.empty()) throw PreconditionError("index_rows: empty index list");
  const std::size_t row = x.numel() / x.dim(0);
  for (std::size_t r : rows) {
    if (r >= x.dim(0)) {
      throw PreconditionError("index_rows: row " + std::to_string(r) + " out of range for " + shape_str(x.shape()));
    }
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  std::vector<double> out(rows.size() * row);
  const auto xv = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(rows[i] * row), row, out.begin() + static_cast<std::ptrdiff_t>(i * row));
  return Tensor::from_op(std::move(shape), std::move(out), {x}, [rows = std::move(rows), row](detail::Node& self) {
    if (double* gx = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t k = 0; k < row; ++k) gx[rows[i] * row + k] += self.grad[i * row + k];
    }
  });
}

/// Stacks tensors with identical trailing extents along axis 0.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw PreconditionError("concat_rows: no inputs");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw DimensionError("concat_rows: scalar input");
  shape[0] = 0;
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.ndim() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw DimensionError("concat_rows: " + shape_str(p.shape()) + " does not match " +
                           shape_str(parts.front().shape()) + " beyond axis 0");
    }
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
    shape[0] += p.dim(0);
  }
  return Tensor::from_op(std::move(shape), std::move(out), parts, [offsets = std::move(offsets)](detail::Node& self) {
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      if (double* gp = detail::parent_grad(self, k)) {
        const std::size_t n = self.parents[k]->data.size();
        for (std::size_t i = 0; i < n; ++i) gp[i] += self.grad[offsets[k] + i];
      }
    }
  });
}

/// Row sums of a matrix: [B×F] -> [B×1].
inline Tensor row_sum(const Tensor& x) {
  if (x.ndim() != 2) throw DimensionError("row_sum: expected a matrix, got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(rows, 0.0);
  const auto xv = x.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i] += xv[i * cols + j];
  return Tensor::from_op({rows, 1}, std::move(out), {x}, [cols](detail::Node& self) {
    if (double* gx = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) gx[i * cols + j] += self.grad[i];
    }
  });
}

/// Sum over spatial axes: [B×C×H×W] -> [B×C].
inline Tensor sum_spatial(const Tensor& x) {
  if (x.ndim() != 4) throw DimensionError("sum_spatial: expected B×C×H×W, got " + shape_str(x.shape()));
  const std::size_t bc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(bc, 0.0);
  const auto xv = x.data();
  for (std::size_t i = 0; i < bc; ++i)
    for (std::size_t k = 0; k < hw; ++k) out[i] += xv[i * hw + k];
  return Tensor::from_op({x.dim(0), x.dim(1)}, std::move(out), {x}, [hw](detail::Node& self) {
    if (double* gx = detail::parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        for (std::size_t k = 0; k < hw; ++k) gx[i * hw + k] += self.grad[i];
    }
  });
}

/// Repeats a [B×C] tensor over an H×W grid: -> [B×C×H×W].
inline Tensor broadcast_spatial(const Tensor& x, std::size_t height, std::size_t width) {
  if (x.ndim() != 2) throw DimensionError("broadcast_spatial: expected B×C, got " + shape_str(x.shape()));
  const std::size_t bc = x.numel(), hw = height * width;
  std::vector<double> out(bc * hw);
  const auto xv = x.data();
  for (std::size_t i = 0; i < bc; ++i) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * hw), hw, xv[i]);
  return Tensor::from_op({x.dim(0), x.dim(1), height, width}, std::move(out), {x}, [hw](detail::Node& self) {
    if (double* gx = detail::parent_grad(self, 0)) {
      const std::size_t bc = self.parents[0]->data.size();
      for (std::size_t i = 0; i < bc; ++i)
        for (std::size_t k = 0; k < hw; ++k) gx[i] += self.grad[i * hw + k];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  return Tensor::from_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const auto& g = self.grad;
    const auto& av = detail::parent_data(self, 0);
    const auto& bv = detail::parent_data(self, 1);
    if (double* ga = detail::parent_grad(self, 0)) {  // g · bᵀ
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (double* gb = detail::parent_grad(self, 1)) {  // aᵀ · g
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

/// Dense layer y = x·Wᵀ + b with x [B×in], W [out×in], b [out] (optional).
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor()) {
  if (x.ndim() != 2 || weight.ndim() != 2 || x.dim(1) != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != out_dim)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  std::vector<double> wt(in * out_dim);
  const auto wv = weight.data();
  for (std::size_t o = 0; o < out_dim; ++o)
    for (std::size_t i = 0; i < in; ++i) wt[i * out_dim + o] = wv[o * in + i];
  std::vector<double> out(rows * out_dim, 0.0);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* orow = &out[r * out_dim];
    if (has_bias) std::copy(bias.data().begin(), bias.data().end(), orow);
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xv[r * in + i];
      const double* wrow = &wt[i * out_dim];
      for (std::size_t o = 0; o < out_dim; ++o) orow[o] += xi * wrow[o];
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return Tensor::from_op({rows, out_dim}, std::move(out), inputs, [rows, in, out_dim, has_bias](detail::Node& self) {
    const auto& g = self.grad;
    const auto& xv = detail::parent_data(self, 0);
    const auto& wv = detail::parent_data(self, 1);
    if (double* gx = detail::parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double go = g[r * out_dim + o];
          const double* wrow = &wv[o * in];
          double* gxrow = gx + r * in;
          for (std::size_t i = 0; i < in; ++i) gxrow[i] += go * wrow[i];
        }
    }
    if (double* gw = detail::parent_grad(self, 1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_dim; ++o) {
          const double go = g[r * out_dim + o];
          const double* xrow = &xv[r * in];
          double* gwrow = gw + o * in;
          for (std::size_t i = 0; i < in; ++i) gwrow[i] += go * xrow[i];
        }
    }
    if (has_bias) {
      if (double* gb = detail::parent_grad(self, 2)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
      }
    }
  });
}

/// Cross-correlation of input [B×Cin×H×W] with kernel [Cout×Cin×kh×kw].
/// Output extent per spatial axis: floor((H + 2·pad − kh) / stride) + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1, std::size_t pad = 0) {
  if (input.ndim() != 4 || kernel.ndim() != 4 || input.dim(1) != kernel.dim(1)) {
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + " incompatible with kernel " +
                         shape_str(kernel.shape()));
  }
  if (stride == 0) throw PreconditionError("conv2d: stride must be >= 1");
  const std::size_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh > h + 2 * pad || kw > w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                         shape_str(input.shape()) + " with pad " + std::to_string(pad));
  }
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  const auto iv = input.data();
  const auto kv = kernel.data();
  std::vector<double> out(batch * cout * oh * ow, 0.0);
  const auto in_at = [=](std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return ((b * cin + c) * h + y) * w + x;
  };
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double k = kv[((o * cin + c) * kh + ky) * kw + kx];
            double* orow = &out[(b * cout + o) * oh * ow];
            for (std::size_t y = 0; y < oh; ++y) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t x = 0; x < ow; ++x) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                orow[y * ow + x] += k * iv[in_at(b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix))];
              }
            }
          }
  return Tensor::from_op({batch, cout, oh, ow}, std::move(out), {input, kernel},
                         [=](detail::Node& self) {
                           const auto& g = self.grad;
                           const auto& iv = detail::parent_data(self, 0);
                           const auto& kv = detail::parent_data(self, 1);
                           double* gi = detail::parent_grad(self, 0);
                           double* gk = detail::parent_grad(self, 1);
                           for (std::size_t b = 0; b < batch; ++b)
                             for (std::size_t o = 0; o < cout; ++o)
                               for (std::size_t c = 0; c < cin; ++c)
                                 for (std::size_t ky = 0; ky < kh; ++ky)
                                   for (std::size_t kx = 0; kx < kw; ++kx) {
                                     const std::size_t kidx = ((o * cin + c) * kh + ky) * kw + kx;
                                     const double k = kv[kidx];
                                     const double* grow = &g[(b * cout + o) * oh * ow];
                                     double kacc = 0.0;
                                     for (std::size_t y = 0; y < oh; ++y) {
                                       const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                                                 static_cast<std::ptrdiff_t>(pad);
                                       if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                       for (std::size_t x = 0; x < ow; ++x) {
                                         const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + kx) -
                                                                   static_cast<std::ptrdiff_t>(pad);
                                         if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                         const std::size_t ii =
                                             in_at(b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                                         const double go = grow[y * ow + x];
                                         if (gi) gi[ii] += go * k;
                                         kacc += go * iv[ii];
                                       }
                                     }
                                     if (gk) gk[kidx] += kacc;
                                   }
                         });
}

/// Nearest-neighbour upsampling of [B×C×H×W] by an integer factor.
inline Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  if (x.ndim() != 4) throw DimensionError("upsample_nearest: expected B×C×H×W, got " + shape_str(x.shape()));
  if (factor == 0) throw PreconditionError("upsample_nearest: factor must be >= 1");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<double> out(planes * oh * ow);
  const auto xv = x.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = xv[(p * h + y / factor) * w + xx / factor];
  return Tensor::from_op({x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                         [planes, h, w, oh, ow, factor](detail::Node& self) {
                           if (double* gx = detail::parent_grad(self, 0)) {
                             for (std::size_t p = 0; p < planes; ++p)
                               for (std::size_t y = 0; y < oh; ++y)
                                 for (std::size_t xx = 0; xx < ow; ++xx)
                                   gx[(p * h + y / factor) * w + xx / factor] += self.grad[(p * oh + y) * ow + xx];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Statistics and losses

/// Per-channel mean and biased (population) variance over every axis except
/// axis 1 of a [B×C] or [B×C×H×W] tensor.
inline std::pair<Tensor, Tensor> batch_stats(const Tensor& x) {
  if (x.ndim() < 2) throw DimensionError("batch_stats: expected B×C(×H×W), got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  std::size_t inner = 1;
  for (std::size_t d = 2; d < x.ndim(); ++d) inner *= x.dim(d);
  const std::size_t count = batch * inner;
  if (count == 0) throw PreconditionError("batch_stats: empty batch");

  std::vector<double> mu(channels, 0.0), var(channels, 0.0);
  const auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t k = 0; k < inner; ++k) mu[c] += xv[(b * channels + c) * inner + k];
  for (double& m : mu) m /= static_cast<double>(count);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t k = 0; k < inner; ++k) {
        const double d = xv[(b * channels + c) * inner + k] - mu[c];
        var[c] += d * d;
      }
  for (double& v : var) v /= static_cast<double>(count);

  const double inv_count = 1.0 / static_cast<double>(count);
  Tensor mean_t = Tensor::from_op({channels}, mu, {x}, [=](detail::Node& self) {
    if (double* gx = detail::parent_grad(self, 0)) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t k = 0; k < inner; ++k) gx[(b * channels + c) * inner + k] += self.grad[c] * inv_count;
    }
  });
  // d var_c / d x = 2 (x − μ_c) / count; the μ dependence cancels because Σ(x − μ) = 0.
  Tensor var_t = Tensor::from_op({channels}, std::move(var), {x}, [=](detail::Node& self) {
    if (double* gx = detail::parent_grad(self, 0)) {
      const auto& xv = detail::parent_data(self, 0);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t k = 0; k < inner; ++k) {
            const std::size_t i = (b * channels + c) * inner + k;
            gx[i] += self.grad[c] * 2.0 * (xv[i] - mu[c]) * inv_count;
          }
    }
  });
  return {mean_t, var_t};
}

/// Forward identity; the result is a fresh constant, so nothing upstream of
/// `x` receives gradient through it.
inline Tensor stop_gradient(const Tensor& x) { return x.clone(false); }

/// Mean over all elements of (a − b)².
inline Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  return mean(square(sub(a, b)));
}

/// Row-wise log-softmax of logits [B×C].
inline Tensor log_softmax(const Tensor& logits) {
  if (logits.ndim() != 2) throw DimensionError("log_softmax: expected B×C, got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<double> out(logits.numel());
  const auto lv = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = lv[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, lv[r * cols + c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(lv[r * cols + c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = lv[r * cols + c] - lse;
  }
  return Tensor::from_op(logits.shape(), std::move(out), {logits}, [rows, cols](detail::Node& self) {
    if (double* gx = detail::parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gsum += self.grad[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          gx[i] += self.grad[i] - std::exp(self.data[i]) * gsum;
        }
      }
    }
  });
}

/// Mean negative log-likelihood of integer labels under softmax(logits).
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.ndim() != 2 || labels.size() != logits.dim(0)) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t cols = logits.dim(1);
  std::vector<std::size_t> picks(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= cols) throw PreconditionError("cross_entropy: label out of range");
    picks[r] = r * cols + labels[r];
  }
  const Tensor lp = reshape(log_softmax(logits), {logits.numel(), 1});
  return scale(mean(index_rows(lp, std::move(picks))), -1.0);
}

}  // namespace slimgan
