#pragma once

// Value-level kernels shared by the recorded ops and by tape replay. Nothing
// in here touches a Tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sharpen_focus/autodiff/tape.hpp"
#include "sharpen_focus/autodiff/tensor.hpp"

namespace sharpen_focus::ad::kernels {

template <typename F>
Tensor unary(const Tensor& a, F&& f) {
  std::vector<double> out(a.size());
  const auto& x = a.vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return Tensor(a.shape(), std::move(out));
}

template <typename F>
Tensor binary(const Tensor& a, const Tensor& b, F&& f) {
  std::vector<double> out(a.size());
  const auto& x = a.vec();
  const auto& y = b.vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return Tensor(a.shape(), std::move(out));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// Sorted, deduplicated, range-checked copy of `axes`.
inline std::vector<std::size_t> normalize_axes(std::vector<std::size_t> axes,
                                               std::size_t rank) {
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (std::size_t a : axes) {
    if (a >= rank) {
      throw ShapeError("axis " + std::to_string(a) + " out of range for rank " +
                       std::to_string(rank));
    }
  }
  return axes;
}

inline Shape reduced_shape(const Shape& full, const std::vector<std::size_t>& axes) {
  Shape out;
  std::size_t k = 0;
  for (std::size_t d = 0; d < full.size(); ++d) {
    if (k < axes.size() && axes[k] == d) {
      ++k;
      continue;
    }
    out.push_back(full[d]);
  }
  return out;
}

// For every flat index of `full`, the flat index it lands on once `axes` are
// dropped.
inline std::vector<std::size_t> reduction_index(const Shape& full,
                                                const std::vector<std::size_t>& axes) {
  const Shape red = reduced_shape(full, axes);
  const auto red_strides = strides_of(red);
  std::vector<std::size_t> step(full.size(), 0);
  std::size_t k = 0, r = 0;
  for (std::size_t d = 0; d < full.size(); ++d) {
    if (k < axes.size() && axes[k] == d) {
      ++k;
    } else {
      step[d] = red_strides[r++];
    }
  }
  const std::size_t n = numel(full);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(full.size(), 0);
  std::size_t cur = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = cur;
    for (std::size_t d = full.size(); d-- > 0;) {
      ++counter[d];
      cur += step[d];
      if (counter[d] < full[d]) break;
      cur -= step[d] * counter[d];
      counter[d] = 0;
    }
  }
  return map;
}

inline Tensor sum_axes(const Tensor& a, const std::vector<std::size_t>& axes) {
  const Shape out_shape = reduced_shape(a.shape(), axes);
  std::vector<double> out(numel(out_shape), 0.0);
  const auto map = reduction_index(a.shape(), axes);
  const auto& x = a.vec();
  for (std::size_t i = 0; i < x.size(); ++i) out[map[i]] += x[i];
  return Tensor(out_shape, std::move(out));
}

inline Tensor broadcast(const Tensor& a, const Shape& target,
                        const std::vector<std::size_t>& axes) {
  const auto map = reduction_index(target, axes);
  std::vector<double> out(map.size());
  const auto& x = a.vec();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[map[i]];
  return Tensor(target, std::move(out));
}

inline Tensor gather(const Tensor& a, const std::vector<std::int64_t>& index,
                     const Shape& out_shape) {
  std::vector<double> out(index.size(), 0.0);
  const auto& x = a.vec();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= 0) out[i] = x[static_cast<std::size_t>(index[i])];
  }
  return Tensor(out_shape, std::move(out));
}

inline Tensor scatter_add(const Tensor& a, const std::vector<std::int64_t>& index,
                          const Shape& out_shape) {
  std::vector<double> out(numel(out_shape), 0.0);
  const auto& x = a.vec();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= 0) out[static_cast<std::size_t>(index[i])] += x[i];
  }
  return Tensor(out_shape, std::move(out));
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const auto& x = a.vec();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return Tensor({c, r}, std::move(out));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto& x = a.vec();
  const auto& y = b.vec();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double v = x[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += v * y[p * n + j];
    }
  return Tensor({m, n}, std::move(out));
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, const ConvGeometry& g) {
  return (in + 2 * g.padding - k) / g.stride + 1;
}

// Visits every (kernel tap, output row) pair of a 2-D cross-correlation as a
// run of `len` valid output pixels. `fn(x_offset, w_offset, y_offset, len)`
// gets flat offsets within one (batch, in-channel) / (out-channel,
// in-channel) / (batch, out-channel) plane; consecutive output pixels of the
// run read input pixels `stride` apart.
template <typename F>
void for_each_tap(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                  const ConvGeometry& g, F&& fn) {
  const std::size_t ho = conv_out_extent(h, kh, g), wo = conv_out_extent(w, kw, g);
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  const auto wd = static_cast<std::ptrdiff_t>(w);
  for (std::size_t kj = 0; kj < kw; ++kj) {
    // Output columns q with 0 <= q*stride + kj - pad < w.
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kj) - pad;
    std::ptrdiff_t q_lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    std::ptrdiff_t q_hi = wd - off <= 0 ? 0 : (wd - off - 1) / stride + 1;
    q_hi = std::min<std::ptrdiff_t>(q_hi, static_cast<std::ptrdiff_t>(wo));
    if (q_lo >= q_hi) continue;
    const auto len = static_cast<std::size_t>(q_hi - q_lo);
    for (std::size_t ki = 0; ki < kh; ++ki)
      for (std::size_t p = 0; p < ho; ++p) {
        const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(p) * stride +
                                  static_cast<std::ptrdiff_t>(ki) - pad;
        if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(h)) continue;
        const std::ptrdiff_t wi = q_lo * stride + off;
        fn(static_cast<std::size_t>(hi) * w + static_cast<std::size_t>(wi), ki * kw + kj,
           p * wo + static_cast<std::size_t>(q_lo), len);
      }
  }
}

inline Tensor conv2d(const Tensor& x, const Tensor& k, const ConvGeometry& g) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t ho = conv_out_extent(h, kh, g), wo = conv_out_extent(w, kw, g);
  std::vector<double> out(n * o * ho * wo, 0.0);
  const auto& xv = x.vec();
  const auto& kv = k.vec();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc) {
      double* y = out.data() + (b * o + oc) * ho * wo;
      for (std::size_t ic = 0; ic < c; ++ic) {
        const double* xp = xv.data() + (b * c + ic) * h * w;
        const double* kp = kv.data() + (oc * c + ic) * kh * kw;
        for_each_tap(h, w, kh, kw, g, [&](std::size_t xi, std::size_t ki, std::size_t yi, std::size_t len) {
          const double kv = kp[ki];
          if (g.stride == 1) {
            for (std::size_t t = 0; t < len; ++t) y[yi + t] += xp[xi + t] * kv;
          } else {
            for (std::size_t t = 0; t < len; ++t) y[yi + t] += xp[xi + t * g.stride] * kv;
          }
        });
      }
    }
  return Tensor({n, o, ho, wo}, std::move(out));
}

// Adjoint of conv2d in its input: scatters output gradients back through the
// kernel taps.
inline Tensor conv2d_input_grad(const Tensor& gy, const Tensor& k, const ConvGeometry& g,
                                const Shape& x_shape) {
  const std::size_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3];
  const std::size_t o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t ho = conv_out_extent(h, kh, g), wo = conv_out_extent(w, kw, g);
  std::vector<double> out(n * c * h * w, 0.0);
  const auto& gv = gy.vec();
  const auto& kv = k.vec();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc) {
      const double* y = gv.data() + (b * o + oc) * ho * wo;
      for (std::size_t ic = 0; ic < c; ++ic) {
        double* xp = out.data() + (b * c + ic) * h * w;
        const double* kp = kv.data() + (oc * c + ic) * kh * kw;
        for_each_tap(h, w, kh, kw, g, [&](std::size_t xi, std::size_t ki, std::size_t yi, std::size_t len) {
          const double kv = kp[ki];
          if (g.stride == 1) {
            for (std::size_t t = 0; t < len; ++t) xp[xi + t] += y[yi + t] * kv;
          } else {
            for (std::size_t t = 0; t < len; ++t) xp[xi + t * g.stride] += y[yi + t] * kv;
          }
        });
      }
    }
  return Tensor(x_shape, std::move(out));
}

// Adjoint of conv2d in its kernel.
inline Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& gy, const ConvGeometry& g,
                                 const Shape& k_shape) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = k_shape[0], kh = k_shape[2], kw = k_shape[3];
  const std::size_t ho = conv_out_extent(h, kh, g), wo = conv_out_extent(w, kw, g);
  std::vector<double> out(o * c * kh * kw, 0.0);
  const auto& xv = x.vec();
  const auto& gv = gy.vec();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc) {
      const double* y = gv.data() + (b * o + oc) * ho * wo;
      for (std::size_t ic = 0; ic < c; ++ic) {
        const double* xp = xv.data() + (b * c + ic) * h * w;
        double* kp = out.data() + (oc * c + ic) * kh * kw;
        for_each_tap(h, w, kh, kw, g, [&](std::size_t xi, std::size_t ki, std::size_t yi, std::size_t len) {
          double acc = 0.0;
          if (g.stride == 1) {
            for (std::size_t t = 0; t < len; ++t) acc += xp[xi + t] * y[yi + t];
          } else {
            for (std::size_t t = 0; t < len; ++t) acc += xp[xi + t * g.stride] * y[yi + t];
          }
          kp[ki] += acc;
        });
      }
    }
  return Tensor(k_shape, std::move(out));
}

// Align-corners linear interpolation taps along one axis.
struct Tap {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double frac = 0.0;  // weight of `hi`; `lo` gets 1 - frac
};

inline std::vector<Tap> interpolation_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    if (in == 1 || out == 1) {
      taps[i] = {0, 0, 0.0};
      continue;
    }
    const double src = static_cast<double>(i) * static_cast<double>(in - 1) /
                       static_cast<double>(out - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

inline Tensor upsample(const Tensor& a, std::size_t out_h, std::size_t out_w) {
  const std::size_t r = a.rank();
  const std::size_t h = a.dim(r - 2), w = a.dim(r - 1);
  const std::size_t planes = a.size() / (h * w);
  const auto ty = interpolation_taps(h, out_h);
  const auto tx = interpolation_taps(w, out_w);
  std::vector<double> out(planes * out_h * out_w);
  const auto& x = a.vec();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const Tap& y = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const Tap& t = tx[j];
        const double top = (1.0 - t.frac) * src[y.lo * w + t.lo] + t.frac * src[y.lo * w + t.hi];
        const double bot = (1.0 - t.frac) * src[y.hi * w + t.lo] + t.frac * src[y.hi * w + t.hi];
        dst[i * out_w + j] = (1.0 - y.frac) * top + y.frac * bot;
      }
    }
  }
  Shape s = a.shape();
  s[r - 2] = out_h;
  s[r - 1] = out_w;
  return Tensor(s, std::move(out));
}

inline Tensor upsample_adjoint(const Tensor& g, std::size_t in_h, std::size_t in_w) {
  const std::size_t r = g.rank();
  const std::size_t out_h = g.dim(r - 2), out_w = g.dim(r - 1);
  const std::size_t planes = g.size() / (out_h * out_w);
  const auto ty = interpolation_taps(in_h, out_h);
  const auto tx = interpolation_taps(in_w, out_w);
  std::vector<double> out(planes * in_h * in_w, 0.0);
  const auto& gv = g.vec();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = gv.data() + p * out_h * out_w;
    double* dst = out.data() + p * in_h * in_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const Tap& y = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const Tap& t = tx[j];
        const double v = src[i * out_w + j];
        dst[y.lo * in_w + t.lo] += (1.0 - y.frac) * (1.0 - t.frac) * v;
        dst[y.lo * in_w + t.hi] += (1.0 - y.frac) * t.frac * v;
        dst[y.hi * in_w + t.lo] += y.frac * (1.0 - t.frac) * v;
        dst[y.hi * in_w + t.hi] += y.frac * t.frac * v;
      }
    }
  }
  Shape s = g.shape();
  s[r - 2] = in_h;
  s[r - 1] = in_w;
  return Tensor(s, std::move(out));
}

// Row-wise softmax of an [N, C] tensor, shifted by the row max.
inline std::vector<double> softmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<double> p(n * c);
  const auto& z = logits.vec();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      p[i * c + j] = std::exp(row[j] - m);
      s += p[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) p[i * c + j] /= s;
  }
  return p;
}

inline double softmax_cross_entropy(const Tensor& logits,
                                    const std::vector<std::int64_t>& labels) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  const auto& z = logits.vec();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * c;
    const double m = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
    total += m + std::log(s) - row[static_cast<std::size_t>(labels[i])];
  }
  return total / static_cast<double>(n);
}

inline double multilabel_soft_margin(const Tensor& logits, const std::vector<double>& targets) {
  const auto& z = logits.vec();
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    total += targets[i] * softplus(-z[i]) + (1.0 - targets[i]) * softplus(z[i]);
  }
  return total / static_cast<double>(z.size());
}

}  // namespace sharpen_focus::ad::kernels
