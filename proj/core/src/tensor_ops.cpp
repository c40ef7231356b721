// SPDX-License-Identifier: Apache-2.0
#include "cutie/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace cutie {

std::string shape_to_string(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "x" : "") << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void require_rank(const Shape &shape, std::size_t rank, const char *what) {
  if (shape.size() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(shape));
  }
}

void require_same_shape(const Shape &a, const Shape &b, const char *what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_to_string(a) + " vs " +
                         shape_to_string(b));
  }
}

// Columns per im2col tile; bounds scratch memory on large frames without
// changing the per-output accumulation order.
constexpr std::size_t kConvTile = 512;

} // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T> &a, const BasicTensor<T> &b) {
  require_rank(a.shape(), 2, "matmul lhs");
  require_rank(b.shape(), 2, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ " + shape_to_string(a.shape()) + " * " +
                         shape_to_string(b.shape()));
  }
  BasicTensor<T> out({m, n});
  std::vector<double> acc(n);
  const T *pb = b.ptr();
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const T *pa = a.ptr() + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[kk];
      const T *brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) {
        acc[j] += av * static_cast<double>(brow[j]);
      }
    }
    T *po = out.ptr() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      po[j] = static_cast<T>(acc[j]);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T> &a) {
  require_rank(a.shape(), 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  BasicTensor<T> out({n, m});
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += kBlock) {
    const std::size_t i1 = std::min(m, i0 + kBlock);
    for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
      const std::size_t j1 = std::min(n, j0 + kBlock);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) {
          out[j * m + i] = a[i * n + j];
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> matmul_bt(const BasicTensor<T> &a, const BasicTensor<T> &b) {
  require_rank(b.shape(), 2, "matmul_bt rhs");
  if (a.rank() == 2 && a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_bt: inner extents differ " + shape_to_string(a.shape()) + " * " +
                         shape_to_string(b.shape()) + "^T");
  }
  return matmul(a, transpose(b));
}

template <typename T>
BasicTensor<T> matmul_at(const BasicTensor<T> &a, const BasicTensor<T> &b) {
  require_rank(a.shape(), 2, "matmul_at lhs");
  require_rank(b.shape(), 2, "matmul_at rhs");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul_at: inner extents differ " + shape_to_string(a.shape()) + "^T * " +
                         shape_to_string(b.shape()));
  }
  BasicTensor<T> out({m, n});
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[kk * m + i];
      const T *brow = b.ptr() + kk * n;
      for (std::size_t j = 0; j < n; ++j) {
        acc[j] += av * static_cast<double>(brow[j]);
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = static_cast<T>(acc[j]);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> masked_softmax_rows(const BasicTensor<T> &logits, const BasicTensor<T> &mask) {
  require_rank(logits.shape(), 2, "masked_softmax_rows");
  require_same_shape(logits.shape(), mask.shape(), "masked_softmax_rows mask");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  BasicTensor<T> out({rows, cols});
  std::vector<double> shifted(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const T *lr = logits.ptr() + r * cols;
    const T *mr = mask.ptr() + r * cols;
    double max_v = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (std::isinf(mr[c]) && mr[c] < 0) {
        continue;
      }
      const double v = static_cast<double>(lr[c]) + static_cast<double>(mr[c]);
      max_v = any ? std::max(max_v, v) : v;
      any = true;
    }
    T *orow = out.ptr() + r * cols;
    if (!any) {
      continue; // fully masked: row stays zero
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (std::isinf(mr[c]) && mr[c] < 0) {
        shifted[c] = 0.0;
        continue;
      }
      shifted[c] = std::exp(static_cast<double>(lr[c]) + static_cast<double>(mr[c]) - max_v);
      sum += shifted[c];
    }
    for (std::size_t c = 0; c < cols; ++c) {
      orow[c] = static_cast<T>(shifted[c] / sum);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T> &logits) {
  return masked_softmax_rows(logits, BasicTensor<T>(logits.shape(), T{0}));
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T> &x, const BasicTensor<T> &w, const BasicTensor<T> &bias,
                      Conv2dOptions options) {
  require_rank(x.shape(), 3, "conv2d input");
  require_rank(w.shape(), 4, "conv2d weight");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) {
    throw DimensionError("conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, got " +
                         std::to_string(cin));
  }
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw DimensionError("conv2d: kernel extents must be odd, got " + shape_to_string(w.shape()));
  }
  if (!bias.empty() && bias.numel() != cout) {
    throw DimensionError("conv2d: bias has " + std::to_string(bias.numel()) + " entries for " +
                         std::to_string(cout) + " output channels");
  }
  if (options.stride == 0) {
    throw DimensionError("conv2d: stride must be positive");
  }
  const std::ptrdiff_t pad_y = options.pad < 0 ? static_cast<std::ptrdiff_t>(kh / 2) : options.pad;
  const std::ptrdiff_t pad_x = options.pad < 0 ? static_cast<std::ptrdiff_t>(kw / 2) : options.pad;
  const std::ptrdiff_t span_y = static_cast<std::ptrdiff_t>(h) + 2 * pad_y - static_cast<std::ptrdiff_t>(kh);
  const std::ptrdiff_t span_x = static_cast<std::ptrdiff_t>(wd) + 2 * pad_x - static_cast<std::ptrdiff_t>(kw);
  if (span_y < 0 || span_x < 0) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const std::size_t stride = options.stride;
  const std::size_t ho = static_cast<std::size_t>(span_y) / stride + 1;
  const std::size_t wo = static_cast<std::size_t>(span_x) / stride + 1;
  const std::size_t positions = ho * wo;
  const std::size_t taps = cin * kh * kw;

  BasicTensor<T> out({cout, ho, wo});
  const bool direct = kh == 1 && kw == 1 && stride == 1 && pad_y == 0 && pad_x == 0;

  // Columns are packed as [position block][tap][kLanes] so the inner kernel
  // streams one contiguous slab while a 4 x kLanes accumulator tile stays in
  // registers. Every output sums its taps in ascending order.
  constexpr std::size_t kLanes = 8;
  std::vector<T> packed;
  std::vector<std::ptrdiff_t> origin_y, origin_x;
  for (std::size_t p0 = 0; p0 < positions; p0 += kConvTile) {
    const std::size_t tile = std::min(kConvTile, positions - p0);
    const std::size_t blocks = (tile + kLanes - 1) / kLanes;
    packed.assign(blocks * taps * kLanes, T{0});
    if (direct) {
      for (std::size_t r = 0; r < taps; ++r) {
        const T *src = x.ptr() + r * positions + p0;
        for (std::size_t t = 0; t < tile; ++t) {
          packed[((t / kLanes) * taps + r) * kLanes + t % kLanes] = src[t];
        }
      }
    } else {
      origin_y.resize(tile);
      origin_x.resize(tile);
      for (std::size_t t = 0; t < tile; ++t) {
        origin_y[t] = static_cast<std::ptrdiff_t>(((p0 + t) / wo) * stride) - pad_y;
        origin_x[t] = static_cast<std::ptrdiff_t>(((p0 + t) % wo) * stride) - pad_x;
      }
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T *plane = x.ptr() + ci * h * wd;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t r = (ci * kh + ky) * kw + kx;
            for (std::size_t t = 0; t < tile; ++t) {
              const std::ptrdiff_t iy = origin_y[t] + static_cast<std::ptrdiff_t>(ky);
              const std::ptrdiff_t ix = origin_x[t] + static_cast<std::ptrdiff_t>(kx);
              if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                  ix < static_cast<std::ptrdiff_t>(wd)) {
                packed[((t / kLanes) * taps + r) * kLanes + t % kLanes] =
                    plane[static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)];
              }
            }
          }
        }
      }
    }

    for (std::size_t b = 0; b < blocks; ++b) {
      const T *slab = packed.data() + b * taps * kLanes;
      const std::size_t t0 = b * kLanes;
      const std::size_t count = std::min(kLanes, tile - t0);
      auto store = [&](std::size_t co, const double *a) {
        const double bv = bias.empty() ? 0.0 : static_cast<double>(bias[co]);
        T *orow = out.ptr() + co * positions + p0 + t0;
        for (std::size_t j = 0; j < count; ++j) {
          orow[j] = static_cast<T>(a[j] + bv);
        }
      };
      std::size_t co = 0;
      for (; co + 4 <= cout; co += 4) {
        double a0[kLanes] = {}, a1[kLanes] = {}, a2[kLanes] = {}, a3[kLanes] = {};
        const T *w0 = w.ptr() + co * taps, *w1 = w0 + taps, *w2 = w1 + taps, *w3 = w2 + taps;
        for (std::size_t r = 0; r < taps; ++r) {
          const T *c = slab + r * kLanes;
          const double v0 = w0[r], v1 = w1[r], v2 = w2[r], v3 = w3[r];
          for (std::size_t j = 0; j < kLanes; ++j) {
            const double cj = static_cast<double>(c[j]);
            a0[j] += v0 * cj;
            a1[j] += v1 * cj;
            a2[j] += v2 * cj;
            a3[j] += v3 * cj;
          }
        }
        store(co, a0);
        store(co + 1, a1);
        store(co + 2, a2);
        store(co + 3, a3);
      }
      for (; co < cout; ++co) {
        double a0[kLanes] = {};
        const T *w0 = w.ptr() + co * taps;
        for (std::size_t r = 0; r < taps; ++r) {
          const T *c = slab + r * kLanes;
          const double v0 = w0[r];
          for (std::size_t j = 0; j < kLanes; ++j) {
            a0[j] += v0 * static_cast<double>(c[j]);
          }
        }
        store(co, a0);
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T> &x, std::size_t out_h, std::size_t out_w) {
  require_rank(x.shape(), 3, "bilinear_resize");
  if (out_h == 0 || out_w == 0) {
    throw DimensionError("bilinear_resize: target extent must be at least 1");
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == 0 || w == 0) {
    throw DimensionError("bilinear_resize: empty input");
  }
  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> result(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::max(src, 0.0);
      std::size_t lo = static_cast<std::size_t>(std::floor(src));
      lo = std::min(lo, in - 1);
      const std::size_t hi = std::min(lo + 1, in - 1);
      result[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return result;
  };
  const auto ty = taps(h, out_h);
  const auto tx = taps(w, out_w);
  BasicTensor<T> out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const Tap &yy = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Tap &xx = tx[ox];
        const double a = x.at(ch, yy.lo, xx.lo), b = x.at(ch, yy.lo, xx.hi);
        const double cc = x.at(ch, yy.hi, xx.lo), d = x.at(ch, yy.hi, xx.hi);
        // Difference form keeps constant inputs exactly constant.
        const double top = a + xx.frac * (b - a);
        const double bottom = cc + xx.frac * (d - cc);
        out.at(ch, oy, ox) = static_cast<T>(top + yy.frac * (bottom - top));
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> area_downsample(const BasicTensor<T> &x, std::size_t factor) {
  require_rank(x.shape(), 3, "area_downsample");
  if (factor == 0) {
    throw DimensionError("area_downsample: factor must be positive");
  }
  if (factor == 1) {
    return x;
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = (h + factor - 1) / factor, ow = (w + factor - 1) / factor;
  BasicTensor<T> out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t y = oy * factor; y < std::min(h, (oy + 1) * factor); ++y) {
          for (std::size_t xx = ox * factor; xx < std::min(w, (ox + 1) * factor); ++xx) {
            sum += x.at(ch, y, xx);
            ++count;
          }
        }
        out.at(ch, oy, ox) = static_cast<T>(sum / static_cast<double>(count));
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T> &a, const BasicTensor<T> &b) {
  BasicTensor<T> out = a;
  add_inplace(out, b);
  return out;
}

template <typename T>
void add_inplace(BasicTensor<T> &a, const BasicTensor<T> &b) {
  require_same_shape(a.shape(), b.shape(), "add");
  T *pa = a.ptr();
  const T *pb = b.ptr();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    pa[i] += pb[i];
  }
}

template <typename T>
BasicTensor<T> relu(BasicTensor<T> x) {
  for (T &v : x.values()) {
    v = v > T{0} ? v : T{0};
  }
  return x;
}

template <typename T>
BasicTensor<T> sigmoid(BasicTensor<T> x) {
  for (T &v : x.values()) {
    v = sigmoid_scalar(v);
  }
  return x;
}

template <typename T>
BasicTensor<T> tanh(BasicTensor<T> x) {
  for (T &v : x.values()) {
    v = std::tanh(v);
  }
  return x;
}

template <typename T>
void add_row_bias(BasicTensor<T> &x, const BasicTensor<T> &bias) {
  require_rank(x.shape(), 2, "add_row_bias");
  const std::size_t n = x.dim(1);
  if (bias.numel() != n) {
    throw DimensionError("add_row_bias: bias has " + std::to_string(bias.numel()) + " entries for " +
                         std::to_string(n) + " columns");
  }
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    T *row = x.ptr() + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] += bias[j];
    }
  }
}

template <typename T>
BasicTensor<T> map_to_tokens(const BasicTensor<T> &map) {
  require_rank(map.shape(), 3, "map_to_tokens");
  const std::size_t c = map.dim(0), hw = map.dim(1) * map.dim(2);
  BasicTensor<T> out({hw, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T *src = map.ptr() + ch * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      out[p * c + ch] = src[p];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> tokens_to_map(const BasicTensor<T> &tokens, std::size_t h, std::size_t w) {
  require_rank(tokens.shape(), 2, "tokens_to_map");
  const std::size_t hw = tokens.dim(0), c = tokens.dim(1);
  if (hw != h * w) {
    throw DimensionError("tokens_to_map: " + std::to_string(hw) + " tokens cannot form a " +
                         std::to_string(h) + "x" + std::to_string(w) + " map");
  }
  BasicTensor<T> out({c, h, w});
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      out[ch * hw + p] = tokens[p * c + ch];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T> &a, const BasicTensor<T> &b) {
  require_rank(a.shape(), 3, "concat_channels lhs");
  require_rank(b.shape(), 3, "concat_channels rhs");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw DimensionError("concat_channels: spatial mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  BasicTensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.values().begin(), a.values().end(), out.ptr());
  std::copy(b.values().begin(), b.values().end(), out.ptr() + a.numel());
  return out;
}

template <typename T>
T max_abs_diff(const BasicTensor<T> &a, const BasicTensor<T> &b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T worst{0};
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const T d = std::abs(a[i] - b[i]);
    if (!(d <= worst)) {
      worst = d; // NaN propagates
    }
  }
  return worst;
}

template <typename T>
bool all_finite(const BasicTensor<T> &x) {
  return std::all_of(x.values().begin(), x.values().end(), [](T v) { return std::isfinite(v); });
}

#define CUTIE_INSTANTIATE_OPS(T)                                                                   \
  template BasicTensor<T> matmul(const BasicTensor<T> &, const BasicTensor<T> &);                  \
  template BasicTensor<T> matmul_bt(const BasicTensor<T> &, const BasicTensor<T> &);               \
  template BasicTensor<T> matmul_at(const BasicTensor<T> &, const BasicTensor<T> &);               \
  template BasicTensor<T> transpose(const BasicTensor<T> &);                                       \
  template BasicTensor<T> masked_softmax_rows(const BasicTensor<T> &, const BasicTensor<T> &);     \
  template BasicTensor<T> softmax_rows(const BasicTensor<T> &);                                    \
  template BasicTensor<T> conv2d(const BasicTensor<T> &, const BasicTensor<T> &,                   \
                                 const BasicTensor<T> &, Conv2dOptions);                           \
  template BasicTensor<T> bilinear_resize(const BasicTensor<T> &, std::size_t, std::size_t);       \
  template BasicTensor<T> area_downsample(const BasicTensor<T> &, std::size_t);                    \
  template BasicTensor<T> add(const BasicTensor<T> &, const BasicTensor<T> &);                     \
  template void add_inplace(BasicTensor<T> &, const BasicTensor<T> &);                             \
  template BasicTensor<T> relu(BasicTensor<T>);                                                    \
  template BasicTensor<T> sigmoid(BasicTensor<T>);                                                 \
  template BasicTensor<T> tanh(BasicTensor<T>);                                                    \
  template void add_row_bias(BasicTensor<T> &, const BasicTensor<T> &);                            \
  template BasicTensor<T> map_to_tokens(const BasicTensor<T> &);                                   \
  template BasicTensor<T> tokens_to_map(const BasicTensor<T> &, std::size_t, std::size_t);         \
  template BasicTensor<T> concat_channels(const BasicTensor<T> &, const BasicTensor<T> &);         \
  template T max_abs_diff(const BasicTensor<T> &, const BasicTensor<T> &);                         \
  template bool all_finite(const BasicTensor<T> &);

CUTIE_INSTANTIATE_OPS(float)
CUTIE_INSTANTIATE_OPS(double)

#undef CUTIE_INSTANTIATE_OPS

} // namespace cutie
