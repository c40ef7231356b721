// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <limits>

#include "cutie/tensor.hpp"

// Dense kernels shared by every module. All reductions accumulate in double
// with a fixed row-major order, so results are bit-reproducible run to run.
// Instantiated for float and double.

namespace cutie {

/// Additive mask sentinel for disallowed attention entries.
template <typename T>
inline constexpr T kMaskedOut = -std::numeric_limits<T>::infinity();

// Matrix products on rank-2 tensors.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T> &a, const BasicTensor<T> &b);
/// a[m x k] * b[n x k]^T
template <typename T>
BasicTensor<T> matmul_bt(const BasicTensor<T> &a, const BasicTensor<T> &b);
/// a[k x m]^T * b[k x n]
template <typename T>
BasicTensor<T> matmul_at(const BasicTensor<T> &a, const BasicTensor<T> &b);
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T> &a);

/// Row-wise softmax of `logits + mask`, where mask entries are 0 or -inf.
/// Masked entries come out exactly 0; a row with every entry masked comes out
/// all zeros (saturation, not an error).
template <typename T>
BasicTensor<T> masked_softmax_rows(const BasicTensor<T> &logits, const BasicTensor<T> &mask);
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T> &logits);

struct Conv2dOptions {
  std::size_t stride = 1;
  /// Negative selects same-padding (kernel / 2).
  int pad = -1;
};

/// x[Cin x H x W] (*) w[Cout x Cin x kh x kw] + bias[Cout]. `bias` may be empty.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T> &x, const BasicTensor<T> &w, const BasicTensor<T> &bias,
                      Conv2dOptions options = {});

/// Bilinear resampling of x[C x H x W] with the align_corners=false convention.
template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T> &x, std::size_t out_h, std::size_t out_w);

/// Mean over non-overlapping factor x factor windows (partial windows at the
/// border average what they cover).
template <typename T>
BasicTensor<T> area_downsample(const BasicTensor<T> &x, std::size_t factor);

// Elementwise helpers.
template <typename T>
BasicTensor<T> add(const BasicTensor<T> &a, const BasicTensor<T> &b);
template <typename T>
void add_inplace(BasicTensor<T> &a, const BasicTensor<T> &b);
template <typename T>
BasicTensor<T> relu(BasicTensor<T> x);
template <typename T>
BasicTensor<T> sigmoid(BasicTensor<T> x);
template <typename T>
BasicTensor<T> tanh(BasicTensor<T> x);
/// Adds bias[n] to every row of x[m x n].
template <typename T>
void add_row_bias(BasicTensor<T> &x, const BasicTensor<T> &bias);

// Layout conversions between feature maps C x H x W and token matrices HW x C.
template <typename T>
BasicTensor<T> map_to_tokens(const BasicTensor<T> &map);
template <typename T>
BasicTensor<T> tokens_to_map(const BasicTensor<T> &tokens, std::size_t h, std::size_t w);

/// Stacks feature maps along the channel axis.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T> &a, const BasicTensor<T> &b);

template <typename T>
T max_abs_diff(const BasicTensor<T> &a, const BasicTensor<T> &b);
template <typename T>
bool all_finite(const BasicTensor<T> &x);

inline float sigmoid_scalar(float v) { return 1.0f / (1.0f + std::exp(-v)); }
inline double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

} // namespace cutie
