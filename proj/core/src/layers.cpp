// SPDX-License-Identifier: Apache-2.0
#include "cutie/layers.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cutie/tensor_ops.hpp"

namespace cutie {

namespace {

std::string join(std::string_view base, std::string_view leaf) {
  std::string out(base);
  out += '.';
  out += leaf;
  return out;
}

} // namespace

Tensor linear(const ParamRegistry &registry, std::string_view name, const Tensor &x) {
  const Tensor &weight = registry.get(join(name, "weight"));
  const Tensor &bias = registry.get(join(name, "bias"));
  if (x.rank() == 0) {
    throw DimensionError("linear '" + std::string(name) + "': scalar input");
  }
  const std::size_t din = x.shape().back();
  if (weight.dim(1) != din) {
    throw DimensionError("linear '" + std::string(name) + "': expects " + std::to_string(weight.dim(1)) +
                         " input features, got " + std::to_string(din));
  }
  const std::size_t rows = x.numel() / din;
  Tensor out = matmul_bt(x.reshaped({rows, din}), weight);
  add_row_bias(out, bias);
  Shape shape = x.shape();
  shape.back() = weight.dim(0);
  return std::move(out).reshaped(std::move(shape));
}

Tensor layer_norm(const ParamRegistry &registry, std::string_view name, const Tensor &x) {
  const Tensor &scale = registry.get(join(name, "weight"));
  const Tensor &shift = registry.get(join(name, "bias"));
  if (x.rank() != 2 || x.dim(1) != scale.numel()) {
    throw DimensionError("layer_norm '" + std::string(name) + "': input " + shape_to_string(x.shape()));
  }
  const std::size_t rows = x.dim(0), c = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float *src = x.ptr() + r * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      mean += src[j];
    }
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = src[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    float *dst = out.ptr() + r * c;
    for (std::size_t j = 0; j < c; ++j) {
      dst[j] = static_cast<float>((src[j] - mean) * inv * scale[j] + shift[j]);
    }
  }
  return out;
}

Tensor mlp_2layer(const ParamRegistry &registry, std::string_view name, const Tensor &x) {
  return linear(registry, join(name, "fc2"), relu(linear(registry, join(name, "fc1"), x)));
}

Tensor conv(const ParamRegistry &registry, std::string_view name, const Tensor &x, std::size_t stride) {
  return conv2d(x, registry.get(join(name, "weight")), registry.get(join(name, "bias")), {stride, -1});
}

Tensor eca_channel_attention(const ParamRegistry &registry, std::string_view name, const Tensor &x) {
  const Tensor &kernel = registry.get(join(name, "weight"));
  const Tensor &bias = registry.get(join(name, "bias"));
  if (x.rank() != 3) {
    throw DimensionError("eca '" + std::string(name) + "': expects a C x H x W map");
  }
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  const std::size_t k = kernel.numel();
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  std::vector<double> descriptor(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float *src = x.ptr() + ch * hw;
    double sum = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      sum += src[p];
    }
    descriptor[ch] = sum / static_cast<double>(hw);
  }
  Tensor out(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double y = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(ch) + static_cast<std::ptrdiff_t>(t) - half;
      if (src >= 0 && src < static_cast<std::ptrdiff_t>(c)) {
        y += static_cast<double>(kernel[t]) * descriptor[static_cast<std::size_t>(src)];
      }
    }
    y += bias[0];
    const float gate = static_cast<float>(sigmoid_scalar(y));
    const float *in = x.ptr() + ch * hw;
    float *dst = out.ptr() + ch * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      dst[p] = in[p] * gate;
    }
  }
  return out;
}

Tensor residual_block(const ParamRegistry &registry, std::string_view name, const Tensor &x,
                      bool channel_attention) {
  Tensor branch = conv(registry, join(name, "conv1"), relu(x));
  branch = conv(registry, join(name, "conv2"), relu(std::move(branch)));
  if (channel_attention) {
    branch = eca_channel_attention(registry, join(name, "eca"), branch);
  }
  const std::string skip = join(name, "skip");
  if (registry.contains(join(skip, "weight"))) {
    add_inplace(branch, conv(registry, skip, x));
  } else {
    add_inplace(branch, x);
  }
  return branch;
}

Tensor conv_gru_update(const ParamRegistry &registry, std::string_view name, const Tensor &h,
                       const Tensor &x) {
  if (h.rank() != 3 || x.rank() != 3 || h.dim(1) != x.dim(1) || h.dim(2) != x.dim(2)) {
    throw DimensionError("conv_gru '" + std::string(name) + "': hidden " + shape_to_string(h.shape()) +
                         " vs input " + shape_to_string(x.shape()));
  }
  const Tensor hx = concat_channels(h, x);
  const Tensor z = sigmoid(conv(registry, join(name, "conv_z"), hx));
  Tensor r = sigmoid(conv(registry, join(name, "conv_r"), hx));
  for (std::size_t i = 0; i < r.numel(); ++i) {
    r[i] *= h[i];
  }
  const Tensor candidate = tanh(conv(registry, join(name, "conv_h"), concat_channels(r, x)));
  Tensor out(h.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = (1.0f - z[i]) * h[i] + z[i] * candidate[i];
  }
  return out;
}

Tensor sinusoidal_pe_2d(std::size_t h, std::size_t w, std::size_t channels) {
  if (channels == 0 || channels % 4 != 0) {
    throw ConfigError("sinusoidal_pe_2d: channel count " + std::to_string(channels) +
                      " must be a positive multiple of 4");
  }
  if (h == 0 || w == 0) {
    throw DimensionError("sinusoidal_pe_2d: empty grid");
  }
  const std::size_t half = channels / 2;
  const std::size_t freqs = channels / 4;
  std::vector<double> omega(freqs);
  for (std::size_t f = 0; f < freqs; ++f) {
    omega[f] = 2.0 * std::numbers::pi / std::pow(10000.0, static_cast<double>(f) / static_cast<double>(freqs));
  }
  Tensor out({h * w, channels});
  for (std::size_t y = 0; y < h; ++y) {
    const double ny = static_cast<double>(y) / static_cast<double>(h);
    for (std::size_t x = 0; x < w; ++x) {
      const double nx = static_cast<double>(x) / static_cast<double>(w);
      float *row = out.ptr() + (y * w + x) * channels;
      for (std::size_t f = 0; f < freqs; ++f) {
        row[2 * f] = static_cast<float>(std::sin(ny * omega[f]));
        row[2 * f + 1] = static_cast<float>(std::cos(ny * omega[f]));
        row[half + 2 * f] = static_cast<float>(std::sin(nx * omega[f]));
        row[half + 2 * f + 1] = static_cast<float>(std::cos(nx * omega[f]));
      }
    }
  }
  return out;
}

void register_linear(ParamRegistry &registry, ParamInitializer &init, std::string_view name,
                     std::size_t din, std::size_t dout) {
  registry.add(join(name, "weight"), init.truncated_normal({dout, din}, 0.02));
  registry.add(join(name, "bias"), Tensor({dout}));
}

void register_layer_norm(ParamRegistry &registry, std::string_view name, std::size_t dim) {
  registry.add(join(name, "weight"), Tensor({dim}, 1.0f));
  registry.add(join(name, "bias"), Tensor({dim}));
}

void register_mlp(ParamRegistry &registry, ParamInitializer &init, std::string_view name, std::size_t din,
                  std::size_t hidden, std::size_t dout) {
  register_linear(registry, init, join(name, "fc1"), din, hidden);
  register_linear(registry, init, join(name, "fc2"), hidden, dout);
}

void register_attention(ParamRegistry &registry, ParamInitializer &init, std::string_view name,
                        std::size_t dim) {
  for (const char *proj : {"q_proj", "k_proj", "v_proj", "out_proj"}) {
    register_linear(registry, init, join(name, proj), dim, dim);
  }
}

void register_conv(ParamRegistry &registry, ParamInitializer &init, std::string_view name, std::size_t cin,
                   std::size_t cout, std::size_t kernel) {
  registry.add(join(name, "weight"), init.kaiming_normal({cout, cin, kernel, kernel}, cin * kernel * kernel));
  registry.add(join(name, "bias"), Tensor({cout}));
}

void register_eca(ParamRegistry &registry, ParamInitializer &init, std::string_view name) {
  registry.add(join(name, "weight"), init.kaiming_normal({3}, 3));
  registry.add(join(name, "bias"), Tensor({1}));
}

void register_residual_block(ParamRegistry &registry, ParamInitializer &init, std::string_view name,
                             std::size_t cin, std::size_t cout, bool channel_attention) {
  register_conv(registry, init, join(name, "conv1"), cin, cout, 3);
  register_conv(registry, init, join(name, "conv2"), cout, cout, 3);
  if (channel_attention) {
    register_eca(registry, init, join(name, "eca"));
  }
  if (cin != cout) {
    register_conv(registry, init, join(name, "skip"), cin, cout, 1);
  }
}

void register_conv_gru(ParamRegistry &registry, ParamInitializer &init, std::string_view name,
                       std::size_t hidden, std::size_t input) {
  for (const char *gate : {"conv_z", "conv_r", "conv_h"}) {
    register_conv(registry, init, join(name, gate), hidden + input, hidden, 3);
  }
}

} // namespace cutie
