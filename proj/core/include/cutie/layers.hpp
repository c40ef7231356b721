// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>

#include "cutie/param_registry.hpp"
#include "cutie/tensor.hpp"

// Registry-backed layers. Each forward function reads `<name>.weight`,
// `<name>.bias` (and sub-names for composite layers); each register_* function
// creates exactly the parameters its forward counterpart reads.

namespace cutie {

inline constexpr float kLayerNormEps = 1e-5f;

/// x[... x din] -> x W^T + b, with W: dout x din.
Tensor linear(const ParamRegistry &registry, std::string_view name, const Tensor &x);

/// Normalizes every row of x[rows x C] over C with learned scale/shift.
Tensor layer_norm(const ParamRegistry &registry, std::string_view name, const Tensor &x);

/// fc2(ReLU(fc1(x))).
Tensor mlp_2layer(const ParamRegistry &registry, std::string_view name, const Tensor &x);

Tensor conv(const ParamRegistry &registry, std::string_view name, const Tensor &x, std::size_t stride = 1);

/// Efficient channel attention: x scaled per channel by
/// sigmoid(conv1d_k3(global_avg(x)) + b).
Tensor eca_channel_attention(const ParamRegistry &registry, std::string_view name, const Tensor &x);

/// Pre-activation residual block: x' + conv2(relu(conv1(relu(x)))), with an
/// optional ECA on the residual branch and a 1x1 projection `<name>.skip` on
/// the identity branch when channel counts differ.
Tensor residual_block(const ParamRegistry &registry, std::string_view name, const Tensor &x,
                      bool channel_attention = false);

/// z = s(conv_z[h;x]), r = s(conv_r[h;x]), c = tanh(conv_h[r*h;x]),
/// h' = (1-z)*h + z*c.
Tensor conv_gru_update(const ParamRegistry &registry, std::string_view name, const Tensor &h,
                       const Tensor &x);

/// Fixed 2D sine/cosine embedding on normalized coordinates (y/H, x/W), HW x C.
/// The first C/2 channels encode y, the rest x; within each half channels
/// alternate sin, cos per frequency.
Tensor sinusoidal_pe_2d(std::size_t h, std::size_t w, std::size_t channels);

// Parameter registration.
void register_linear(ParamRegistry &registry, ParamInitializer &init, std::string_view name,
                     std::size_t din, std::size_t dout);
void register_layer_norm(ParamRegistry &registry, std::string_view name, std::size_t dim);
void register_mlp(ParamRegistry &registry, ParamInitializer &init, std::string_view name, std::size_t din,
                  std::size_t hidden, std::size_t dout);
void register_attention(ParamRegistry &registry, ParamInitializer &init, std::string_view name,
                        std::size_t dim);
void register_conv(ParamRegistry &registry, ParamInitializer &init, std::string_view name, std::size_t cin,
                   std::size_t cout, std::size_t kernel);
void register_eca(ParamRegistry &registry, ParamInitializer &init, std::string_view name);
void register_residual_block(ParamRegistry &registry, ParamInitializer &init, std::string_view name,
                             std::size_t cin, std::size_t cout, bool channel_attention = false);
void register_conv_gru(ParamRegistry &registry, ParamInitializer &init, std::string_view name,
                       std::size_t hidden, std::size_t input);

} // namespace cutie
