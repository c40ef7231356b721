// SPDX-License-Identifier: Apache-2.0
#include "cutie/network.hpp"

#include <cmath>
#include <vector>

#include "cutie/errors.hpp"
#include "cutie/layers.hpp"
#include "cutie/object_memory.hpp"
#include "cutie/tensor_ops.hpp"

namespace cutie {

void ModelConfig::validate() const {
  if (channels == 0 || key_channels == 0 || decoder_channels == 0 || stem_channels == 0) {
    throw ConfigError("model config: channel widths must be nonzero");
  }
  for (std::size_t e : encoder_channels) {
    if (e == 0) {
      throw ConfigError("model config: encoder widths must be nonzero");
    }
  }
  transformer().validate();
}

ObjectTransformerConfig ModelConfig::transformer() const {
  return ObjectTransformerConfig{channels, num_queries, num_blocks, num_heads, ffn_hidden};
}

namespace {

void register_backbone(ParamRegistry &reg, ParamInitializer &init, const std::string &prefix, std::size_t in,
                       const ModelConfig &cfg) {
  const auto &e = cfg.encoder_channels;
  register_conv(reg, init, prefix + ".stem", in, cfg.stem_channels, 3);
  register_conv(reg, init, prefix + ".stage4.down", cfg.stem_channels, e[0], 3);
  register_residual_block(reg, init, prefix + ".stage4.block", e[0], e[0]);
  register_conv(reg, init, prefix + ".stage8.down", e[0], e[1], 3);
  register_residual_block(reg, init, prefix + ".stage8.block", e[1], e[1]);
  register_conv(reg, init, prefix + ".stage16.down", e[1], e[2], 3);
  register_residual_block(reg, init, prefix + ".stage16.block", e[2], e[2]);
}

void register_all(ParamRegistry &reg, ParamInitializer &init, const ModelConfig &cfg) {
  const std::size_t c = cfg.channels, d = cfg.decoder_channels;
  const auto &e = cfg.encoder_channels;

  register_backbone(reg, init, "query_encoder", 3, cfg);
  register_conv(reg, init, "query_encoder.key_proj", e[2], cfg.key_channels, 3);
  register_conv(reg, init, "query_encoder.shrinkage_proj", e[2], 1, 3);
  register_conv(reg, init, "query_encoder.selection_proj", e[2], cfg.key_channels, 3);

  register_backbone(reg, init, "mask_encoder", 5, cfg);
  register_conv(reg, init, "mask_encoder.fuse.mask_proj", e[2], c, 1);
  register_conv(reg, init, "mask_encoder.fuse.query_proj", e[2], c, 1);
  register_residual_block(reg, init, "mask_encoder.fuse.block0", c, c);
  register_residual_block(reg, init, "mask_encoder.fuse.block1", c, c);

  register_pixel_memory_parameters(reg, init, c, d);
  register_object_memory_parameters(reg, init, c, cfg.num_queries);
  ObjectTransformer::register_parameters(reg, init, cfg.transformer());

  register_conv(reg, init, "decoder.in_proj", c, d, 1);
  register_conv(reg, init, "decoder.skip8", e[1], d, 1);
  register_residual_block(reg, init, "decoder.block8", d, d);
  register_conv(reg, init, "decoder.skip4", e[0], d, 1);
  register_residual_block(reg, init, "decoder.block4", d, d);
  register_conv(reg, init, "decoder.final", d, 1, 3);
}

Tensor softplus_plus_one(Tensor x) {
  for (float &v : x.values()) {
    // log1p(exp(v)) without overflow for large v
    v = 1.0f + (v > 20.0f ? v : std::log1p(std::exp(v)));
  }
  return x;
}

} // namespace

ParamRegistry build_parameters(const ModelConfig &config, std::uint64_t seed) {
  config.validate();
  ParamRegistry reg(seed);
  ParamInitializer init(seed);
  register_all(reg, init, config);
  reg.freeze();
  return reg;
}

ParameterLayout parameter_layout(const ModelConfig &config) {
  ParameterLayout layout;
  const ParamRegistry reference = build_parameters(config, 0);
  for (const auto &[name, value] : reference.entries()) {
    layout.emplace(name, value.shape());
  }
  return layout;
}

void check_compatibility(const ParamRegistry &registry, const ModelConfig &config) {
  const ParameterLayout layout = parameter_layout(config);
  std::vector<std::string> offenders;
  for (const auto &[name, shape] : layout) {
    if (!registry.contains(name)) {
      offenders.push_back("missing " + name);
    } else if (registry.get(name).shape() != shape) {
      offenders.push_back("shape " + name + " " + shape_to_string(registry.get(name).shape()) + " != " +
                          shape_to_string(shape));
    }
  }
  for (const auto &[name, value] : registry.entries()) {
    if (layout.find(name) == layout.end()) {
      offenders.push_back("unknown " + name);
    }
  }
  if (!offenders.empty()) {
    std::string msg = "weights incompatible with model config:";
    for (const std::string &o : offenders) {
      msg += "\n  " + o;
    }
    throw CompatibilityError(msg, std::move(offenders));
  }
}

SegmentationNetwork::SegmentationNetwork(ParamRegistry registry, ModelConfig config)
    : registry_(std::move(registry)), config_(config) {
  config_.validate();
  check_compatibility(registry_, config_);
  registry_.freeze();
}

SegmentationNetwork::SegmentationNetwork(ParamRegistry registry, ModelConfig config, Trusted)
    : registry_(std::move(registry)), config_(config) {}

SegmentationNetwork SegmentationNetwork::random(const ModelConfig &config, std::uint64_t seed) {
  // build_parameters emits exactly the layout for `config`
  return SegmentationNetwork(build_parameters(config, seed), config, Trusted{});
}

SegmentationNetwork::Pyramid SegmentationNetwork::backbone(const std::string &prefix, const Tensor &x) const {
  Pyramid p;
  Tensor y = relu(conv(registry_, prefix + ".stem", x, 2));
  y = relu(conv(registry_, prefix + ".stage4.down", y, 2));
  p.f4 = residual_block(registry_, prefix + ".stage4.block", y);
  y = relu(conv(registry_, prefix + ".stage8.down", p.f4, 2));
  p.f8 = residual_block(registry_, prefix + ".stage8.block", y);
  y = relu(conv(registry_, prefix + ".stage16.down", p.f8, 2));
  p.f16 = residual_block(registry_, prefix + ".stage16.block", y);
  return p;
}

QueryFeatures SegmentationNetwork::encode_query(const Tensor &image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("encode_query: expected 3 x H x W, got " + shape_to_string(image.shape()));
  }
  if (image.dim(1) < 16 || image.dim(2) < 16) {
    throw InputError("encode_query: image " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                     " is smaller than 16 pixels");
  }
  Pyramid p = backbone("query_encoder", image);
  QueryFeatures q;
  q.height = image.dim(1);
  q.width = image.dim(2);
  q.h = p.f16.dim(1);
  q.w = p.f16.dim(2);
  q.key = map_to_tokens(conv(registry_, "query_encoder.key_proj", p.f16));
  q.shrinkage =
      softplus_plus_one(conv(registry_, "query_encoder.shrinkage_proj", p.f16)).reshaped({q.h * q.w});
  q.selection = sigmoid(map_to_tokens(conv(registry_, "query_encoder.selection_proj", p.f16)));
  q.f4 = std::move(p.f4);
  q.f8 = std::move(p.f8);
  q.f16 = std::move(p.f16);
  return q;
}

Tensor SegmentationNetwork::encode_mask(const Tensor &image, const Tensor &target, const Tensor &others,
                                        const Tensor &query_f16) const {
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (target.numel() != h * w || others.numel() != h * w) {
    throw InputError("encode_mask: masks must match the " + std::to_string(h) + "x" + std::to_string(w) +
                     " image");
  }
  Tensor input({5, h, w});
  std::copy(image.values().begin(), image.values().end(), input.ptr());
  std::copy(target.values().begin(), target.values().end(), input.ptr() + 3 * h * w);
  std::copy(others.values().begin(), others.values().end(), input.ptr() + 4 * h * w);
  const Pyramid p = backbone("mask_encoder", input);
  Tensor v = conv(registry_, "mask_encoder.fuse.mask_proj", p.f16);
  add_inplace(v, conv(registry_, "mask_encoder.fuse.query_proj", query_f16));
  v = residual_block(registry_, "mask_encoder.fuse.block0", v);
  return residual_block(registry_, "mask_encoder.fuse.block1", v);
}

DecoderOutput SegmentationNetwork::decode(const Tensor &readout, const QueryFeatures &query) const {
  DecoderOutput out;
  out.features.stride16 = tokens_to_map(readout, query.h, query.w);
  Tensor x = conv(registry_, "decoder.in_proj", out.features.stride16);

  x = bilinear_resize(x, query.f8.dim(1), query.f8.dim(2));
  add_inplace(x, conv(registry_, "decoder.skip8", query.f8));
  out.features.stride8 = residual_block(registry_, "decoder.block8", x);

  x = bilinear_resize(out.features.stride8, query.f4.dim(1), query.f4.dim(2));
  add_inplace(x, conv(registry_, "decoder.skip4", query.f4));
  out.features.stride4 = residual_block(registry_, "decoder.block4", x);

  const Tensor logits = conv(registry_, "decoder.final", out.features.stride4);
  out.logits = bilinear_resize(logits, query.height, query.width).reshaped({query.height, query.width});
  return out;
}

} // namespace cutie
