// SPDX-License-Identifier: Apache-2.0
#include "cutie/object_transformer.hpp"

#include "cutie/attention.hpp"
#include "cutie/layers.hpp"
#include "cutie/masked_attention.hpp"
#include "cutie/tensor_ops.hpp"

namespace cutie {

void ObjectTransformerConfig::validate() const {
  if (num_queries == 0 || num_queries % 2 != 0) {
    throw ConfigError("object transformer: query count must be even and nonzero, got " +
                      std::to_string(num_queries));
  }
  if (channels % 4 != 0) {
    throw ConfigError("object transformer: channel count must be a multiple of 4, got " +
                      std::to_string(channels));
  }
  MultiHeadAttentionConfig{channels, num_heads}.validate();
}

std::vector<Tensor> ObjectTransformerOutput::aux_masks() const {
  std::vector<Tensor> out;
  out.reserve(blocks.size());
  for (const BlockOutput &b : blocks) {
    out.push_back(b.aux_mask);
  }
  return out;
}

ObjectTransformer::ObjectTransformer(const ParamRegistry &registry, ObjectTransformerConfig config,
                                     std::string prefix)
    : registry_(registry), config_(config), prefix_(std::move(prefix)) {
  config_.validate();
}

std::string ObjectTransformer::name(std::size_t block, const char *leaf) const {
  return prefix_ + ".block" + std::to_string(block) + "." + leaf;
}

void ObjectTransformer::register_parameters(ParamRegistry &registry, ParamInitializer &init,
                                            const ObjectTransformerConfig &config, const std::string &prefix) {
  config.validate();
  const std::size_t c = config.channels;
  registry.add(prefix + ".queries", init.truncated_normal({config.num_queries, c}, 1.0));
  registry.add(prefix + ".query_pos", init.truncated_normal({config.num_queries, c}, 1.0));
  register_linear(registry, init, prefix + ".obj_embed", c, c);
  register_linear(registry, init, prefix + ".pix_embed", c, c);
  for (std::size_t l = 0; l < config.num_blocks; ++l) {
    const std::string b = prefix + ".block" + std::to_string(l);
    register_linear(registry, init, b + ".aux_mask", c, 1);
    register_layer_norm(registry, b + ".cross_attn.norm", c);
    register_attention(registry, init, b + ".cross_attn", c);
    register_layer_norm(registry, b + ".self_attn.norm", c);
    register_attention(registry, init, b + ".self_attn", c);
    register_layer_norm(registry, b + ".query_ffn.norm", c);
    register_mlp(registry, init, b + ".query_ffn", c, config.ffn_hidden, c);
    register_layer_norm(registry, b + ".reverse_attn.norm", c);
    register_attention(registry, init, b + ".reverse_attn", c);
    register_conv(registry, init, b + ".pixel_ffn.conv1", c, c, 3);
    register_conv(registry, init, b + ".pixel_ffn.conv2", c, c, 3);
    register_eca(registry, init, b + ".pixel_ffn.eca");
  }
}

Tensor ObjectTransformer::predict_aux_mask(const Tensor &pixels, std::size_t block) const {
  if (block >= config_.num_blocks) {
    throw ConfigError("object transformer: block " + std::to_string(block) + " out of range");
  }
  Tensor logits = linear(registry_, name(block, "aux_mask"), pixels);
  return sigmoid(std::move(logits).reshaped({pixels.dim(0)}));
}

PositionalEmbeddings ObjectTransformer::embeddings(const Tensor &object_memory, const Tensor &initial_readout,
                                                   std::size_t h, std::size_t w) const {
  PositionalEmbeddings pos;
  pos.queries = add(registry_.get(prefix_ + ".query_pos"), linear(registry_, prefix_ + ".obj_embed", object_memory));
  pos.pixels = add(sinusoidal_pe_2d(h, w, config_.channels), linear(registry_, prefix_ + ".pix_embed", initial_readout));
  return pos;
}

BlockOutput ObjectTransformer::block(std::size_t index, const Tensor &queries, const Tensor &pixels,
                                     const PositionalEmbeddings &pos, std::size_t h, std::size_t w) const {
  if (queries.shape() != Shape{config_.num_queries, config_.channels} ||
      pixels.shape() != Shape{h * w, config_.channels}) {
    throw DimensionError("object transformer block: queries " + shape_to_string(queries.shape()) + ", pixels " +
                         shape_to_string(pixels.shape()));
  }
  const std::size_t heads = config_.num_heads;
  BlockOutput out;

  // (1) auxiliary mask from R_{l-1} and the additive fg/bg mask.
  out.aux_mask = predict_aux_mask(pixels, index);
  const Tensor mask = build_attention_mask(out.aux_mask, config_.num_queries);

  // (2) masked cross-attention: queries read from pixels.
  const Tensor pixel_keys = add(pixels, pos.pixels);
  const Tensor q_norm = layer_norm(registry_, name(index, "cross_attn.norm"), queries);
  AttentionResult<float> cross = attention_forward(attention_weights(registry_, name(index, "cross_attn")),
                                                   add(q_norm, pos.queries), pixel_keys, pixels, &mask, heads);
  Tensor x = add(queries, cross.output);

  // (3) query self-attention.
  const Tensor s_norm = layer_norm(registry_, name(index, "self_attn.norm"), x);
  const Tensor s_in = add(s_norm, pos.queries);
  add_inplace(x, attention_forward(attention_weights(registry_, name(index, "self_attn")), s_in, s_in, s_norm,
                                   static_cast<const Tensor *>(nullptr), heads)
                     .output);

  // (4) query FFN.
  add_inplace(x, mlp_2layer(registry_, name(index, "query_ffn"),
                            layer_norm(registry_, name(index, "query_ffn.norm"), x)));

  // (5) reverse cross-attention: pixels read from the updated queries, unmasked.
  const Tensor r_norm = layer_norm(registry_, name(index, "reverse_attn.norm"), pixels);
  Tensor r = add(pixels, attention_forward(attention_weights(registry_, name(index, "reverse_attn")),
                                           add(r_norm, pos.pixels), add(x, pos.queries), x, static_cast<const Tensor *>(nullptr), heads)
                             .output);

  // (6) pixel FFN: two 3x3 convs, ECA after the second, no normalization.
  const Tensor map = tokens_to_map(r, h, w);
  Tensor ffn = relu(conv(registry_, name(index, "pixel_ffn.conv1"), map));
  ffn = conv(registry_, name(index, "pixel_ffn.conv2"), ffn);
  ffn = eca_channel_attention(registry_, name(index, "pixel_ffn.eca"), ffn);
  add_inplace(r, map_to_tokens(ffn));

  out.queries = std::move(x);
  out.pixels = std::move(r);
  out.attention = head_mean(cross.probs);
  out.attention_heads = std::move(cross.probs);
  return out;
}

BlockOutput ObjectTransformer::transformer_block(const Tensor &queries, const Tensor &pixels,
                                                 const Tensor &object_memory, const Tensor &initial_readout,
                                                 std::size_t index, std::size_t h, std::size_t w) const {
  return block(index, queries, pixels, embeddings(object_memory, initial_readout, h, w), h, w);
}

ObjectTransformerOutput ObjectTransformer::forward(const Tensor &initial_readout, const Tensor &object_memory,
                                                   std::size_t h, std::size_t w) const {
  if (object_memory.shape() != Shape{config_.num_queries, config_.channels}) {
    throw DimensionError("object transformer: object memory " + shape_to_string(object_memory.shape()));
  }
  ObjectTransformerOutput out;
  out.queries = add(registry_.get(prefix_ + ".queries"), object_memory);
  out.readout = initial_readout;
  if (config_.num_blocks == 0) {
    return out;
  }
  const PositionalEmbeddings pos = embeddings(object_memory, initial_readout, h, w);
  out.blocks.reserve(config_.num_blocks);
  for (std::size_t l = 0; l < config_.num_blocks; ++l) {
    BlockOutput b = block(l, out.queries, out.readout, pos, h, w);
    out.queries = b.queries;
    out.readout = b.pixels;
    out.blocks.push_back(std::move(b));
  }
  return out;
}

} // namespace cutie
