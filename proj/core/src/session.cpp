// SPDX-License-Identifier: Apache-2.0
#include "cutie/session.hpp"

#include <algorithm>
#include <exception>
#include <thread>

#include "cutie/errors.hpp"
#include "cutie/layers.hpp"
#include "cutie/tensor_ops.hpp"

namespace cutie {

void InferenceConfig::validate() const {
  if (mem_interval == 0) {
    throw ConfigError("memory interval must be at least 1");
  }
  if (t_max == 0) {
    throw ConfigError("t_max must be at least 1");
  }
  if (top_k == 0) {
    throw ConfigError("top_k must be at least 1");
  }
  if (max_short_edge < kSizeMultiple) {
    throw ConfigError("max short edge must be at least 16");
  }
}

namespace {

// Runs fn(0..n-1), on worker threads when asked. Each index touches only its
// own lane, so the result matches the serial loop exactly.
template <typename Fn>
void for_each_lane(std::size_t n, bool parallel, Fn &&fn) {
  if (!parallel || n < 2) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> workers;
    workers.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      workers.emplace_back([&, i] {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
  }
  for (const std::exception_ptr &e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

} // namespace

InferenceSession::InferenceSession(std::shared_ptr<const SegmentationNetwork> network, InferenceConfig config)
    : network_(std::move(network)), config_(config), bank_(config.t_max) {
  if (!network_) {
    throw ConfigError("session needs a network");
  }
  config_.validate();
}

std::size_t InferenceSession::lane_of(std::uint8_t id) const {
  const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) {
    throw InputError("unknown object id " + std::to_string(id));
  }
  return static_cast<std::size_t>(it - ids_.begin());
}

const ObjectMemory &InferenceSession::object_memory(std::uint8_t id) const { return lanes_[lane_of(id)].memory; }

const Tensor &InferenceSession::hidden(std::uint8_t id) const { return lanes_[lane_of(id)].hidden; }

void InferenceSession::check_frame(std::size_t height, std::size_t width) {
  if (!working_) {
    working_ = working_size(height, width, config_.max_short_edge);
    original_h_ = height;
    original_w_ = width;
    pos_embedding_ =
        sinusoidal_pe_2d(working_->height / kSizeMultiple, working_->width / kSizeMultiple, network_->config().channels);
    return;
  }
  if (height != original_h_ || width != original_w_) {
    throw InputError("frame is " + std::to_string(height) + "x" + std::to_string(width) + ", session expects " +
                     std::to_string(original_h_) + "x" + std::to_string(original_w_));
  }
}

void InferenceSession::memorize(const Tensor &image, const QueryFeatures &query, const std::vector<Tensor> &masks,
                                bool permanent, bool deep) {
  const ParamRegistry &reg = network_->registry();
  const std::size_t n_queries = network_->config().num_queries;
  MemoryFrame frame;
  frame.frame_index = frame_index_;
  frame.key = query.key;
  frame.shrinkage = query.shrinkage;
  frame.values.resize(lanes_.size());
  for_each_lane(lanes_.size(), config_.parallel_lanes, [&](std::size_t o) {
    const Tensor others = sum_of_others(masks, o);
    const Tensor v = network_->encode_mask(image, masks[o], others, query.f16);
    Tensor tokens = map_to_tokens(v);

    Tensor small = area_downsample(masks[o].reshaped({1, query.height, query.width}), kSizeMultiple);
    const Tensor weights = compute_pooling_masks(reg, tokens, small, pos_embedding_, n_queries);
    lanes_[o].memory.update(compute_object_feature(reg, tokens), weights);
    if (deep) {
      lanes_[o].hidden = deep_update(reg, lanes_[o].hidden, v);
    }
    frame.values[o] = std::move(tokens);
  });
  bank_.insert(std::move(frame), permanent);
}

void InferenceSession::add_reference(const Image &image, const LabelMap &mask, bool permanent) {
  if (mask.height != image.height || mask.width != image.width) {
    throw InputError("mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) + ", frame is " +
                     std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  if (mask.labels.size() != mask.height * mask.width) {
    throw InputError("mask buffer does not match its dimensions");
  }
  check_frame(image.height, image.width);
  const WorkingSize size = *working_;
  const std::size_t c = network_->config().channels;
  const std::size_t h = size.height / kSizeMultiple, w = size.width / kSizeMultiple;

  for (std::uint8_t id : mask.object_ids()) {
    const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it != ids_.end() && *it == id) {
      continue;
    }
    const std::size_t pos = static_cast<std::size_t>(it - ids_.begin());
    ids_.insert(it, id);
    lanes_.insert(lanes_.begin() + static_cast<std::ptrdiff_t>(pos),
                  Lane{ObjectMemory(network_->config().num_queries, c), Tensor({c, h, w})});
    bank_.insert_lane(pos, c);
  }

  const Tensor input = image_to_tensor(image, size);
  const QueryFeatures query = network_->encode_query(input);
  std::vector<Tensor> masks;
  masks.reserve(ids_.size());
  for (std::uint8_t id : ids_) {
    masks.push_back(object_mask(mask, id, size));
  }
  memorize(input, query, masks, permanent, false);
  has_reference_ = true;
  ++frame_index_;
}

LabelMap InferenceSession::step(const Image &image, StepTrace *trace) {
  if (!has_reference_) {
    throw StateError("step called before any reference mask was added");
  }
  check_frame(image.height, image.width);
  const WorkingSize size = *working_;
  const ParamRegistry &reg = network_->registry();

  const Tensor input = image_to_tensor(image, size);
  const QueryFeatures query = network_->encode_query(input);
  const Tensor logits = similarity(query.key, query.selection, bank_.keys(), bank_.shrinkage());
  const Tensor aff = affinity(logits, config_.top_k);
  const ObjectTransformer transformer = network_->transformer();

  std::vector<Tensor> probs(lanes_.size());
  Tensor logits_all({lanes_.size(), size.height, size.width});
  std::vector<LaneTrace> traces(trace ? lanes_.size() : 0);
  for_each_lane(lanes_.size(), config_.parallel_lanes, [&](std::size_t o) {
    Lane &lane = lanes_[o];
    Tensor r0 = pixel_readout(reg, aff, bank_.values(o), map_to_tokens(lane.hidden), query.h, query.w);
    ObjectTransformerOutput out = transformer.forward(r0, lane.memory.read(), query.h, query.w);
    DecoderOutput dec = network_->decode(out.readout, query);
    lane.hidden = sensory_update(reg, lane.hidden, dec.features);
    std::copy(dec.logits.values().begin(), dec.logits.values().end(), logits_all.ptr() + o * dec.logits.numel());
    probs[o] = sigmoid(std::move(dec.logits));
    if (trace) {
      LaneTrace &t = traces[o];
      t.id = ids_[o];
      t.initial_readout = std::move(r0);
      for (BlockOutput &b : out.blocks) {
        t.attention.push_back(std::move(b.attention));
        t.aux_masks.push_back(std::move(b.aux_mask));
      }
      t.final_readout = std::move(out.readout);
    }
  });

  Tensor distribution = lanes_.empty() ? Tensor({1, size.height, size.width}, 1.0f) : soft_aggregate(probs);
  const bool memorize_now = frame_index_ % config_.mem_interval == 0;
  if (memorize_now) {
    const std::size_t hw = size.height * size.width;
    std::vector<Tensor> masks;
    masks.reserve(lanes_.size());
    for (std::size_t o = 0; o < lanes_.size(); ++o) {
      masks.emplace_back(Shape{size.height, size.width},
                         std::vector<float>(distribution.ptr() + (o + 1) * hw, distribution.ptr() + (o + 2) * hw));
    }
    memorize(input, query, masks, false, true);
  }
  if (trace) {
    trace->frame_index = frame_index_;
    trace->h = query.h;
    trace->w = query.w;
    trace->affinity = aff;
    trace->memorized = memorize_now;
    trace->lanes = std::move(traces);
  }
  ++frame_index_;
  return argmax_labels(distribution, ids_, original_h_, original_w_, lanes_.empty() ? nullptr : &logits_all);
}

} // namespace cutie
