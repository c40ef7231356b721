// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <memory>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "cutie/errors.hpp"
#include "cutie/network.hpp"
#include "cutie/preprocess.hpp"
#include "cutie/session.hpp"
#include "cutie/tensor_ops.hpp"
#include "test_support.hpp"

using namespace cutie;
using cutie::testing::make_video;
using cutie::testing::random_tensor;
using cutie::testing::relabel;
using cutie::testing::small_config;
using cutie::testing::uniform_tensor;

namespace {

std::shared_ptr<const SegmentationNetwork> small_network(std::uint64_t seed = 3, std::size_t blocks = 3) {
  ModelConfig cfg = small_config();
  cfg.num_blocks = blocks;
  return std::make_shared<SegmentationNetwork>(SegmentationNetwork::random(cfg, seed));
}

std::vector<LabelMap> run_video(const std::shared_ptr<const SegmentationNetwork> &net,
                                const cutie::testing::SyntheticVideo &video, const LabelMap &first,
                                InferenceConfig cfg = {}) {
  InferenceSession session(net, cfg);
  session.add_reference(video.frames[0], first);
  std::vector<LabelMap> out{first};
  for (std::size_t t = 1; t < video.frames.size(); ++t) {
    out.push_back(session.step(video.frames[t]));
  }
  return out;
}

} // namespace

TEST(WorkingSize, ShorterEdgeCappedAndRoundedUp) {
  EXPECT_EQ(working_size(480, 854, 480), (WorkingSize{480, 864}));
  EXPECT_EQ(working_size(1080, 1920, 480), (WorkingSize{480, 864}));
  EXPECT_EQ(working_size(100, 130, 480), (WorkingSize{112, 144}));
  EXPECT_EQ(working_size(128, 128, 480), (WorkingSize{128, 128}));
  EXPECT_THROW(working_size(8, 100, 480), InputError);
}

TEST(SoftAggregate, HalfProbabilitySplitsEvenly) {
  const Tensor out = soft_aggregate({Tensor({1, 1}, 0.5f)});
  ASSERT_EQ(out.shape(), (Shape{2, 1, 1}));
  EXPECT_FLOAT_EQ(out[0], 0.5f);
  EXPECT_FLOAT_EQ(out[1], 0.5f);
}

TEST(SoftAggregate, CertainObjectDominates) {
  const Tensor out = soft_aggregate({Tensor({1, 1}, 1.0f)});
  EXPECT_GT(out[1], 0.999999f);
  EXPECT_TRUE(all_finite(out));
}

TEST(SoftAggregate, EqualInputsGiveEqualOutputs) {
  const Tensor out = soft_aggregate({Tensor({2, 2}, 0.3f), Tensor({2, 2}, 0.3f)});
  for (std::size_t p = 0; p < 4; ++p) {
    EXPECT_EQ(out[4 + p], out[8 + p]);
  }
}

TEST(SoftAggregate, SumsToOneAndPermutesExactly) {
  std::mt19937_64 rng(1);
  std::vector<Tensor> probs;
  for (int k = 0; k < 4; ++k) {
    probs.push_back(uniform_tensor({3, 5}, rng, 0.0, 1.0));
  }
  const Tensor out = soft_aggregate(probs);
  for (std::size_t p = 0; p < 15; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      s += out[k * 15 + p];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  std::vector<Tensor> shuffled = {probs[2], probs[0], probs[3], probs[1]};
  const Tensor out2 = soft_aggregate(shuffled);
  const std::size_t src[4] = {2, 0, 3, 1};
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t p = 0; p < 15; ++p) {
      ASSERT_EQ(out2[(k + 1) * 15 + p], out[(src[k] + 1) * 15 + p]);
    }
  }
}

TEST(ArgmaxLabels, TiesGoToLowestId) {
  const Tensor dist({3, 1, 2}, {0.2f, 0.5f, 0.4f, 0.25f, 0.4f, 0.25f});
  const LabelMap m = argmax_labels(dist, {2, 7}, 1, 2);
  EXPECT_EQ(m.labels[0], 2);
  EXPECT_EQ(m.labels[1], 0);
}

TEST(ArgmaxLabels, ObjectTiesFollowScoresBeforeIds) {
  // pixel 0: objects tie, id 7 has the larger score; pixel 1: background ties object 7
  const Tensor dist({3, 1, 2}, {0.2f, 0.4f, 0.4f, 0.2f, 0.4f, 0.4f});
  const Tensor scores({2, 1, 2}, {1.0f, 1.0f, 3.0f, 3.0f});
  const LabelMap m = argmax_labels(dist, {2, 7}, 1, 2, &scores);
  EXPECT_EQ(m.labels[0], 7);
  EXPECT_EQ(m.labels[1], 0);
  const Tensor equal_scores({2, 1, 2}, 1.0f);
  EXPECT_EQ(argmax_labels(dist, {2, 7}, 1, 2, &equal_scores).labels[0], 2);
  const Tensor wrong({1, 1, 2});
  EXPECT_THROW(argmax_labels(dist, {2, 7}, 1, 2, &wrong), DimensionError);
}

TEST(SumOfOthers, SingleObjectIsZeroAndPairsSwap) {
  std::mt19937_64 rng(2);
  const Tensor a = uniform_tensor({4, 4}, rng, 0.0, 1.0), b = uniform_tensor({4, 4}, rng, 0.0, 1.0);
  const Tensor others = sum_of_others({a}, 0);
  for (float v : others.values()) {
    EXPECT_EQ(v, 0.0f);
  }
  EXPECT_TRUE(bitwise_equal(sum_of_others({a, b}, 0), b));
  EXPECT_TRUE(bitwise_equal(sum_of_others({a, b}, 1), a));
}

TEST(QueryEncoder, OutputShapes) {
  const auto net = small_network();
  std::mt19937_64 rng(3);
  const QueryFeatures q = net->encode_query(random_tensor({3, 48, 80}, rng));
  const ModelConfig &c = net->config();
  EXPECT_EQ(q.f4.shape(), (Shape{c.encoder_channels[0], 12, 20}));
  EXPECT_EQ(q.f8.shape(), (Shape{c.encoder_channels[1], 6, 10}));
  EXPECT_EQ(q.f16.shape(), (Shape{c.encoder_channels[2], 3, 5}));
  EXPECT_EQ(q.key.shape(), (Shape{15, c.key_channels}));
  EXPECT_EQ(q.selection.shape(), (Shape{15, c.key_channels}));
  for (float s : q.shrinkage.values()) {
    EXPECT_GE(s, 1.0f);
  }
  for (float e : q.selection.values()) {
    EXPECT_TRUE(e > 0.0f && e < 1.0f);
  }
}

TEST(QueryEncoder, Deterministic) {
  const auto net = small_network();
  std::mt19937_64 rng(4);
  const Tensor img = random_tensor({3, 32, 32}, rng);
  const QueryFeatures a = net->encode_query(img), b = net->encode_query(img);
  EXPECT_TRUE(bitwise_equal(a.f16, b.f16));
  EXPECT_TRUE(bitwise_equal(a.key, b.key));
}

TEST(QueryEncoder, KeysSelfMatch) {
  // Query and memory keys share one projection, so a frame matched against
  // itself peaks on the diagonal wherever keys are pairwise distinct.
  const auto net = small_network();
  std::mt19937_64 rng(5);
  const QueryFeatures q = net->encode_query(random_tensor({3, 64, 64}, rng));
  const Tensor d = similarity(q.key, q.selection, q.key, q.shrinkage);
  for (std::size_t i = 0; i < d.dim(0); ++i) {
    const auto row = d.row(i);
    EXPECT_EQ(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()), i);
  }
}

TEST(QueryEncoder, RejectsTinyInput) {
  const auto net = small_network();
  EXPECT_THROW(net->encode_query(Tensor({3, 8, 32})), InputError);
}

TEST(MaskEncoder, OutputShape) {
  const auto net = small_network();
  std::mt19937_64 rng(6);
  const Tensor img = random_tensor({3, 32, 48}, rng);
  const QueryFeatures q = net->encode_query(img);
  const Tensor v = net->encode_mask(img, uniform_tensor({32, 48}, rng, 0, 1), Tensor({32, 48}), q.f16);
  EXPECT_EQ(v.shape(), (Shape{net->config().channels, 2, 3}));
}

TEST(Decoder, OutputAtInputResolution) {
  const auto net = small_network();
  std::mt19937_64 rng(7);
  const QueryFeatures q = net->encode_query(random_tensor({3, 32, 48}, rng));
  const DecoderOutput out = net->decode(random_tensor({6, net->config().channels}, rng), q);
  EXPECT_EQ(out.logits.shape(), (Shape{32, 48}));
  EXPECT_EQ(out.features.stride8.shape(), (Shape{net->config().decoder_channels, 4, 6}));
  EXPECT_EQ(out.features.stride4.shape(), (Shape{net->config().decoder_channels, 8, 12}));
}

TEST(Decoder, ZeroWeightsGiveFinalBias) {
  ParamRegistry reg = build_parameters(small_config(), 8);
  ParamRegistry edited(reg.seed());
  for (const auto &[name, t] : reg.entries()) {
    Tensor v = t;
    if (name.rfind("decoder.", 0) == 0) {
      std::fill(v.values().begin(), v.values().end(), name == "decoder.final.bias" ? 0.75f : 0.0f);
    }
    edited.add(name, std::move(v));
  }
  const SegmentationNetwork net(std::move(edited), small_config());
  std::mt19937_64 rng(8);
  const QueryFeatures q = net.encode_query(random_tensor({3, 32, 32}, rng));
  const DecoderOutput out = net.decode(random_tensor({4, net.config().channels}, rng), q);
  for (float v : out.logits.values()) {
    EXPECT_EQ(v, 0.75f);
  }
}

TEST(ModelConfig, Defaults) {
  const ModelConfig c;
  EXPECT_EQ(c.decoder_channels, 128u);
  EXPECT_EQ(c.channels, 256u);
  EXPECT_EQ(c.num_blocks, 3u);
  EXPECT_EQ(c.num_queries, 16u);
  const InferenceConfig i;
  EXPECT_EQ(i.mem_interval, 5u);
  EXPECT_EQ(i.t_max, 5u);
  EXPECT_EQ(i.top_k, 30u);
}

TEST(Session, StepBeforeReferenceIsAnError) {
  InferenceSession s(small_network());
  EXPECT_THROW(s.step(Image(32, 32)), StateError);
}

TEST(Session, MaskSizeMustMatchFrame) {
  InferenceSession s(small_network());
  EXPECT_THROW(s.add_reference(Image(32, 32), LabelMap(32, 48)), InputError);
}

TEST(Session, OutputHasOriginalResolution) {
  const auto video = make_video(3, 40, 56, 2, 9);
  const auto out = run_video(small_network(), video, video.labels[0]);
  for (const LabelMap &m : out) {
    EXPECT_EQ(m.height, 40u);
    EXPECT_EQ(m.width, 56u);
  }
}

TEST(Session, FirstReferenceIsPinned) {
  const auto video = make_video(8, 32, 32, 1, 10);
  InferenceSession s(small_network(), {.mem_interval = 2, .t_max = 2});
  s.add_reference(video.frames[0], video.labels[0]);
  for (std::size_t t = 1; t < 8; ++t) {
    s.step(video.frames[t]);
  }
  const auto st = s.bank().introspect();
  ASSERT_EQ(st.size(), 2u);
  EXPECT_EQ(st[0].first, 0u);
  EXPECT_TRUE(st[0].second);
  EXPECT_EQ(st[1].first, 6u);
}

TEST(Session, PermanentReferenceSurvives) {
  const auto video = make_video(12, 32, 32, 1, 11);
  InferenceSession s(small_network(), {.mem_interval = 1, .t_max = 3});
  s.add_reference(video.frames[0], video.labels[0]);
  s.step(video.frames[1]);
  s.add_reference(video.frames[2], video.labels[2], true);
  for (std::size_t t = 3; t < 12; ++t) {
    s.step(video.frames[t]);
  }
  std::vector<std::size_t> ids;
  for (const auto &[idx, pinned] : s.bank().introspect()) {
    ids.push_back(idx);
  }
  EXPECT_EQ(ids, (std::vector<std::size_t>{0, 2, 11}));
}

TEST(Session, NewObjectMidVideoAddsLane) {
  const auto video = make_video(4, 32, 32, 2, 12);
  InferenceSession s(small_network());
  s.add_reference(video.frames[0], relabel(video.labels[0], [] {
                    std::vector<std::uint8_t> m(256);
                    std::iota(m.begin(), m.end(), 0);
                    m[2] = 0;
                    return m;
                  }()));
  EXPECT_EQ(s.object_ids(), (std::vector<std::uint8_t>{1}));
  s.step(video.frames[1]);
  s.add_reference(video.frames[2], video.labels[2]);
  EXPECT_EQ(s.object_ids(), (std::vector<std::uint8_t>{1, 2}));
  EXPECT_EQ(s.bank().num_lanes(), 2u);
  const LabelMap out = s.step(video.frames[3]);
  EXPECT_EQ(out.height, 32u);
}

TEST(Session, FrameSizeFixedBySequence) {
  const auto video = make_video(1, 32, 32, 1, 13);
  InferenceSession s(small_network());
  s.add_reference(video.frames[0], video.labels[0]);
  EXPECT_THROW(s.step(Image(32, 48)), InputError);
}

TEST(Session, SelfMatchDrivesAffinityToDiagonal) {
  // Stepping on the reference frame itself: with pairwise-distinct keys and
  // top_k = 1, each query pixel reads exactly its own memory pixel.
  const auto video = make_video(1, 64, 64, 2, 14);
  const auto net = small_network();
  InferenceSession s(net, {.top_k = 1});
  s.add_reference(video.frames[0], video.labels[0]);
  StepTrace trace;
  s.step(video.frames[0], &trace);
  const std::size_t hw = trace.h * trace.w;
  ASSERT_EQ(trace.affinity.shape(), (Shape{hw, hw}));
  for (std::size_t i = 0; i < hw; ++i) {
    EXPECT_EQ(trace.affinity.at(i, i), 1.0f);
  }
}

TEST(Session, ObjectIdPermutationIsEquivariant) {
  const auto video = make_video(6, 48, 48, 3, 15, {1, 2, 3});
  const auto net = small_network(16);
  std::vector<std::uint8_t> mapping(256, 0);
  mapping[1] = 5;
  mapping[2] = 1;
  mapping[3] = 9;
  const auto a = run_video(net, video, video.labels[0]);
  const auto b = run_video(net, video, relabel(video.labels[0], mapping));
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(relabel(a[t], mapping), b[t]) << "frame " << t;
  }
}

TEST(Session, ZeroBlocksKeepsInitialReadout) {
  const auto video = make_video(3, 32, 32, 2, 17);
  InferenceSession s(small_network(17, 0));
  s.add_reference(video.frames[0], video.labels[0]);
  for (std::size_t t = 1; t < 3; ++t) {
    StepTrace trace;
    s.step(video.frames[t], &trace);
    for (const LaneTrace &lane : trace.lanes) {
      EXPECT_TRUE(bitwise_equal(lane.initial_readout, lane.final_readout));
    }
  }
}

TEST(Session, ParallelLanesMatchSerial) {
  const auto video = make_video(4, 32, 32, 3, 18);
  const auto net = small_network(18);
  InferenceConfig serial;
  serial.parallel_lanes = false;
  EXPECT_EQ(run_video(net, video, video.labels[0]), run_video(net, video, video.labels[0], serial));
}

TEST(Network, CompatibilityNamesOffenders) {
  ParamRegistry full = build_parameters(small_config(), 19);
  ParamRegistry partial;
  for (const auto &[name, t] : full.entries()) {
    if (name != "decoder.final.weight") {
      partial.add(name, t);
    }
  }
  try {
    check_compatibility(partial, small_config());
    FAIL() << "expected CompatibilityError";
  } catch (const CompatibilityError &e) {
    ASSERT_EQ(e.offenders().size(), 1u);
    EXPECT_NE(e.offenders()[0].find("decoder.final.weight"), std::string::npos);
  }
}

TEST(Network, RandomInitIsSeeded) {
  EXPECT_TRUE(bitwise_equal(build_parameters(small_config(), 20), build_parameters(small_config(), 20)));
  EXPECT_FALSE(bitwise_equal(build_parameters(small_config(), 20), build_parameters(small_config(), 21)));
}
