// Copyright 2026 The MotionScope Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mscope/motion_decoder.hpp"
#include "test_util.hpp"

namespace mscope {
namespace {

TEST(InjectMotionTest, ZeroAndSingletonCues) {
  Rng rng(71);
  Tensor q = random_normal({3, 4}, rng);
  EXPECT_EQ(inject_motion(constant(q), constant(Tensor({2, 4}))).value(), q);
  Tensor f = random_normal({1, 4}, rng);
  const Tensor out = inject_motion(constant(q), constant(f)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at(i, c), q.at(i, c) + f.at(0, c), 1e-15);
}

TEST(InjectMotionTest, MatchesAttentionOracle) {
  Rng rng(72);
  Tensor q = random_normal({4, 6}, rng), f = random_normal({3, 6}, rng);
  const auto att = testing::direct_attention(testing::to_matrix(q), testing::to_matrix(f),
                                             testing::to_matrix(f));
  const Tensor out = inject_motion(constant(q), constant(f)).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(out.at(i, c), q.at(i, c) + att[i][c], 1e-12);
}

struct DecoderFixture : ::testing::Test {
  Rng rng{73};
  ParameterSet ps;
  DecoderConfig cfg{.queries = 3, .channels = 6};
};

TEST_F(DecoderFixture, SingleMemoryTokenIsSharedByAllQueries) {
  MotionDecoder dec(ps, "d", cfg, rng);
  zero_linear(dec.ffn().down);
  const Tensor q = random_normal({3, 6}, rng);
  const Tensor v = dec(constant(q), constant(random_normal({1, 1, 6}, rng))).tokens.value();
  for (std::size_t i = 1; i < 3; ++i)
    for (std::size_t c = 0; c < 6; ++c)
      EXPECT_NEAR(v.at(i, c) - q.at(i, c), v.at(0, c) - q.at(0, c), 1e-14);
}

TEST_F(DecoderFixture, ZeroAttentionProjectionLeavesFeedForwardResidual) {
  MotionDecoder dec(ps, "d", cfg, rng);
  dec.zero_output_projections();
  Linear& down = dec.ffn().down;
  down.weight.mutable_value() = random_normal(down.weight.shape(), rng);
  const Tensor q = random_normal({3, 6}, rng);
  const Tensor v = dec(constant(q), constant(random_normal({4, 5, 6}, rng))).tokens.value();
  const Tensor expect = add(constant(q), dec.ffn()(constant(q))).value();
  EXPECT_LT(max_abs_diff(v, expect), 1e-15);
}

TEST_F(DecoderFixture, InvariantToMemoryOrder) {
  MotionDecoder dec(ps, "d", cfg, rng);
  const Tensor q = random_normal({3, 6}, rng);
  const Tensor mem = random_normal({4, 5, 6}, rng);
  std::vector<std::size_t> order(20);
  for (std::size_t i = 0; i < 20; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  Tensor shuffled({20, 6});
  for (std::size_t i = 0; i < 20; ++i)
    std::copy_n(mem.data().data() + order[i] * 6, 6, shuffled.mutable_data().data() + i * 6);
  const auto a = dec(constant(q), constant(mem)), b = dec(constant(q), constant(shuffled));
  EXPECT_LT(max_abs_diff(a.tokens.value(), b.tokens.value()), 1e-12);
  EXPECT_LT(max_abs_diff(a.score_logits.value(), b.score_logits.value()), 1e-12);
}

TEST_F(DecoderFixture, ScoresInUnitInterval) {
  MotionDecoder dec(ps, "d", cfg, rng);
  const auto out = dec(constant(random_normal({3, 6}, rng)), constant(random_normal({2, 4, 6}, rng)));
  for (double s : out.scores()) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
  EXPECT_THROW(dec(constant(Tensor({3, 5})), constant(Tensor({2, 4, 6}))), DimensionError);
}

TEST_F(DecoderFixture, GradientCheck) {
  MotionDecoder dec(ps, "d", cfg, rng);
  Var q = ps.add("q", random_normal({3, 6}, rng));
  Var f = ps.add("f", random_normal({2, 6}, rng));
  Var mem = ps.add("mem", random_normal({2, 4, 6}, rng));
  const Tensor w = random_normal({3, 6}, rng), ws = random_normal({3}, rng);
  auto loss = [&] {
    const auto out = dec(inject_motion(q, f), mem);
    return add(sum(mul(out.tokens, constant(w))), sum(mul(sigmoid(out.score_logits), constant(ws))));
  };
  const auto r = grad_check(ps.items(), loss);
  EXPECT_LT(r.max_error, 1e-4) << r.worst_parameter;
}

MaskFeatures random_features(Rng& rng, std::size_t t, std::size_t h, std::size_t w, std::size_t c) {
  return {constant(pixel_basis(random_normal({t, h, w, 3}, rng), 4)),
          constant(random_normal({3 + 4 + 1, c}, rng)), h, w};
}

TEST(VideoMaskTest, LowScoresSelectNothing) {
  Rng rng(74);
  VideoTokenSet v{constant(random_normal({3, 5}, rng)), constant(Tensor::vector({-2.0, -0.1, -5.0}))};
  const auto pred = predict_video_masks(v, random_features(rng, 2, 3, 3, 5));
  EXPECT_TRUE(pred.selected.empty());
}

TEST(VideoMaskTest, ZeroTokenGivesHalfMasks) {
  Rng rng(75);
  Tensor tokens = random_normal({2, 5}, rng);
  for (std::size_t c = 0; c < 5; ++c) tokens.at(1, c) = 0.0;
  VideoTokenSet v{constant(tokens), constant(Tensor::vector({1.0, 1.0}))};
  const auto pred = predict_video_masks(v, random_features(rng, 2, 3, 3, 5));
  EXPECT_EQ(pred.selected, (std::vector<std::size_t>{0, 1}));
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t p = 0; p < 9; ++p) EXPECT_DOUBLE_EQ(pred.probabilities.at(1, t, p), 0.5);
}

TEST(VideoMaskTest, MatchesPerPixelLoop) {
  Rng rng(76);
  const MaskFeatures f = random_features(rng, 3, 2, 4, 5);
  const Tensor tokens = random_normal({2, 5}, rng);
  VideoTokenSet v{constant(tokens), constant(Tensor::vector({0.3, -0.3}))};
  const auto pred = predict_video_masks(v, f);
  const Tensor feat = f.materialize();
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t p = 0; p < 8; ++p) {
        double d = 0.0;
        for (std::size_t c = 0; c < 5; ++c) d += tokens.at(j, c) * feat[(t * 8 + p) * 5 + c];
        EXPECT_NEAR(pred.probabilities.at(j, t, p), 1.0 / (1.0 + std::exp(-d)), 1e-13);
      }
  EXPECT_EQ(pred.selected, (std::vector<std::size_t>{0}));
}

TEST(VideoMaskTest, ThresholdIsMonotone) {
  Rng rng(77);
  const MaskFeatures f = random_features(rng, 2, 2, 2, 4);
  for (int trial = 0; trial < 50; ++trial) {
    VideoTokenSet v{constant(random_normal({6, 4}, rng)), constant(random_normal({6}, rng, 2.0))};
    std::vector<std::size_t> prev = predict_video_masks(v, f, 0.05).selected;
    for (double th : {0.2, 0.4, 0.5, 0.7, 0.95}) {
      const auto cur = predict_video_masks(v, f, th).selected;
      EXPECT_TRUE(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
      prev = cur;
    }
  }
  VideoTokenSet v{constant(Tensor({1, 4})), constant(Tensor({1}))};
  EXPECT_THROW(predict_video_masks(v, f, 1.0), InputError);
  EXPECT_THROW(predict_video_masks(v, f, 0.0), InputError);
}

}  // namespace
}  // namespace mscope
