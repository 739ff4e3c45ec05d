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

#include "mscope/hmp.hpp"
#include "test_util.hpp"

namespace mscope {
namespace {

using testing::Matrix;

// Column softmax over T of traj F^T / sqrt(C), written out directly.
Matrix oracle_attn(const Matrix& traj, const Matrix& f) {
  const std::size_t t_len = traj.size(), k = f.size(), c = f[0].size();
  Matrix a(t_len, std::vector<double>(k));
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> col(t_len);
    for (std::size_t t = 0; t < t_len; ++t) {
      double d = 0.0;
      for (std::size_t x = 0; x < c; ++x) d += traj[t][x] * f[j][x];
      col[t] = d / std::sqrt(static_cast<double>(c));
    }
    const auto s = testing::direct_softmax(col);
    for (std::size_t t = 0; t < t_len; ++t) a[t][j] = s[t];
  }
  return a;
}

// One highlight/enrich/merge stage composed from scratch.
Matrix oracle_stage(const Matrix& traj, const Matrix& f) {
  const Matrix a = oracle_attn(traj, f);
  const std::size_t t_len = traj.size(), c = traj[0].size();
  std::vector<double> w(t_len, 0.0);
  for (std::size_t t = 0; t < t_len; ++t)
    for (double v : a[t]) w[t] += v;
  Matrix e = traj;
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t j = 0; j < f.size(); ++j)
      for (std::size_t x = 0; x < c; ++x) e[t][x] += a[t][j] / w[t] * f[j][x];
  Matrix m(t_len / 2, std::vector<double>(c));
  for (std::size_t p = 0; p < t_len / 2; ++p)
    for (std::size_t x = 0; x < c; ++x)
      m[p][x] = (w[2 * p] * e[2 * p][x] + w[2 * p + 1] * e[2 * p + 1][x]) / (w[2 * p] + w[2 * p + 1]);
  return m;
}

TEST(HighlightTest, SingleCueColumnSumsToOne) {
  Rng rng(51);
  const Highlight h = highlight(constant(random_normal({6, 4}, rng)), constant(random_normal({1, 4}, rng)));
  double s = 0.0;
  for (double v : h.frame_weight.value().data()) s += v;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(HighlightTest, IdenticalRowsGiveUniformWeights) {
  Rng rng(52);
  const Tensor row = random_normal({4}, rng);
  std::vector<double> d;
  for (int t = 0; t < 8; ++t) d.insert(d.end(), row.vec().begin(), row.vec().end());
  const Highlight h = highlight(constant(Tensor({8, 4}, d)), constant(random_normal({3, 4}, rng)));
  for (double v : h.frame_weight.value().data()) EXPECT_NEAR(v, 3.0 / 8.0, 1e-15);
}

TEST(HighlightTest, MatchesOracleAndSumsToCueCount) {
  Rng rng(53);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor traj = random_normal({8, 5}, rng, 2.0), f = random_normal({3, 5}, rng, 2.0);
    const Highlight h = highlight(constant(traj), constant(f));
    const Matrix a = oracle_attn(testing::to_matrix(traj), testing::to_matrix(f));
    EXPECT_LT(testing::max_abs_diff(a, h.attn.value()), 1e-12);
    double s = 0.0;
    for (std::size_t t = 0; t < 8; ++t) {
      EXPECT_GT(h.frame_weight.value()[t], 0.0);
      s += h.frame_weight.value()[t];
    }
    EXPECT_NEAR(s, 3.0, 1e-9);
  }
}

TEST(EnrichTest, SingleCueAddsThatRow) {
  Rng rng(54);
  Tensor traj = random_normal({4, 3}, rng), f = random_normal({1, 3}, rng);
  const Highlight h = highlight(constant(traj), constant(f));
  const Tensor e = enrich(constant(traj), h.attn, h.frame_weight, constant(f)).value();
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(e.at(t, c), traj.at(t, c) + f.at(0, c), 1e-14);
}

TEST(EnrichTest, EqualCueRowsAddThatVector) {
  Rng rng(55);
  Tensor traj = random_normal({4, 3}, rng);
  Tensor f = Tensor::matrix({{0.5, -1, 2}, {0.5, -1, 2}});
  const Highlight h = highlight(constant(traj), constant(f));
  const Tensor e = enrich(constant(traj), h.attn, h.frame_weight, constant(f)).value();
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(e.at(t, c), traj.at(t, c) + f.at(0, c), 1e-14);
}

TEST(EnrichTest, DeltaWithinCueBounds) {
  Rng rng(56);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor traj = random_normal({8, 4}, rng, 2.0), f = random_normal({3, 4}, rng);
    const Highlight h = highlight(constant(traj), constant(f));
    const Tensor e = enrich(constant(traj), h.attn, h.frame_weight, constant(f)).value();
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t c = 0; c < 4; ++c) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t k = 0; k < 3; ++k) {
          lo = std::min(lo, f.at(k, c));
          hi = std::max(hi, f.at(k, c));
        }
        const double d = e.at(t, c) - traj.at(t, c);
        EXPECT_GE(d, lo - 1e-9);
        EXPECT_LE(d, hi + 1e-9);
      }
  }
}

TEST(MergeTest, EqualWeightsGivePairMeans) {
  Tensor x = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}, {7, 9}});
  const Tensor m = merge(constant(x), constant(Tensor({4}, 0.75))).value();
  EXPECT_EQ(m, Tensor::matrix({{2, 3}, {6, 7.5}}));
}

TEST(MergeTest, DegenerateWeightPicksFirst) {
  Rng rng(57);
  Tensor x = random_normal({2, 3}, rng);
  const Tensor m = merge(constant(x), constant(Tensor::vector({1.0, 0.0}))).value();
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(m.at(0, c), x.at(0, c));
}

TEST(MergeTest, MatchesPairwiseLoop) {
  Rng rng(58);
  Tensor x = random_normal({3, 6, 4}, rng), w = random_uniform({3, 6}, rng, 0.1, 2.0);
  const Tensor m = merge(constant(x), constant(w)).value();
  ASSERT_EQ(m.shape(), (Shape{3, 3, 4}));
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t c = 0; c < 4; ++c) {
        const double w0 = w.at(b, 2 * j), w1 = w.at(b, 2 * j + 1);
        EXPECT_NEAR(m.at(b, j, c), (w0 * x.at(b, 2 * j, c) + w1 * x.at(b, 2 * j + 1, c)) / (w0 + w1),
                    1e-14);
      }
}

TEST(HierarchyTest, ZeroStagesIsIdentity) {
  Rng rng(59);
  Tensor traj = random_normal({8, 4}, rng);
  EXPECT_EQ(hierarchical_cross_attention(constant(traj), constant(random_normal({2, 4}, rng)), 0).value(),
            traj);
  EXPECT_THROW(hierarchical_pool(constant(traj), constant(Tensor({2, 4})), 0), InputError);
}

TEST(HierarchyTest, EightFramesThreeStagesCollapseToOneToken) {
  Rng rng(60);
  Tensor traj = random_normal({8, 4}, rng), f = random_normal({2, 4}, rng);
  const Tensor pooled = hierarchical_pool(constant(traj), constant(f), 3).value();
  ASSERT_EQ(pooled.shape(), (Shape{8, 4}));
  for (std::size_t t = 1; t < 8; ++t)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(pooled.at(t, c), pooled.at(0, c));
  Matrix ref = testing::to_matrix(traj);
  const Matrix fm = testing::to_matrix(f);
  for (int s = 0; s < 3; ++s) ref = oracle_stage(ref, fm);
  ASSERT_EQ(ref.size(), 1u);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(pooled.at(0, c), ref[0][c], 1e-12);
}

TEST(HierarchyTest, OneStageMatchesComposedOracle) {
  Rng rng(61);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor traj = random_normal({4, 6}, rng), f = random_normal({2, 6}, rng);
    const Tensor out = hierarchical_cross_attention(constant(traj), constant(f), 1).value();
    const Matrix m = oracle_stage(testing::to_matrix(traj), testing::to_matrix(f));
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t c = 0; c < 6; ++c)
        EXPECT_NEAR(out.at(t, c), traj.at(t, c) + m[t / 2][c], 1e-12);
  }
}

TEST(HierarchyTest, PaddingRepeatsLastFrameThenDropsIt) {
  Rng rng(62);
  for (std::size_t t_len : {5u, 6u, 7u}) {
    Tensor traj = random_normal({t_len, 3}, rng), f = random_normal({2, 3}, rng);
    const Tensor out = hierarchical_pool(constant(traj), constant(f), 2).value();
    ASSERT_EQ(out.shape(), (Shape{t_len, 3}));
    Tensor padded({8, 3});
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t c = 0; c < 3; ++c) padded.at(t, c) = traj.at(std::min(t, t_len - 1), c);
    const Tensor full = hierarchical_pool(constant(padded), constant(f), 2).value();
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(t, c), full.at(t, c));
  }
}

TEST(HierarchyTest, EachStageHalvesLength) {
  Rng rng(63);
  Var x = constant(random_normal({16, 4}, rng));
  const Var f = constant(random_normal({3, 4}, rng));
  for (std::size_t expect : {8u, 4u, 2u, 1u}) {
    const Highlight h = highlight(x, f);
    x = merge(enrich(x, h.attn, h.frame_weight, f), h.frame_weight);
    EXPECT_EQ(x.dim(0), expect);
  }
}

struct HmpFixture : ::testing::Test {
  Rng rng{64};
  ParameterSet ps;
};

TEST_F(HmpFixture, ZeroOutputProjectionsGiveIdentity) {
  HmpStack stack(ps, "hmp", {.blocks = 3, .stages = 3, .channels = 8}, rng);
  stack.zero_output_projections();
  const Tensor x = random_normal({3, 8, 8}, rng);
  EXPECT_EQ(stack(constant(x), constant(random_normal({2, 8}, rng))).value(), x);
}

TEST_F(HmpFixture, SingleFrameReducesToFeedForwardResidual) {
  HmpBlock block(ps, "b", 6, rng);
  block.zero_output_projections();
  Linear& down = block.ffn().down;
  down.weight.mutable_value() = random_normal(down.weight.shape(), rng);
  const Tensor x = random_normal({2, 1, 6}, rng);
  const Tensor out = block(constant(x), constant(random_normal({2, 6}, rng)), 0).value();
  const Tensor expect = add(constant(x), block.ffn()(constant(x))).value();
  EXPECT_LT(max_abs_diff(out, expect), 1e-15);
}

TEST_F(HmpFixture, RejectsZeroBlocks) {
  EXPECT_THROW(HmpStack(ps, "hmp", {.blocks = 0, .stages = 3, .channels = 8}, rng), InputError);
}

TEST_F(HmpFixture, IdenticalTrajectoriesGiveIdenticalOutputs) {
  HmpStack stack(ps, "hmp", {.blocks = 2, .stages = 2, .channels = 8}, rng);
  const Tensor one = random_normal({1, 8, 8}, rng);
  std::vector<double> d = one.vec();
  d.insert(d.end(), one.vec().begin(), one.vec().end());
  const Tensor out = stack(constant(Tensor({2, 8, 8}, d)), constant(random_normal({3, 8}, rng))).value();
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(out[i], out[64 + i]);
}

TEST_F(HmpFixture, PermutationEquivariantOverTrajectories) {
  HmpStack stack(ps, "hmp", {.blocks = 2, .stages = 3, .channels = 8}, rng);
  const Tensor x = random_normal({4, 8, 8}, rng);
  const Tensor f = random_normal({2, 8}, rng);
  const std::vector<std::size_t> pi{3, 1, 0, 2};
  Tensor xp({4, 8, 8});
  for (std::size_t i = 0; i < 4; ++i)
    std::copy_n(x.data().data() + pi[i] * 64, 64, xp.mutable_data().data() + i * 64);
  const Tensor a = stack(constant(x), constant(f)).value(), b = stack(constant(xp), constant(f)).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 64; ++k) EXPECT_NEAR(b[i * 64 + k], a[pi[i] * 64 + k], 1e-12);
}

TEST_F(HmpFixture, BlockGradientCheck) {
  HmpBlock block(ps, "b", 16, rng);
  Var traj = ps.add("traj", random_normal({2, 8, 16}, rng));
  Var f = ps.add("f", random_normal({3, 16}, rng));
  const Tensor w = random_normal({2, 8, 16}, rng);
  auto loss = [&] { return sum(mul(block(traj, f, 3), constant(w))); };
  const auto r = grad_check(ps.items(), loss);
  EXPECT_LT(r.max_error, 1e-4) << r.worst_parameter << "[" << r.worst_index << "]";
}

TEST_F(HmpFixture, PaddedHierarchyGradientCheck) {
  Var traj = ps.add("traj", random_normal({2, 6, 4}, rng));
  Var f = ps.add("f", random_normal({2, 4}, rng));
  const Tensor w = random_normal({2, 6, 4}, rng);
  auto loss = [&] { return sum(mul(hierarchical_cross_attention(traj, f, 2), constant(w))); };
  EXPECT_LT(grad_check(ps.items(), loss).max_error, 1e-7);
}

}  // namespace
}  // namespace mscope
