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
#include <numeric>

#include "mscope/losses.hpp"
#include "test_util.hpp"

namespace mscope {
namespace {

double softplus(double z) { return std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0); }

// Direct dice + mean BCE between one logit row and one target row.
double direct_pair_cost(std::span<const double> z, std::span<const double> t, const LossWeights& w) {
  double inter = 0, sp = 0, st = 0, bce = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z[i]));
    inter += p * t[i];
    sp += p;
    st += t[i];
    bce += -(t[i] * std::log(p) + (1 - t[i]) * std::log(1 - p));
  }
  return w.dice * (1 - (2 * inter + 1) / (sp + st + 1)) + w.mask * bce / double(z.size());
}

Tensor binary(Shape shape, Rng& rng, double rate = 0.4) {
  Tensor t(std::move(shape));
  std::bernoulli_distribution b(rate);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = b(rng);
  return t;
}

TEST(RowMaskLossTest, MatchesComposedOps) {
  Rng rng(101);
  const Tensor z = random_normal({1, 9}, rng, 2.0), t = binary({1, 9}, rng);
  const double fused = row_mask_loss(constant(z), t, 5.0, 5.0).item();
  const double composed = 5.0 * dice_loss(constant(z), t).item() + 5.0 * bce_with_logits(constant(z), t).item();
  EXPECT_NEAR(fused, composed, 1e-13);
  const Tensor zz = random_normal({3, 7}, rng), tt = binary({3, 7}, rng);
  double mean = 0.0;
  for (std::size_t r = 0; r < 3; ++r) mean += direct_pair_cost(zz.row(r), tt.row(r), {}) / 3.0;
  EXPECT_NEAR(row_mask_loss(constant(zz), tt, 5.0, 5.0).item(), mean, 1e-12);
  EXPECT_THROW(row_mask_loss(constant(zz), Tensor({3, 6}), 1, 1), DimensionError);
}

TEST(RowMaskLossTest, GradientCheck) {
  Rng rng(102);
  ParameterSet ps;
  Var z = ps.add("z", random_normal({3, 6}, rng, 1.5));
  const Tensor t = binary({3, 6}, rng);
  const auto r = grad_check(ps.items(), [&] { return row_mask_loss(z, t, 5.0, 2.0); });
  EXPECT_LT(r.max_error, 1e-7);
}

TEST(SetLossTest, SaturatedPerfectPredictionIsNearZero) {
  Rng rng(103);
  const Tensor objects = binary({2, 12}, rng, 0.5);
  Tensor logits({4, 12}, -10.0);
  Tensor cls({4}, -10.0);
  for (std::size_t q : {1u, 3u}) {
    const std::size_t o = q == 1 ? 0 : 1;
    cls[q] = 10.0;
    for (std::size_t p = 0; p < 12; ++p) logits.at(q, p) = objects.at(o, p) > 0.5 ? 10.0 : -10.0;
  }
  const SetLoss l = set_loss(constant(cls), constant(logits), objects);
  EXPECT_LT(l.loss.item(), 0.01);
  EXPECT_EQ(l.match, (std::vector<std::size_t>{kUnmatched, 0, kUnmatched, 1}));
}

TEST(SetLossTest, NoObjectsLeavesClassNegativeTerm) {
  Rng rng(104);
  const Tensor cls = random_normal({5}, rng), logits = random_normal({5, 8}, rng);
  const SetLoss l = set_loss(constant(cls), constant(logits), Tensor());
  double expect = 0.0;
  for (std::size_t q = 0; q < 5; ++q) expect += softplus(cls[q]) / 5.0;
  EXPECT_NEAR(l.loss.item(), 2.0 * expect, 1e-14);
  for (std::size_t m : l.match) EXPECT_EQ(m, kUnmatched);
}

TEST(SetLossTest, MatchingEqualsBruteForceMinimum) {
  Rng rng(105);
  const LossWeights w;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 3;  // 2..4 queries
    const Tensor cls = random_normal({n}, rng, 2.0), logits = random_normal({n, 10}, rng, 2.0);
    const Tensor objects = binary({2, 10}, rng);
    const SetLoss l = set_loss(constant(cls), constant(logits), objects);
    // Enumerate every injective object -> query map.
    double best = 1e300;
    for (std::size_t q0 = 0; q0 < n; ++q0)
      for (std::size_t q1 = 0; q1 < n; ++q1) {
        if (q0 == q1) continue;
        const double c = 2.0 * softplus(-cls[q0]) + direct_pair_cost(logits.row(q0), objects.row(0), w) +
                         2.0 * softplus(-cls[q1]) + direct_pair_cost(logits.row(q1), objects.row(1), w);
        best = std::min(best, c);
      }
    double chosen = 0.0;
    std::size_t matched = 0;
    for (std::size_t q = 0; q < n; ++q) {
      if (l.match[q] == kUnmatched) continue;
      ++matched;
      chosen += 2.0 * softplus(-cls[q]) + direct_pair_cost(logits.row(q), objects.row(l.match[q]), w);
      EXPECT_NEAR(l.cost[q], 2.0 * softplus(-cls[q]) + direct_pair_cost(logits.row(q), objects.row(l.match[q]), w),
                  1e-12);
    }
    EXPECT_EQ(matched, 2u);
    EXPECT_NEAR(chosen, best, 1e-9);
  }
}

TEST(SetLossTest, LossCompositionAndErrors) {
  Rng rng(106);
  const Tensor cls = random_normal({3}, rng), logits = random_normal({3, 5}, rng);
  const Tensor objects = binary({1, 5}, rng);
  const SetLoss l = set_loss(constant(cls), constant(logits), objects);
  std::size_t q = 0;
  while (l.match[q] == kUnmatched) ++q;
  double cls_term = 0.0;
  for (std::size_t i = 0; i < 3; ++i) cls_term += (i == q ? softplus(-cls[i]) : softplus(cls[i])) / 3.0;
  EXPECT_NEAR(l.loss.item(), 2.0 * cls_term + direct_pair_cost(logits.row(q), objects.row(0), {}), 1e-12);
  EXPECT_THROW(set_loss(constant(cls), constant(logits), binary({4, 5}, rng)), InputError);
  EXPECT_THROW(set_loss(constant(cls), constant(logits), binary({1, 6}, rng)), DimensionError);
}

TEST(FrameLossTest, MeanOfPerFrameSetLosses) {
  Rng rng(107);
  const std::size_t t_len = 3, n = 3, hw = 6;
  const Tensor cls = random_normal({t_len, n}, rng), logits = random_normal({t_len, n, hw}, rng);
  const Tensor objects = binary({2, t_len, hw}, rng);
  double expect = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    Tensor c({n}), z({n, hw}), o({2, hw});
    for (std::size_t q = 0; q < n; ++q) {
      c[q] = cls.at(t, q);
      for (std::size_t p = 0; p < hw; ++p) z.at(q, p) = logits.at(t, q, p);
    }
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t p = 0; p < hw; ++p) o.at(k, p) = objects.at(k, t, p);
    expect += set_loss(constant(c), constant(z), o).loss.item() / double(t_len);
  }
  EXPECT_NEAR(frame_loss(constant(cls), constant(logits), objects).item(), expect, 1e-13);
}

TEST(FrameLossTest, SaturatedPerfectAndEmpty) {
  const std::size_t t_len = 2, n = 3, hw = 4;
  Tensor objects({1, t_len, hw});
  objects.at(0, 0, 1) = objects.at(0, 1, 2) = 1.0;
  Tensor cls({t_len, n}, -10.0), logits({t_len, n, hw}, -10.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    cls.at(t, 2) = 10.0;
    for (std::size_t p = 0; p < hw; ++p) logits.at(t, 2, p) = objects.at(0, t, p) > 0.5 ? 10.0 : -10.0;
  }
  EXPECT_LT(frame_loss(constant(cls), constant(logits), objects).item(), 0.01);
  const double empty = frame_loss(constant(cls), constant(logits), Tensor()).item();
  double expect = 0.0;
  for (std::size_t i = 0; i < cls.size(); ++i) expect += 2.0 * softplus(cls[i]) / double(cls.size());
  EXPECT_NEAR(empty, expect, 1e-13);
}

TEST(VideoLossTest, GathersEveryFrameOfAQuery) {
  Rng rng(108);
  const std::size_t t_len = 3, n = 2, hw = 4;
  const Tensor score = random_normal({n}, rng), logits = random_normal({t_len, n, hw}, rng);
  const Tensor objects = binary({2, t_len, hw}, rng);
  Tensor per_query({n, t_len * hw});
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t p = 0; p < hw; ++p) per_query.at(q, t * hw + p) = logits.at(t, q, p);
  const SetLoss a = video_loss(constant(score), constant(logits), objects);
  const SetLoss b = set_loss(constant(score), constant(per_query), objects.reshaped({2, t_len * hw}));
  EXPECT_NEAR(a.loss.item(), b.loss.item(), 1e-14);
  EXPECT_EQ(a.match, b.match);
}

TEST(VideoLossTest, SaturatedNoTargetAndGradient) {
  Rng rng(109);
  const std::size_t t_len = 2, n = 3, hw = 5;
  const Tensor objects = binary({2, t_len, hw}, rng, 0.5);
  Tensor score({n}, -10.0), logits({t_len, n, hw}, -10.0);
  for (std::size_t q : {0u, 2u}) {
    score[q] = 10.0;
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t p = 0; p < hw; ++p) logits.at(t, q, p) = objects.at(q / 2, t, p) > 0.5 ? 10.0 : -10.0;
  }
  EXPECT_LT(video_loss(constant(score), constant(logits), objects).loss.item(), 0.01);
  double expect = 0.0;
  for (std::size_t q = 0; q < n; ++q) expect += 2.0 * softplus(score[q]) / double(n);
  EXPECT_NEAR(video_loss(constant(score), constant(logits), Tensor()).loss.item(), expect, 1e-13);

  ParameterSet ps;
  Var s = ps.add("s", random_normal({n}, rng)), z = ps.add("z", random_normal({t_len, n, hw}, rng));
  const auto r = grad_check(ps.items(), [&] { return video_loss(s, z, objects).loss; });
  EXPECT_LT(r.max_error, 1e-6);
}

}  // namespace
}  // namespace mscope
