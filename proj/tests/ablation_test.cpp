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

#include <cmath>
#include <sstream>

#include "mscope/ablation.hpp"

namespace mscope {
namespace {

// Deterministic fake: JF encodes the switches and the seed.
RunReport stub(const TrainConfig& c) {
  RunReport r;
  r.config = c;
  ReportRow row;
  row.step = c.steps;
  row.eval.JF = 0.1 * c.DS + 0.2 * c.HMP * double(c.N_h) / 3.0 + 0.4 * c.CL + 0.01 * double(c.seed);
  row.eval.J = row.eval.F = row.eval.JF;
  row.eval.accuracy = c.hungarian ? 0.5 : 0.25;
  row.eval.long_accuracy = double(c.N_n) / 1000.0;
  row.eval.separation = c.CL ? 0.6 : 0.1;
  r.rows.push_back(row);
  return r;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& s) {
  std::vector<std::vector<std::string>> out;
  std::stringstream ss(s);
  for (std::string line; std::getline(ss, line);) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    out.push_back(cells);
  }
  return out;
}

TEST(AblationVariantsTest, ComponentsFollowIndexPattern) {
  const auto v = ablation_variants(TrainConfig{}, "components");
  ASSERT_EQ(v.size(), 8u);
  const char* labels[] = {"0:none", "1:DS", "2:HMP", "3:CL", "4:DS+HMP", "5:DS+CL", "6:HMP+CL", "7:DS+HMP+CL"};
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(v[i].label, labels[i]);
    const std::string& l = v[i].label;
    EXPECT_EQ(v[i].config.DS, l.find("DS") != std::string::npos);
    EXPECT_EQ(v[i].config.HMP, l.find("HMP") != std::string::npos);
    EXPECT_EQ(v[i].config.CL, l.find("CL") != std::string::npos);
  }
}

TEST(AblationVariantsTest, OtherAxes) {
  TrainConfig base;
  base.HMP = false;
  base.CL = false;
  const auto nh = ablation_variants(base, "nh");
  ASSERT_EQ(nh.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(nh[i].config.N_h, i);
    EXPECT_TRUE(nh[i].config.HMP);
  }
  EXPECT_EQ(nh[0].config.model_config().hmp_stages, 0u);
  const auto nn = ablation_variants(base, "nn");
  ASSERT_EQ(nn.size(), 4u);
  EXPECT_EQ(nn[0].config.N_n, 0u);
  EXPECT_EQ(nn[2].config.N_n, 100u);
  EXPECT_TRUE(nn[1].config.CL);
  const auto h = ablation_variants(base, "hungarian");
  ASSERT_EQ(h.size(), 2u);
  EXPECT_EQ(h[0].config.model_config().link_mode, LinkMode::kIdentity);
  EXPECT_EQ(h[1].config.model_config().link_mode, LinkMode::kHungarian);
  const auto q = ablation_variants(base, "input-query");
  ASSERT_EQ(q.size(), 4u);
  EXPECT_EQ(q[3].config.query, QueryVariant::kDecoupled);
  EXPECT_EQ(q[0].label, "sentence");
  EXPECT_THROW(ablation_variants(base, "depth"), InputError);
  for (const auto& a : ablation_axes()) EXPECT_NO_THROW(ablation_variants(base, a));
}

TEST(RunKeyTest, EquivalentConfigsShareAKey) {
  TrainConfig a, b;
  a.HMP = false;
  b.N_h = 0;
  EXPECT_EQ(run_key(a), run_key(b));
  TrainConfig c, d;
  c.CL = false;
  d.N_n = 0;
  EXPECT_EQ(run_key(c), run_key(d));
  TrainConfig e, f;
  e.DS = false;
  f.query = QueryVariant::kSentenceOnly;
  EXPECT_EQ(run_key(e), run_key(f));
  TrainConfig g, h;
  h.seed = 1;
  EXPECT_NE(run_key(g), run_key(h));
  TrainConfig i, j;
  j.N_h = 2;
  EXPECT_NE(run_key(i), run_key(j));
}

TEST(SummaryTest, MeanAndSampleStd) {
  const Summary s = summarize({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(summarize({7.0}).std, 0.0);
  EXPECT_EQ(summarize({}).mean, 0.0);
}

TEST(AblationRunnerTest, SeedsAndCaching) {
  std::size_t calls = 0;
  AblationRunner runner([&](const TrainConfig& c) {
    ++calls;
    return stub(c);
  });
  TrainConfig base;
  base.seed = 10;
  const auto comps = runner.run_axis(base, "components", 3);
  ASSERT_EQ(comps.size(), 8u);
  EXPECT_EQ(calls, 24u);
  for (const auto& v : comps) {
    ASSERT_EQ(v.runs.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(v.runs[k].config.seed, 10 + k);
  }
  // N_h=3 duplicates the full model already trained; N_h=0 duplicates HMP off.
  runner.run_axis(base, "nh", 3);
  EXPECT_EQ(calls, 30u);
  runner.run_axis(base, "nn", 3);  // N_n=0 and N_n=100 are cached
  EXPECT_EQ(calls, 36u);
  EXPECT_EQ(runner.cached_runs(), calls);
}

TEST(AblationRunnerTest, CsvSummaries) {
  AblationRunner runner(stub);
  TrainConfig base;
  const auto res = runner.run_axis(base, "components", 5);
  const auto rows = parse_csv(ablation_csv(res));
  ASSERT_EQ(rows.size(), 9u);
  EXPECT_EQ(rows[0][0], "variant");
  EXPECT_EQ(rows[0].size(), 14u);
  // Row 8 is the full model: JF = 0.1 + 0.2 + 0.4 + 0.01 * seed, seeds 0..4.
  EXPECT_EQ(rows[8][0], "7:DS+HMP+CL");
  EXPECT_EQ(rows[8][1], "5");
  EXPECT_NEAR(std::stod(rows[8][2]), 0.72, 1e-12);
  EXPECT_NEAR(std::stod(rows[8][3]), 0.01 * std::sqrt(2.5), 1e-12);
  EXPECT_NEAR(std::stod(rows[8][12]), 0.6, 1e-12);
  EXPECT_NEAR(std::stod(rows[1][2]), 0.02, 1e-12);
}

TEST(AblationRunnerTest, ErrorsNameVariantAndSeed) {
  AblationRunner runner([](const TrainConfig& c) -> RunReport {
    if (c.hungarian) throw NumericalError("boom");
    return stub(c);
  });
  try {
    runner.run_axis(TrainConfig{}, "hungarian", 2);
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("hungarian=on seed 0"), std::string::npos) << e.what();
  }
  EXPECT_THROW(runner.run_axis(TrainConfig{}, "hungarian", 0), InputError);
}

}  // namespace
}  // namespace mscope
