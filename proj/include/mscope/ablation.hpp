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

// Ablation grids over the training switches, run over several seeds and
// summarised as mean and standard deviation.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mscope/trainer.hpp"

namespace mscope {

struct AblationVariant {
  std::string label;
  TrainConfig config;
};

inline const std::vector<std::string>& ablation_axes() {
  static const std::vector<std::string> axes{"components", "input-query", "nh", "nn", "hungarian"};
  return axes;
}

/// Variants of `base` along `axis`. The components axis follows the
/// index 0-7 switch pattern (DS, HMP, CL): none, DS, HMP, CL, DS+HMP, DS+CL,
/// HMP+CL, all.
inline std::vector<AblationVariant> ablation_variants(const TrainConfig& base, const std::string& axis) {
  std::vector<AblationVariant> out;
  auto with = [&](std::string label, auto edit) {
    TrainConfig c = base;
    edit(c);
    out.push_back({std::move(label), c});
  };
  if (axis == "components") {
    const bool pattern[8][3] = {{false, false, false}, {true, false, false}, {false, true, false},
                                {false, false, true},  {true, true, false},  {true, false, true},
                                {false, true, true},   {true, true, true}};
    for (int i = 0; i < 8; ++i) {
      std::string label = std::to_string(i) + ":";
      const char* names[3] = {"DS", "HMP", "CL"};
      bool any = false;
      for (int k = 0; k < 3; ++k)
        if (pattern[i][k]) {
          label += (any ? "+" : "") + std::string(names[k]);
          any = true;
        }
      if (!any) label += "none";
      with(label, [&](TrainConfig& c) {
        c.DS = pattern[i][0];
        c.HMP = pattern[i][1];
        c.CL = pattern[i][2];
      });
    }
  } else if (axis == "input-query") {
    for (QueryVariant v : {QueryVariant::kSentenceOnly, QueryVariant::kNoSentence,
                           QueryVariant::kNoQuery, QueryVariant::kDecoupled})
      with(std::string(query_variant_name(v)), [&](TrainConfig& c) {
        c.DS = true;
        c.query = v;
      });
  } else if (axis == "nh") {
    for (std::size_t n : {0u, 1u, 2u, 3u})
      with("N_h=" + std::to_string(n), [&](TrainConfig& c) {
        c.HMP = true;
        c.N_h = n;
      });
  } else if (axis == "nn") {
    for (std::size_t n : {0u, 10u, 100u, 200u})
      with("N_n=" + std::to_string(n), [&](TrainConfig& c) {
        c.CL = true;
        c.N_n = n;
      });
  } else if (axis == "hungarian") {
    with("hungarian=off", [](TrainConfig& c) { c.hungarian = false; });
    with("hungarian=on", [](TrainConfig& c) { c.hungarian = true; });
  } else {
    std::string known;
    for (const auto& a : ablation_axes()) known += (known.empty() ? "" : ", ") + a;
    throw InputError("unknown ablation axis '" + axis + "' (expected one of " + known + ")");
  }
  return out;
}

/// Key under which two configs train identically: switches that are off make
/// the settings they gate irrelevant.
inline std::string run_key(TrainConfig c) {
  if (!c.HMP) c.N_h = 0;
  c.HMP = c.N_h > 0;
  if (!c.DS) c.query = QueryVariant::kSentenceOnly;
  c.DS = true;
  if (!c.CL || c.N_n == 0 || c.lambda_con == 0.0) {
    c.CL = false;
    c.N_n = 0;
    c.lambda_con = 0.0;
  }
  return to_json(c).dump();
}

struct Summary {
  double mean = 0.0, std = 0.0;
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) s.std += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(s.std / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct VariantResult {
  std::string label;
  std::vector<RunReport> runs;

  std::vector<double> metric(const std::function<double(const EvalMetrics&)>& f) const {
    std::vector<double> out;
    for (const auto& r : runs) out.push_back(f(r.final_row().eval));
    return out;
  }
  Summary jf() const { return summarize(metric([](const EvalMetrics& e) { return e.JF; })); }
  Summary long_accuracy() const {
    return summarize(metric([](const EvalMetrics& e) { return e.long_accuracy; }));
  }
  Summary separation() const {
    return summarize(metric([](const EvalMetrics& e) { return e.separation; }));
  }
};

/// Trains every variant of an axis over seeds base.seed .. base.seed+K-1.
/// Runs with equal run_key share one result. `train_fn` defaults to the
/// in-process trainer.
class AblationRunner {
 public:
  using TrainFn = std::function<RunReport(const TrainConfig&)>;

  explicit AblationRunner(TrainFn fn = {})
      : train_(fn ? std::move(fn) : TrainFn([](const TrainConfig& c) { return train(c); })) {}

  const RunReport& run(const TrainConfig& cfg) {
    const std::string key = run_key(cfg);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(key, train_(cfg)).first->second;
  }

  std::vector<VariantResult> run_axis(const TrainConfig& base, const std::string& axis, std::size_t seeds,
                                      const std::function<void(const std::string&)>& log = {}) {
    if (seeds == 0) throw InputError("ablate: at least one seed required");
    std::vector<VariantResult> out;
    for (const auto& v : ablation_variants(base, axis)) {
      VariantResult vr{v.label, {}};
      for (std::size_t k = 0; k < seeds; ++k) {
        TrainConfig c = v.config;
        c.seed = base.seed + k;
        try {
          vr.runs.push_back(run(c));
        } catch (const std::exception& e) {
          throw std::runtime_error("variant " + v.label + " seed " + std::to_string(c.seed) + ": " + e.what());
        }
        if (log) {
          log(v.label + " seed " + std::to_string(c.seed) + " JF=" +
              format_real(vr.runs.back().final_row().eval.JF));
        }
      }
      out.push_back(std::move(vr));
    }
    return out;
  }

  std::size_t cached_runs() const { return cache_.size(); }

 private:
  TrainFn train_;
  std::map<std::string, RunReport> cache_;
};

inline std::string ablation_csv(const std::vector<VariantResult>& results) {
  std::string out =
      "variant,seeds,JF_mean,JF_std,J_mean,J_std,F_mean,F_std,accuracy_mean,accuracy_std,"
      "long_accuracy_mean,long_accuracy_std,separation_mean,separation_std\n";
  for (const auto& r : results) {
    out += r.label + "," + std::to_string(r.runs.size());
    for (auto f : {+[](const EvalMetrics& e) { return e.JF; }, +[](const EvalMetrics& e) { return e.J; },
                   +[](const EvalMetrics& e) { return e.F; }, +[](const EvalMetrics& e) { return e.accuracy; },
                   +[](const EvalMetrics& e) { return e.long_accuracy; },
                   +[](const EvalMetrics& e) { return e.separation; }}) {
      const Summary s = summarize(r.metric(f));
      out += "," + format_real(s.mean) + "," + format_real(s.std);
    }
    out += "\n";
  }
  return out;
}

}  // namespace mscope
