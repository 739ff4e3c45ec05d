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

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mscope/autograd.hpp"

namespace mscope {

using Rng = std::mt19937_64;

inline Tensor random_normal(Shape shape, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data));
}

inline Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data));
}

struct Parameter {
  std::string name;
  Var var;
};

/// Ordered, name-unique collection of trainable leaves.
class ParameterSet {
 public:
  Var add(std::string name, Tensor init) {
    if (!names_.insert(name).second) throw InputError("duplicate parameter name: " + name);
    Var v = variable(std::move(init));
    params_.push_back({std::move(name), v});
    return v;
  }

  std::span<const Parameter> items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  const Parameter* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.size();
    return n;
  }

 private:
  std::vector<Parameter> params_;
  std::unordered_set<std::string> names_;
};

struct GradCheckOptions {
  double h = 1e-5;
  /// 0 checks every entry; otherwise a seeded subset of each parameter.
  std::size_t max_entries_per_parameter = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares the reverse-mode gradient of `loss` against central differences.
/// The error per entry is |analytic - numeric| / max(1, |numeric|).
inline GradCheckResult grad_check(std::span<const Parameter> params,
                                  const std::function<Var()>& loss,
                                  const GradCheckOptions& opts = {}) {
  if (!(opts.h > 0.0)) throw InputError("grad_check: step must be positive");
  for (const auto& p : params) Var(p.var).zero_grad();
  {
    Var l = loss();
    if (!std::isfinite(l.item())) throw NumericalError("grad_check: non-finite loss");
    backward(l);
  }
  Rng rng(opts.seed);
  GradCheckResult result;
  for (const auto& p : params) {
    Var v = p.var;
    const Tensor analytic = v.grad();
    std::vector<std::size_t> entries(v.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opts.max_entries_per_parameter && entries.size() > opts.max_entries_per_parameter) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opts.max_entries_per_parameter);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t i : entries) {
      double& x = v.mutable_value()[i];
      const double saved = x;
      double lp, lm;
      {
        NoGradGuard ng;
        x = saved + opts.h;
        lp = loss().item();
        x = saved - opts.h;
        lm = loss().item();
      }
      x = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm)) {
        throw NumericalError("grad_check: non-finite loss while perturbing " + p.name);
      }
      const double numeric = (lp - lm) / (2.0 * opts.h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      ++result.checked;
      if (result.checked == 1 || err > result.max_error) {
        result.max_error = err;
        result.worst_parameter = p.name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

/// Plain gradient descent with heavy-ball momentum and optional global-norm
/// clipping.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, double clip_norm = 0.0)
      : lr_(lr), momentum_(momentum), clip_norm_(clip_norm) {}

  /// Returns the pre-clipping gradient norm.
  double step(ParameterSet& params) {
    auto items = params.items();
    if (velocity_.size() != items.size()) {
      velocity_.clear();
      for (const auto& p : items) velocity_.emplace_back(p.var.size(), 0.0);
    }
    double sq = 0.0;
    for (const auto& p : items)
      if (p.var.has_grad())
        for (double g : p.var.grad().data()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
    const double factor = (clip_norm_ > 0.0 && norm > clip_norm_) ? clip_norm_ / norm : 1.0;
    for (std::size_t k = 0; k < items.size(); ++k) {
      Var v = items[k].var;
      const bool has = v.has_grad();
      auto w = v.mutable_value().mutable_data();
      auto& vel = velocity_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = has ? v.grad()[i] : 0.0;
        vel[i] = momentum_ * vel[i] + factor * g;
        w[i] -= lr_ * vel[i];
      }
    }
    return norm;
  }

 private:
  double lr_, momentum_, clip_norm_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace mscope
