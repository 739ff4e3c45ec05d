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

// Set-prediction losses: every query is matched to at most one ground-truth
// object by minimum total cost, then scored with a class term and a
// dice + binary cross-entropy mask term.

#pragma once

#include <cmath>
#include <vector>

#include "mscope/autograd.hpp"
#include "mscope/hungarian.hpp"

namespace mscope {

struct LossWeights {
  double cls = 2.0;
  double dice = 5.0;
  double mask = 5.0;
};

inline constexpr std::size_t kUnmatched = static_cast<std::size_t>(-1);

/// Per row r of logits [M x P]: w_dice * dice_r + w_bce * mean_bce_r,
/// averaged over rows. Targets are constants in [0, 1].
inline Var row_mask_loss(const Var& logits, const Tensor& targets, double w_dice, double w_bce) {
  if (logits.rank() != 2 || logits.shape() != targets.shape()) {
    throw DimensionError("row_mask_loss: logits " + shape_string(logits.shape()) +
                         " vs targets " + shape_string(targets.shape()));
  }
  const std::size_t m = logits.dim(0), p = logits.dim(1);
  std::vector<double> prob(m * p), num(m), den(m);
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    double inter = 0.0, sp = 0.0, st = 0.0, bce = 0.0;
    for (std::size_t i = r * p; i < (r + 1) * p; ++i) {
      const double z = logits.value()[i];
      prob[i] = detail::sigmoid_scalar(z);
      inter += prob[i] * targets[i];
      sp += prob[i];
      st += targets[i];
      bce += detail::softplus_scalar(z) - z * targets[i];
    }
    num[r] = 2.0 * inter + 1.0;
    den[r] = sp + st + 1.0;
    total += w_dice * (1.0 - num[r] / den[r]) + w_bce * bce / static_cast<double>(p);
  }
  auto zn = logits.node();
  return detail::make_result(
      Tensor::adopt({1}, {total / static_cast<double>(m)}), "row_mask_loss", {zn},
      [zn, targets, prob = std::move(prob), num = std::move(num), den = std::move(den), m, p,
       w_dice, w_bce](detail::Node& self) {
        double* d = zn->grad_buffer();
        if (!d) return;
        const double g = self.grad[0] / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r) {
          const double dd = den[r] * den[r];
          for (std::size_t i = r * p; i < (r + 1) * p; ++i) {
            const double ddice = -(2.0 * targets[i] * den[r] - num[r]) / dd * prob[i] * (1.0 - prob[i]);
            const double dbce = (prob[i] - targets[i]) / static_cast<double>(p);
            d[i] += g * (w_dice * ddice + w_bce * dbce);
          }
        }
      });
}

/// Matching cost of one query against one object: class term on the query's
/// logit plus dice and mean BCE between its mask logits and the object mask.
inline double match_cost(double class_logit, std::span<const double> mask_logits,
                         std::span<const double> target, const LossWeights& w) {
  double inter = 0.0, sp = 0.0, st = 0.0, bce = 0.0;
  for (std::size_t i = 0; i < mask_logits.size(); ++i) {
    const double z = mask_logits[i];
    const double p = detail::sigmoid_scalar(z);
    inter += p * target[i];
    sp += p;
    st += target[i];
    bce += detail::softplus_scalar(z) - z * target[i];
  }
  const double dice = 1.0 - (2.0 * inter + 1.0) / (sp + st + 1.0);
  return w.cls * detail::softplus_scalar(-class_logit) + w.dice * dice +
         w.mask * bce / static_cast<double>(mask_logits.size());
}

struct SetLoss {
  Var loss;
  /// match[q] is the object assigned to query q, or kUnmatched.
  std::vector<std::size_t> match;
  /// Matching cost of each matched query; 0 for unmatched ones.
  std::vector<double> cost;
};

/// Set loss for one group of queries. class_logits [N], mask_logits [N x P],
/// objects [K x P] with K <= N.
inline SetLoss set_loss(const Var& class_logits, const Var& mask_logits, const Tensor& objects,
                        const LossWeights& w = {}) {
  const std::size_t n = class_logits.size();
  if (mask_logits.rank() != 2 || mask_logits.dim(0) != n) {
    throw DimensionError("set_loss: mask logits " + shape_string(mask_logits.shape()) + " for " +
                         std::to_string(n) + " queries");
  }
  const std::size_t p = mask_logits.dim(1);
  const std::size_t k = objects.empty() ? 0 : objects.dim(0);
  if (k > 0 && (objects.rank() != 2 || objects.dim(1) != p)) {
    throw DimensionError("set_loss: objects " + shape_string(objects.shape()) +
                         " vs mask logits " + shape_string(mask_logits.shape()));
  }
  if (k > n) {
    throw InputError("set_loss: " + std::to_string(k) + " objects exceed " + std::to_string(n) +
                     " queries");
  }
  SetLoss out;
  out.match.assign(n, kUnmatched);
  out.cost.assign(n, 0.0);
  const auto logits = mask_logits.value().data();
  if (k > 0) {
    Tensor costs({n, k});
    for (std::size_t q = 0; q < n; ++q)
      for (std::size_t o = 0; o < k; ++o)
        costs.at(q, o) = match_cost(class_logits.value()[q], logits.subspan(q * p, p),
                                    objects.row(o), w);
    out.match = hungarian_rectangular(costs);
    for (std::size_t q = 0; q < n; ++q)
      if (out.match[q] != kUnmatched) out.cost[q] = costs.at(q, out.match[q]);
  }
  Tensor labels(class_logits.shape());
  std::vector<std::size_t> rows;
  std::vector<double> tgt;
  for (std::size_t q = 0; q < n; ++q) {
    if (out.match[q] == kUnmatched) continue;
    labels[q] = 1.0;
    rows.push_back(q);
    const auto r = objects.row(out.match[q]);
    tgt.insert(tgt.end(), r.begin(), r.end());
  }
  out.loss = scale(bce_with_logits(class_logits, labels), w.cls);
  if (!rows.empty()) {
    const std::size_t m = rows.size();
    out.loss = add(out.loss, row_mask_loss(select_rows(mask_logits, std::move(rows)),
                                           Tensor::adopt({m, p}, std::move(tgt)), w.dice, w.mask));
  }
  return out;
}

/// Per-frame loss: each frame matches its N_s queries to the objects
/// independently. class_logits [T x N], mask_logits [T x N x HW],
/// objects [K x T x HW]. Returns the mean over frames.
inline Var frame_loss(const Var& class_logits, const Var& mask_logits, const Tensor& objects,
                      const LossWeights& w = {}) {
  const std::size_t t_len = mask_logits.dim(0), n = mask_logits.dim(1), hw = mask_logits.dim(2);
  const std::size_t k = objects.empty() ? 0 : objects.dim(0);
  if (k > 0 && (objects.rank() != 3 || objects.dim(1) != t_len || objects.dim(2) != hw)) {
    throw DimensionError("frame_loss: objects " + shape_string(objects.shape()) +
                         " vs mask logits " + shape_string(mask_logits.shape()));
  }
  Var cls2 = reshape(class_logits, {t_len * n});
  Var masks2 = reshape(mask_logits, {t_len * n, hw});
  Var total;
  for (std::size_t t = 0; t < t_len; ++t) {
    std::vector<std::size_t> rows(n);
    for (std::size_t q = 0; q < n; ++q) rows[q] = t * n + q;
    Tensor frame_objects;
    if (k > 0) {
      std::vector<double> data(k * hw);
      for (std::size_t o = 0; o < k; ++o)
        std::copy_n(objects.data().data() + (o * t_len + t) * hw, hw, data.data() + o * hw);
      frame_objects = Tensor::adopt({k, hw}, std::move(data));
    }
    Var l = set_loss(select_rows(cls2, rows), select_rows(masks2, rows), frame_objects, w).loss;
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, 1.0 / static_cast<double>(t_len));
}

/// Video-level set loss. score_logits [N_m], mask_logits [T x N_m x HW] as
/// produced per frame, objects [K x T x HW].
inline SetLoss video_loss(const Var& score_logits, const Var& mask_logits, const Tensor& objects,
                          const LossWeights& w = {}) {
  const std::size_t t_len = mask_logits.dim(0), n = mask_logits.dim(1), hw = mask_logits.dim(2);
  std::vector<std::size_t> order(n * t_len);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t t = 0; t < t_len; ++t) order[q * t_len + t] = t * n + q;
  Var per_query =
      reshape(select_rows(reshape(mask_logits, {t_len * n, hw}), std::move(order)), {n, t_len * hw});
  Tensor flat = objects.empty() ? Tensor() : objects.reshaped({objects.dim(0), t_len * hw});
  return set_loss(score_logits, per_query, flat, w);
}

}  // namespace mscope
