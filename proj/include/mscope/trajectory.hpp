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

#include <cmath>
#include <vector>

#include "mscope/autograd.hpp"
#include "mscope/hungarian.hpp"

namespace mscope {

enum class LinkMode { kHungarian, kIdentity };

struct TrajectorySet {
  /// [N x T x C]; row i is trajectory i.
  Var tokens;
  /// assignment[t][i] is the frame-t token index placed in trajectory i.
  std::vector<std::vector<std::size_t>> assignment;
};

/// Negative cosine similarity between rows of `prev` and `cur`; zero vectors
/// have cosine 0 with everything.
inline Tensor cosine_cost(std::span<const double> prev, std::span<const double> cur,
                          std::size_t n, std::size_t c) {
  Tensor out({n, n});
  std::vector<double> np(n), nc(n);
  for (std::size_t i = 0; i < n; ++i) {
    double a = 0.0, b = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      a += prev[i * c + k] * prev[i * c + k];
      b += cur[i * c + k] * cur[i * c + k];
    }
    np[i] = std::sqrt(a);
    nc[i] = std::sqrt(b);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (np[i] == 0.0 || nc[j] == 0.0) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < c; ++k) d += prev[i * c + k] * cur[j * c + k];
      out.at(i, j) = -d / (np[i] * nc[j]);
    }
  }
  return out;
}

/// Links per-frame tokens [T x N x C] into N trajectories. Frame 0 is kept
/// as-is; each later frame is permuted to best continue the previous linked
/// frame. Matching reads values only; gradients follow the chosen indices.
inline TrajectorySet link(const Var& object_tokens, LinkMode mode = LinkMode::kHungarian) {
  if (object_tokens.rank() != 3) {
    throw DimensionError("link: expected [T x N x C], got " + shape_string(object_tokens.shape()));
  }
  const std::size_t t_len = object_tokens.dim(0), n = object_tokens.dim(1),
                    c = object_tokens.dim(2);
  const auto values = object_tokens.value().data();
  TrajectorySet out;
  out.assignment.assign(t_len, std::vector<std::size_t>(n));
  for (std::size_t i = 0; i < n; ++i) out.assignment[0][i] = i;
  std::vector<double> prev(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(n * c));
  for (std::size_t t = 1; t < t_len; ++t) {
    auto& a = out.assignment[t];
    const auto cur = values.subspan(t * n * c, n * c);
    if (mode == LinkMode::kIdentity) {
      for (std::size_t i = 0; i < n; ++i) a[i] = i;
    } else {
      a = hungarian(cosine_cost(prev, cur, n, c)).cols;
    }
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(cur.data() + a[i] * c, c, prev.data() + i * c);
  }
  std::vector<std::size_t> gather(n * t_len);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < t_len; ++t) gather[i * t_len + t] = t * n + out.assignment[t][i];
  out.tokens = reshape(select_rows(reshape(object_tokens, {t_len * n, c}), std::move(gather)),
                       {n, t_len, c});
  return out;
}

}  // namespace mscope
