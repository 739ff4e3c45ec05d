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

// Minimum-cost perfect matching (Kuhn-Munkres with potentials, O(n^3)), plus
// a refinement pass that returns the lexicographically smallest optimal
// permutation so ties resolve deterministically.

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "mscope/tensor.hpp"

namespace mscope {

struct Assignment {
  /// cols[r] is the column assigned to row r.
  std::vector<std::size_t> cols;
  double cost = 0.0;
};

namespace detail {

// Dense square solve over the sub-matrix selected by `rows` x `cols`.
// Returns the optimal cost and writes the local assignment.
inline double solve_square(const std::vector<double>& cost, std::size_t stride,
                           const std::vector<std::size_t>& rows,
                           const std::vector<std::size_t>& cols,
                           std::vector<std::size_t>* local = nullptr) {
  const std::size_t n = rows.size();
  if (n == 0) return 0.0;
  constexpr double inf = std::numeric_limits<double>::infinity();
  auto at = [&](std::size_t i, std::size_t j) { return cost[rows[i - 1] * stride + cols[j - 1]]; };
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = at(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += cost[rows[i] * stride + cols[assign[i]]];
  if (local) *local = std::move(assign);
  return total;
}

}  // namespace detail

/// Optimal assignment for a square, finite cost matrix. Among optimal
/// permutations the lexicographically smallest one is returned.
inline Assignment hungarian(const Tensor& costs) {
  if (costs.rank() != 2 || costs.dim(0) != costs.dim(1)) {
    throw DimensionError("hungarian: cost matrix must be square, got " +
                         shape_string(costs.shape()));
  }
  costs.require_finite("hungarian cost matrix");
  const std::size_t n = costs.dim(0);
  const std::vector<double>& c = costs.vec();

  double scale = 0.0;
  for (double v : c) scale = std::max(scale, std::abs(v));
  const double tol = 1e-10 * std::max(1.0, scale * static_cast<double>(n));

  std::vector<std::size_t> rows(n), cols(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = cols[i] = i;
  double remaining = detail::solve_square(c, n, rows, cols);

  Assignment out;
  out.cols.assign(n, 0);
  std::vector<std::size_t> free_cols = cols;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<std::size_t> rest_rows(rows.begin() + static_cast<std::ptrdiff_t>(r + 1), rows.end());
    bool fixed = false;
    for (std::size_t k = 0; k < free_cols.size(); ++k) {
      std::vector<std::size_t> rest_cols = free_cols;
      rest_cols.erase(rest_cols.begin() + static_cast<std::ptrdiff_t>(k));
      const double head = c[r * n + free_cols[k]];
      const double tail = detail::solve_square(c, n, rest_rows, rest_cols);
      if (head + tail <= remaining + tol) {
        out.cols[r] = free_cols[k];
        remaining = tail;
        free_cols = std::move(rest_cols);
        fixed = true;
        break;
      }
    }
    if (!fixed) {
      // Roundoff pushed every candidate over the bound; keep the solver's choice.
      std::vector<std::size_t> local;
      detail::solve_square(c, n, std::vector<std::size_t>(rows.begin() + static_cast<std::ptrdiff_t>(r), rows.end()),
                           free_cols, &local);
      for (std::size_t i = 0; i < local.size(); ++i) out.cols[r + i] = free_cols[local[i]];
      break;
    }
  }
  for (std::size_t r = 0; r < n; ++r) out.cost += c[r * n + out.cols[r]];
  return out;
}

/// Matches rows to columns when rows >= cols by padding with zero-cost dummy
/// columns. Unmatched rows map to `npos`.
inline std::vector<std::size_t> hungarian_rectangular(const Tensor& costs) {
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  if (costs.rank() != 2) throw DimensionError("hungarian_rectangular: rank-2 costs required");
  const std::size_t rows = costs.dim(0), cols = costs.dim(1);
  if (cols > rows) {
    throw DimensionError("hungarian_rectangular: more columns than rows in " +
                         shape_string(costs.shape()));
  }
  Tensor square({rows, rows});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) square.at(i, j) = costs.at(i, j);
  const Assignment a = hungarian(square);
  std::vector<std::size_t> out(rows, npos);
  for (std::size_t i = 0; i < rows; ++i)
    if (a.cols[i] < cols) out[i] = a.cols[i];
  return out;
}

}  // namespace mscope
