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

// Hierarchical motion perception over linked trajectories.
//
// Each stage scores every frame of a trajectory against the motion cues
// (softmax over time), enriches frames with a convex mix of cue rows, and
// merges neighbouring frames weighted by their summed cue attention. After
// the last stage the coarse tokens are repeated back to full length.
//
// Trajectory tensors are [T x C] or batched [N x T x C].

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mscope/nn.hpp"
#include "mscope/trajectory.hpp"

namespace mscope {

struct Highlight {
  Var attn;          // [..., T, K], each column sums to 1 over T
  Var frame_weight;  // [..., T], row sums of attn
};

inline Highlight highlight(const Var& traj, const Var& motion_cues) {
  if (traj.shape().back() != motion_cues.shape().back()) {
    throw DimensionError("highlight: trajectory " + shape_string(traj.shape()) +
                         " vs motion cues " + shape_string(motion_cues.shape()));
  }
  const double c = static_cast<double>(traj.shape().back());
  Var scores = scale(matmul(traj, motion_cues, false, true), 1.0 / std::sqrt(c));
  Highlight h;
  h.attn = softmax(scores, scores.rank() - 2);
  h.frame_weight = sum_axis(h.attn, h.attn.rank() - 1);
  return h;
}

/// traj + (attn / frame_weight) F_m: each frame gains a convex combination of
/// cue rows.
inline Var enrich(const Var& traj, const Var& attn, const Var& frame_weight,
                  const Var& motion_cues) {
  return add(traj, matmul(scale_rows(attn, reciprocal(frame_weight)), motion_cues));
}

/// Weighted average of frames (2j, 2j+1); halves the temporal length.
inline Var merge(const Var& enriched, const Var& frame_weight) {
  return pair_merge(enriched, frame_weight);
}

namespace detail {

// Gathers along the time axis of [B x T x C]: out[b, r] = x[b, index[r]].
inline Var gather_time(const Var& x, const std::vector<std::size_t>& index) {
  const std::size_t b = x.dim(0), t = x.dim(1), c = x.dim(2);
  std::vector<std::size_t> rows;
  rows.reserve(b * index.size());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t r : index) rows.push_back(i * t + r);
  return reshape(select_rows(reshape(x, {b * t, c}), std::move(rows)), {b, index.size(), c});
}

}  // namespace detail

/// The expanded coarse tokens after `stages` highlight/enrich/merge rounds,
/// same shape as `traj`. Lengths that are not a multiple of 2^stages are
/// padded by repeating the last frame; padded frames are dropped again before
/// returning. Requires stages >= 1.
inline Var hierarchical_pool(const Var& traj, const Var& motion_cues, std::size_t stages) {
  if (stages == 0) throw InputError("hierarchical_pool: at least one stage required");
  const bool batched = traj.rank() == 3;
  if (!batched && traj.rank() != 2) {
    throw DimensionError("hierarchical_pool: expected [T x C] or [N x T x C], got " +
                         shape_string(traj.shape()));
  }
  Var x = batched ? traj : reshape(traj, {1, traj.dim(0), traj.dim(1)});
  const std::size_t t_len = x.dim(1);
  const std::size_t factor = std::size_t{1} << stages;
  const std::size_t padded = (t_len + factor - 1) / factor * factor;
  if (padded != t_len) {
    std::vector<std::size_t> index(padded);
    for (std::size_t t = 0; t < padded; ++t) index[t] = std::min(t, t_len - 1);
    x = detail::gather_time(x, index);
  }
  for (std::size_t h = 0; h < stages; ++h) {
    Highlight hl = highlight(x, motion_cues);
    x = merge(enrich(x, hl.attn, hl.frame_weight, motion_cues), hl.frame_weight);
  }
  std::vector<std::size_t> expand(t_len);
  for (std::size_t t = 0; t < t_len; ++t) expand[t] = t / factor;
  x = detail::gather_time(x, expand);
  return batched ? x : reshape(x, traj.shape());
}

/// traj plus the expanded hierarchy output; the identity when stages == 0.
inline Var hierarchical_cross_attention(const Var& traj, const Var& motion_cues,
                                        std::size_t stages) {
  if (stages == 0) return traj;
  return add(traj, hierarchical_pool(traj, motion_cues, stages));
}

struct HmpConfig {
  std::size_t blocks = 3;
  std::size_t stages = 3;
  std::size_t channels = 32;
};

/// Temporal self-attention, hierarchical cross-attention and FFN, each as a
/// residual branch with its own output projection.
class HmpBlock {
 public:
  HmpBlock() = default;
  HmpBlock(ParameterSet& params, const std::string& name, std::size_t channels, Rng& rng)
      : sa_norm_(params, name + ".self_attn.norm", channels),
        sa_q_(params, name + ".self_attn.q", channels, channels, rng, false),
        sa_k_(params, name + ".self_attn.k", channels, channels, rng, false),
        sa_v_(params, name + ".self_attn.v", channels, channels, rng, false),
        sa_out_(params, name + ".self_attn.out", channels, channels, rng),
        hca_out_(params, name + ".hier_attn.out", channels, channels, rng),
        ffn_(params, name + ".ffn", channels, rng) {}

  Var operator()(const Var& traj, const Var& motion_cues, std::size_t stages) const {
    Var h = sa_norm_(traj);
    Var x = add(traj, sa_out_(attention(sa_q_(h), sa_k_(h), sa_v_(h))));
    if (stages > 0) x = add(x, hca_out_(hierarchical_pool(x, motion_cues, stages)));
    return add(x, ffn_(x));
  }

  void zero_output_projections() {
    zero_linear(sa_out_);
    zero_linear(hca_out_);
    zero_linear(ffn_.down);
  }

  FeedForward& ffn() { return ffn_; }

 private:
  LayerNorm sa_norm_;
  Linear sa_q_, sa_k_, sa_v_, sa_out_;
  Linear hca_out_;
  FeedForward ffn_;
};

class HmpStack {
 public:
  HmpStack() = default;
  HmpStack(ParameterSet& params, const std::string& name, const HmpConfig& cfg, Rng& rng)
      : cfg_(cfg) {
    if (cfg.blocks == 0) throw InputError("HMP needs at least one block");
    for (std::size_t l = 0; l < cfg.blocks; ++l)
      blocks_.emplace_back(params, name + ".block" + std::to_string(l), cfg.channels, rng);
  }

  const HmpConfig& config() const { return cfg_; }
  std::vector<HmpBlock>& blocks() { return blocks_; }

  /// [N x T x C] trajectories to motion-aware tokens of the same shape.
  Var operator()(const Var& trajectories, const Var& motion_cues) const {
    if (trajectories.rank() != 3 || trajectories.dim(2) != cfg_.channels) {
      throw DimensionError("hmp: expected [N x T x " + std::to_string(cfg_.channels) +
                           "], got " + shape_string(trajectories.shape()));
    }
    Var x = trajectories;
    for (const auto& b : blocks_) x = b(x, motion_cues, cfg_.stages);
    return x;
  }

  Var operator()(const TrajectorySet& trajs, const Var& motion_cues) const {
    return (*this)(trajs.tokens, motion_cues);
  }

  void zero_output_projections() {
    for (auto& b : blocks_) b.zero_output_projections();
  }

 private:
  HmpConfig cfg_;
  std::vector<HmpBlock> blocks_;
};

}  // namespace mscope
