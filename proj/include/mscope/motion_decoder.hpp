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

#include <string>
#include <vector>

#include "mscope/static_perceiver.hpp"

namespace mscope {

inline Var inject_motion(const Var& queries, const Var& motion_cues) {
  return inject_cues(queries, motion_cues);
}

struct VideoTokenSet {
  Var tokens;        // [N_m x C]
  Var score_logits;  // [N_m]

  std::vector<double> scores() const {
    std::vector<double> s(score_logits.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = detail::sigmoid_scalar(score_logits.value()[i]);
    return s;
  }
};

struct DecoderConfig {
  std::size_t queries = 4;
  std::size_t channels = 32;
};

/// One cross-attention layer from motion queries onto the flattened
/// motion-aware object tokens, an FFN, and a sigmoid score head.
class MotionDecoder {
 public:
  MotionDecoder() = default;
  MotionDecoder(ParameterSet& params, const std::string& name, const DecoderConfig& cfg, Rng& rng)
      : cfg_(cfg),
        q_norm_(params, name + ".query_norm", cfg.channels),
        kv_norm_(params, name + ".memory_norm", cfg.channels),
        q_(params, name + ".q", cfg.channels, cfg.channels, rng, false),
        k_(params, name + ".k", cfg.channels, cfg.channels, rng, false),
        v_(params, name + ".v", cfg.channels, cfg.channels, rng, false),
        out_(params, name + ".out", cfg.channels, cfg.channels, rng),
        ffn_(params, name + ".ffn", cfg.channels, rng),
        score_head_(params, name + ".score_head", cfg.channels, 1, rng) {}

  const DecoderConfig& config() const { return cfg_; }

  /// injected_queries [N_m x C]; motion_tokens [N_s x T x C] (any leading
  /// shape whose last axis is C).
  VideoTokenSet operator()(const Var& injected_queries, const Var& motion_tokens) const {
    const std::size_t c = cfg_.channels;
    if (injected_queries.shape().back() != c || motion_tokens.shape().back() != c) {
      throw DimensionError("decode: channel mismatch between " +
                           shape_string(injected_queries.shape()) + " and " +
                           shape_string(motion_tokens.shape()));
    }
    Var memory = kv_norm_(reshape(motion_tokens, {motion_tokens.size() / c, c}));
    Var q = q_(q_norm_(injected_queries));
    Var v = add(injected_queries, out_(attention(q, k_(memory), v_(memory))));
    v = add(v, ffn_(v));
    VideoTokenSet out;
    out.tokens = v;
    out.score_logits = reshape(score_head_(v), {injected_queries.dim(0)});
    return out;
  }

  void zero_output_projections() {
    zero_linear(out_);
    zero_linear(ffn_.down);
  }

  FeedForward& ffn() { return ffn_; }

 private:
  DecoderConfig cfg_;
  LayerNorm q_norm_, kv_norm_;
  Linear q_, k_, v_, out_;
  FeedForward ffn_;
  Linear score_head_;
};

struct VideoPrediction {
  Tensor probabilities;               // [N_m x T x HW]
  std::vector<double> scores;         // [N_m]
  std::vector<std::size_t> selected;  // queries whose score exceeds the threshold
};

/// Mask logits [T x N_m x HW] of every video token against every frame.
inline Var video_mask_logits(const Var& video_tokens, const MaskFeatures& features) {
  return features.logits(video_tokens);
}

inline VideoPrediction predict_video_masks(const VideoTokenSet& v, const MaskFeatures& features,
                                           double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw InputError("predict_video_masks: threshold must lie in (0, 1)");
  }
  NoGradGuard ng;
  const Var logits = video_mask_logits(v.tokens, features);
  const std::size_t t_len = logits.dim(0), n = logits.dim(1), hw = logits.dim(2);
  VideoPrediction out;
  out.probabilities = Tensor({n, t_len, hw});
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < hw; ++p)
        out.probabilities.at(j, t, p) = detail::sigmoid_scalar(logits.value().at(t, j, p));
  out.scores = v.scores();
  for (std::size_t j = 0; j < n; ++j)
    if (out.scores[j] > threshold) out.selected.push_back(j);
  return out;
}

}  // namespace mscope
