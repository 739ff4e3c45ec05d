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

// Single-layer stand-in for a mask-transformer decoder: cue-injected queries
// cross-attend over the pixels of every frame to produce candidate object
// tokens, a binary objectness logit, and per-frame mask logits.

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "mscope/nn.hpp"

namespace mscope {

/// Q + softmax(Q F^T / sqrt(C)) F: cue injection into learnable queries.
inline Var inject_cues(const Var& queries, const Var& cues) {
  if (queries.shape().back() != cues.shape().back()) {
    throw DimensionError("inject_cues: query channels " + shape_string(queries.shape()) +
                         " vs cue channels " + shape_string(cues.shape()));
  }
  return add(queries, attention(queries, cues, cues));
}

inline Var inject_static(const Var& queries, const Var& static_cues) {
  return inject_cues(queries, static_cues);
}

/// Fixed sinusoidal code of the (row, col) grid, [H*W x channels]. Half the
/// channels encode the row, half the column, as sin/cos pairs with periods
/// 2H, H, H/2, ...
inline Tensor grid_code(std::size_t height, std::size_t width, std::size_t channels) {
  if (channels % 4 != 0) throw InputError("grid_code: channel count must be a multiple of 4");
  Tensor code({height * width, channels});
  const std::size_t per_axis = channels / 2;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double* row = code.mutable_data().data() + (y * width + x) * channels;
      for (std::size_t k = 0; k < per_axis / 2; ++k) {
        const double wy = std::numbers::pi * std::pow(2.0, static_cast<double>(k)) /
                          static_cast<double>(height);
        const double wx = std::numbers::pi * std::pow(2.0, static_cast<double>(k)) /
                          static_cast<double>(width);
        row[2 * k] = std::sin(wy * (static_cast<double>(y) + 0.5));
        row[2 * k + 1] = std::cos(wy * (static_cast<double>(y) + 0.5));
        row[per_axis + 2 * k] = std::sin(wx * (static_cast<double>(x) + 0.5));
        row[per_axis + 2 * k + 1] = std::cos(wx * (static_cast<double>(x) + 0.5));
      }
    }
  }
  return code;
}

/// Per-pixel inputs [T x H*W x (C_img + pos + 1)]: frame features, the grid
/// code, and a constant 1 that carries the mask-head bias.
inline Tensor pixel_basis(const Tensor& frames, std::size_t pos_channels) {
  if (frames.rank() != 4) {
    throw DimensionError("pixel_basis: frames must be [T x H x W x C], got " +
                         shape_string(frames.shape()));
  }
  const std::size_t t_len = frames.dim(0), h = frames.dim(1), w = frames.dim(2),
                    ci = frames.dim(3);
  const Tensor code = pos_channels ? grid_code(h, w, pos_channels) : Tensor();
  const std::size_t d = ci + pos_channels + 1;
  std::vector<double> out(t_len * h * w * d);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t p = 0; p < h * w; ++p) {
      double* o = out.data() + (t * h * w + p) * d;
      std::copy_n(frames.data().data() + (t * h * w + p) * ci, ci, o);
      if (pos_channels) std::copy_n(code.data().data() + p * pos_channels, pos_channels, o + ci);
      o[d - 1] = 1.0;
    }
  }
  return Tensor::adopt({t_len, h * w, d}, std::move(out));
}

/// Mask features held in factored form: F_mask = basis * proj. Products with
/// tokens are computed as (tokens proj^T) basis^T so the [T x HW x C] tensor
/// is never built during training.
struct MaskFeatures {
  Var basis;  // [T x HW x D], constant
  Var proj;   // [D x C]
  std::size_t height = 0, width = 0;

  std::size_t frames() const { return basis.dim(0); }
  std::size_t pixels() const { return basis.dim(1); }

  /// <token, pixel feature> for tokens [N x C] (shared across frames) or
  /// [T x N x C] (per frame). Returns [T x N x HW].
  Var logits(const Var& tokens) const {
    Var g = matmul(tokens, proj, false, true);
    return matmul(g, basis, false, true);
  }

  /// Explicit [T x H x W x C] mask features.
  Tensor materialize() const {
    NoGradGuard ng;
    Var f = matmul(basis, proj);
    return f.value().reshaped({frames(), height, width, proj.dim(1)});
  }
};

struct PerceiverConfig {
  std::size_t queries = 8;
  std::size_t channels = 32;
  std::size_t image_channels = 32;
  /// Grid-code channels appended to every pixel; 0 disables the code.
  std::size_t pos_channels = 16;
};

struct PerceptionOutput {
  Var tokens;        // [T x N_s x C]
  Var class_logits;  // [T x N_s]
  MaskFeatures mask_features;
};

class StaticPerceiver {
 public:
  StaticPerceiver() = default;
  StaticPerceiver(ParameterSet& params, const std::string& name, const PerceiverConfig& cfg,
                  Rng& rng)
      : cfg_(cfg),
        pixel_head_(params.add(name + ".pixel_head",
                               random_normal({cfg.image_channels + cfg.pos_channels + 1,
                                              cfg.channels},
                                             rng,
                                             1.0 / std::sqrt(static_cast<double>(
                                                       cfg.image_channels + cfg.pos_channels))))),
        query_norm_(params, name + ".query_norm", cfg.channels),
        query_proj_(params, name + ".query_proj", cfg.channels, cfg.channels, rng, false),
        out_proj_(params, name + ".out_proj", cfg.channels, cfg.channels, rng),
        ffn_(params, name + ".ffn", cfg.channels, rng),
        class_head_(params, name + ".class_head", cfg.channels, 1, rng) {}

  const PerceiverConfig& config() const { return cfg_; }
  const Var& pixel_head() const { return pixel_head_; }
  Linear& out_proj() { return out_proj_; }
  FeedForward& ffn() { return ffn_; }

  MaskFeatures mask_features(const Tensor& frames) const {
    if (frames.dim(3) != cfg_.image_channels) {
      throw DimensionError("perceive: frame channels " + std::to_string(frames.dim(3)) +
                           " != configured " + std::to_string(cfg_.image_channels));
    }
    return {constant(pixel_basis(frames, cfg_.pos_channels)), pixel_head_, frames.dim(1),
            frames.dim(2)};
  }

  /// Runs every frame with the same injected queries [N_s x C].
  PerceptionOutput perceive(const Tensor& frames, const Var& injected_queries) const {
    if (injected_queries.rank() != 2 || injected_queries.dim(1) != cfg_.channels) {
      throw DimensionError("perceive: queries must be [N x " + std::to_string(cfg_.channels) +
                           "], got " + shape_string(injected_queries.shape()));
    }
    PerceptionOutput out;
    out.mask_features = mask_features(frames);
    const std::size_t t_len = frames.dim(0), n = injected_queries.dim(0), c = cfg_.channels;
    Var q = query_proj_(query_norm_(injected_queries));
    Var scores = scale(out.mask_features.logits(q), 1.0 / std::sqrt(static_cast<double>(c)));
    Var alpha = softmax(scores, 2);
    Var attended = matmul(matmul(alpha, out.mask_features.basis), pixel_head_);  // [T x N x C]
    Var base = reshape(select_rows(reshape(injected_queries, {1, n * c}),
                                   std::vector<std::size_t>(t_len, 0)),
                       {t_len, n, c});
    Var tokens = add(base, out_proj_(attended));
    tokens = add(tokens, ffn_(tokens));
    out.tokens = tokens;
    out.class_logits = reshape(class_head_(tokens), {t_len, n});
    return out;
  }

 private:
  PerceiverConfig cfg_;
  Var pixel_head_;
  LayerNorm query_norm_;
  Linear query_proj_;
  Linear out_proj_;
  FeedForward ffn_;
  Linear class_head_;
};

/// Per-frame mask logits [T x N x HW] for tokens [T x N x C].
inline Var frame_mask_logits(const Var& tokens, const MaskFeatures& features) {
  return features.logits(tokens);
}

/// sigmoid(<token, pixel feature>) per token and pixel, [T x N x HW].
inline Var predict_frame_masks(const Var& tokens, const MaskFeatures& features) {
  return sigmoid(frame_mask_logits(tokens, features));
}

}  // namespace mscope
