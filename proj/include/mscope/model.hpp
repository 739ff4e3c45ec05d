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

// The full referring model: expression decoupling, static perception,
// trajectory linking, hierarchical motion perception and motion decoding.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mscope/contrastive.hpp"
#include "mscope/decoupler.hpp"
#include "mscope/hmp.hpp"
#include "mscope/motion_decoder.hpp"
#include "mscope/static_perceiver.hpp"
#include "mscope/trajectory.hpp"

namespace mscope {

/// How expression cues reach the queries.
enum class QueryVariant {
  kDecoupled,    // static / motion cue rows plus the sentence embedding
  kSentenceOnly, // the sentence embedding alone drives both query sets
  kNoSentence,   // decoupled cue rows without the sentence embedding
  kNoQuery,      // cue rows tiled to the query count, no learnable queries
};

inline std::string_view query_variant_name(QueryVariant v) {
  switch (v) {
    case QueryVariant::kDecoupled: return "decoupled";
    case QueryVariant::kSentenceOnly: return "sentence";
    case QueryVariant::kNoSentence: return "no_sentence";
    case QueryVariant::kNoQuery: return "no_query";
  }
  return "decoupled";
}

inline QueryVariant parse_query_variant(std::string_view s) {
  for (QueryVariant v : {QueryVariant::kDecoupled, QueryVariant::kSentenceOnly,
                         QueryVariant::kNoSentence, QueryVariant::kNoQuery})
    if (query_variant_name(v) == s) return v;
  throw InputError("unknown query variant: " + std::string(s));
}

struct ModelConfig {
  std::size_t vocab = 0;
  std::size_t channels = 32;
  std::size_t image_channels = 32;
  std::size_t pos_channels = 16;
  std::size_t static_queries = 20;
  std::size_t motion_queries = 10;
  std::size_t hmp_blocks = 3;
  std::size_t hmp_stages = 3;
  std::size_t projection_dim = 32;
  double embedding_std = 0.2;
  QueryVariant query_variant = QueryVariant::kDecoupled;
  LinkMode link_mode = LinkMode::kHungarian;
};

/// Fixed sinusoidal code distinguishing query slots, [N x C].
inline Tensor slot_code(std::size_t n, std::size_t c) {
  Tensor code({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const double freq = std::pow(1000.0, -static_cast<double>(k / 2 * 2) / static_cast<double>(c));
      code.at(i, k) = k % 2 ? std::cos(static_cast<double>(i) * freq) : std::sin(static_cast<double>(i) * freq);
    }
  return code;
}

struct ForwardResult {
  CueSet cues;
  PerceptionOutput perception;
  TrajectorySet trajectories;
  Var motion_tokens;     // [N_s x T x C]
  VideoTokenSet video;   // [N_m x C] tokens and [N_m] score logits
  Var frame_mask_logits; // [T x N_s x HW]
  Var video_mask_logits; // [T x N_m x HW]
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.vocab == 0) throw InputError("model: empty vocabulary");
    if (cfg.static_queries == 0 || cfg.motion_queries == 0) {
      throw InputError("model: query counts must be positive");
    }
    Rng rng(seed);
    const std::size_t c = cfg.channels;
    embedding_ = params_.add("embedding", random_normal({cfg.vocab, c}, rng, cfg.embedding_std));
    static_queries_ = params_.add("static_queries", random_normal({cfg.static_queries, c}, rng, 1.0));
    motion_queries_ = params_.add("motion_queries", random_normal({cfg.motion_queries, c}, rng, 1.0));
    perceiver_ = StaticPerceiver(params_, "perceiver",
                                 {cfg.static_queries, c, cfg.image_channels, cfg.pos_channels}, rng);
    hmp_ = HmpStack(params_, "hmp", {cfg.hmp_blocks, cfg.hmp_stages, c}, rng);
    decoder_ = MotionDecoder(params_, "decoder", {cfg.motion_queries, c}, rng);
    head_ = ProjectionHead(params_, "projection", c, cfg.projection_dim, rng);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  HmpStack& hmp() { return hmp_; }
  const ProjectionHead& projection() const { return head_; }

  ForwardResult forward(const Tensor& frames, const TaggedExpression& expr) const {
    ForwardResult r;
    DecoupleOptions opts;
    opts.sentence_only = cfg_.query_variant == QueryVariant::kSentenceOnly;
    opts.add_sentence = cfg_.query_variant != QueryVariant::kNoSentence;
    r.cues = decouple(expr, embedding_, opts);
    const Var qs = queries(static_queries_, r.cues.static_cues);
    const Var qm = queries(motion_queries_, r.cues.motion_cues);

    r.perception = perceiver_.perceive(frames, inject_static(qs, r.cues.static_cues));
    r.frame_mask_logits = frame_mask_logits(r.perception.tokens, r.perception.mask_features);
    r.trajectories = link(r.perception.tokens, cfg_.link_mode);
    r.motion_tokens = hmp_(r.trajectories, r.cues.motion_cues);
    r.video = decoder_(inject_motion(qm, r.cues.motion_cues), r.motion_tokens);
    r.video_mask_logits = video_mask_logits(r.video.tokens, r.perception.mask_features);
    return r;
  }

  /// Unit-norm embedding of a video token set [N x C] -> [N x D].
  Var project(const Var& tokens) const { return head_(tokens); }

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  Var queries(const Var& learned, const Var& cues) const {
    if (cfg_.query_variant != QueryVariant::kNoQuery) return learned;
    const std::size_t n = learned.dim(0), k = cues.dim(0);
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i % k;
    return add(select_rows(cues, std::move(rows)), constant(slot_code(n, cfg_.channels)));
  }

  ModelConfig cfg_;
  ParameterSet params_;
  Var embedding_, static_queries_, motion_queries_;
  StaticPerceiver perceiver_;
  HmpStack hmp_;
  MotionDecoder decoder_;
  ProjectionHead head_;
};

// model.bin: u64 count, then per parameter u64 name length, name bytes,
// u64 rank, u64 dims, f64 values. Little-endian.

inline void Model::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  auto u64 = [&](std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); };
  u64(params_.size());
  for (const auto& p : params_.items()) {
    u64(p.name.size());
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    u64(p.var.rank());
    for (std::size_t d : p.var.shape()) u64(d);
    os.write(reinterpret_cast<const char*>(p.var.value().data().data()),
             static_cast<std::streamsize>(p.var.size() * 8));
  }
  if (!os) throw InputError("failed writing " + path.string());
}

inline void Model::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open " + path.string());
  const std::string where = path.string();
  auto u64 = [&] {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw InputError(where + ": truncated");
    return v;
  };
  const std::uint64_t count = u64();
  if (count != params_.size()) {
    throw InputError(where + ": " + std::to_string(count) + " parameters, model has " +
                     std::to_string(params_.size()));
  }
  for (const auto& p : params_.items()) {
    const std::uint64_t len = u64();
    if (len > 4096) throw InputError(where + ": implausible name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw InputError(where + ": truncated");
    if (name != p.name) throw InputError(where + ": expected parameter " + p.name + ", found " + name);
    const std::uint64_t rank = u64();
    if (rank > 8) throw InputError(where + ": implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = u64();
    if (shape != p.var.shape()) {
      throw InputError(where + ": " + name + " has shape " + shape_string(shape) + ", model expects " +
                       shape_string(p.var.shape()));
    }
    std::vector<double> values(p.var.size());
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * 8))) {
      throw InputError(where + ": truncated");
    }
    Var v = p.var;
    v.mutable_value() = Tensor(shape, std::move(values));
  }
}

}  // namespace mscope
