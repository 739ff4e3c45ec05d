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
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mscope/autograd.hpp"

namespace mscope {

enum class PosTag { kNoun, kAdj, kPrep, kVerb, kAdv, kOther };

inline std::string_view tag_name(PosTag tag) {
  switch (tag) {
    case PosTag::kNoun: return "NOUN";
    case PosTag::kAdj: return "ADJ";
    case PosTag::kPrep: return "PREP";
    case PosTag::kVerb: return "VERB";
    case PosTag::kAdv: return "ADV";
    case PosTag::kOther: return "OTHER";
  }
  return "OTHER";
}

inline PosTag parse_tag(std::string_view s) {
  for (PosTag t : {PosTag::kNoun, PosTag::kAdj, PosTag::kPrep, PosTag::kVerb, PosTag::kAdv,
                   PosTag::kOther}) {
    if (tag_name(t) == s) return t;
  }
  throw InputError("unknown POS tag: " + std::string(s));
}

// Nouns, adjectives and prepositions ground appearance; verbs and adverbs
// describe motion.
inline bool is_static_tag(PosTag t) {
  return t == PosTag::kNoun || t == PosTag::kAdj || t == PosTag::kPrep;
}
inline bool is_motion_tag(PosTag t) { return t == PosTag::kVerb || t == PosTag::kAdv; }

struct TaggedToken {
  std::string surface;
  PosTag tag = PosTag::kOther;
  std::size_t vocab_id = 0;
};

struct TaggedExpression {
  std::vector<TaggedToken> tokens;

  std::string text() const {
    std::string s;
    for (const auto& t : tokens) {
      if (!s.empty()) s += ' ';
      s += t.surface;
    }
    return s;
  }
};

/// One line of an expression file.
struct ExpressionRecord {
  TaggedExpression expression;
  std::vector<std::size_t> target_ids;
  std::string video;
};

inline nlohmann::json to_json(const ExpressionRecord& r) {
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& t : r.expression.tokens)
    tokens.push_back({t.surface, std::string(tag_name(t.tag)), t.vocab_id});
  return {{"tokens", tokens}, {"target_ids", r.target_ids}, {"video", r.video}};
}

inline ExpressionRecord expression_from_json(const nlohmann::json& j) {
  ExpressionRecord r;
  try {
    for (const auto& t : j.at("tokens")) {
      if (!t.is_array() || t.size() != 3) throw InputError("token must be [surface, tag, id]");
      r.expression.tokens.push_back(
          {t[0].get<std::string>(), parse_tag(t[1].get<std::string>()), t[2].get<std::size_t>()});
    }
    r.target_ids = j.at("target_ids").get<std::vector<std::size_t>>();
    r.video = j.at("video").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed expression record: ") + e.what());
  }
  return r;
}

struct CueSet {
  Var static_cues;  // [K_s x C]
  Var motion_cues;  // [K_m x C]
  Var sentence;     // [C]
  /// Token positions feeding each cue row; empty when the fallback row is used.
  std::vector<std::size_t> static_tokens, motion_tokens;
};

struct DecoupleOptions {
  /// Add the sentence embedding to every cue row.
  bool add_sentence = true;
  /// Replace both cue sets by the sentence embedding alone.
  bool sentence_only = false;
};

/// Splits a tagged expression into static and motion cue rows. The sentence
/// embedding is the mean of all token embeddings, OTHER tokens included. An
/// empty cue class falls back to a single row holding the sentence embedding.
inline CueSet decouple(const TaggedExpression& expr, const Var& embedding,
                       const DecoupleOptions& opts = {}) {
  if (expr.tokens.empty()) throw InputError("decouple: empty expression");
  if (embedding.rank() != 2) {
    throw DimensionError("decouple: embedding table must be [V x C], got " +
                         shape_string(embedding.shape()));
  }
  const std::size_t vocab = embedding.dim(0), c = embedding.dim(1);
  std::vector<std::size_t> ids;
  CueSet cues;
  for (std::size_t i = 0; i < expr.tokens.size(); ++i) {
    const auto& tok = expr.tokens[i];
    if (tok.vocab_id >= vocab) {
      throw InputError("decouple: vocab id " + std::to_string(tok.vocab_id) + " for '" +
                       tok.surface + "' exceeds vocabulary size " + std::to_string(vocab));
    }
    ids.push_back(tok.vocab_id);
    if (is_static_tag(tok.tag)) cues.static_tokens.push_back(i);
    if (is_motion_tag(tok.tag)) cues.motion_tokens.push_back(i);
  }
  Var words = select_rows(embedding, ids);
  cues.sentence = scale(sum_axis(words, 0), 1.0 / static_cast<double>(ids.size()));
  Var sentence_row = reshape(cues.sentence, {1, c});

  if (opts.sentence_only) {
    cues.static_cues = sentence_row;
    cues.motion_cues = sentence_row;
    cues.static_tokens.clear();
    cues.motion_tokens.clear();
    return cues;
  }
  auto build = [&](const std::vector<std::size_t>& positions) {
    if (positions.empty()) return sentence_row;
    Var rows = select_rows(words, positions);
    return opts.add_sentence ? add_bias(rows, cues.sentence) : rows;
  };
  cues.static_cues = build(cues.static_tokens);
  cues.motion_cues = build(cues.motion_tokens);
  return cues;
}

}  // namespace mscope
