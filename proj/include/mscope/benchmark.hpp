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

// Procedural grid-world videos with referring expressions, dataset IO, and
// the J / F segmentation metrics.
//
// Every scene holds a pair of objects with the same category and colour
// (appearance equal up to a small jitter) that differ only in how they move.
// Objects live in separate row bands and move horizontally, so a mask that is
// fixed across frames can still single out one of the pair by its row.

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mscope/decoupler.hpp"
#include "mscope/parameter.hpp"

namespace mscope {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

enum class MotionKind { kStatic, kShortBurst, kLongHorizon };

inline std::string_view motion_kind_name(MotionKind k) {
  switch (k) {
    case MotionKind::kStatic: return "static";
    case MotionKind::kShortBurst: return "short-burst";
    case MotionKind::kLongHorizon: return "long-horizon";
  }
  return "static";
}

inline MotionKind parse_motion_kind(std::string_view s) {
  for (MotionKind k : {MotionKind::kStatic, MotionKind::kShortBurst, MotionKind::kLongHorizon})
    if (motion_kind_name(k) == s) return k;
  throw InputError("unknown motion kind: " + std::string(s));
}

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Vocabulary

/// What a word means to the generator: a category, a colour, a motion kind,
/// or nothing.
struct WordSense {
  enum class Kind { kCategory, kColor, kMotion, kNone } kind = Kind::kNone;
  std::size_t index = 0;
  MotionKind motion = MotionKind::kStatic;
};

struct VocabEntry {
  std::string surface;
  PosTag tag;
  WordSense sense;
};

class Vocabulary {
 public:
  static const Vocabulary& standard() {
    static const Vocabulary v;
    return v;
  }

  std::size_t size() const { return entries_.size(); }
  const VocabEntry& at(std::size_t id) const { return entries_.at(id); }
  std::size_t categories() const { return categories_.size(); }
  std::size_t colors() const { return colors_.size(); }
  std::size_t category_word(std::size_t c) const { return categories_.at(c); }
  std::size_t color_word(std::size_t c) const { return colors_.at(c); }
  const std::vector<std::size_t>& verbs(MotionKind k) const { return verbs_[index(k)]; }
  const std::vector<std::size_t>& adverbs(MotionKind k) const { return adverbs_[index(k)]; }
  std::size_t id(std::string_view surface) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].surface == surface) return i;
    throw InputError("word not in vocabulary: " + std::string(surface));
  }

  TaggedToken token(std::size_t id) const { return {entries_.at(id).surface, entries_.at(id).tag, id}; }

 private:
  static std::size_t index(MotionKind k) { return static_cast<std::size_t>(k); }

  Vocabulary() {
    auto add = [&](std::string s, PosTag tag, WordSense sense) {
      entries_.push_back({std::move(s), tag, sense});
      return entries_.size() - 1;
    };
    for (const char* w : {"the", "a", "then", "is"}) add(w, PosTag::kOther, {});
    std::size_t i = 0;
    for (const char* w : {"circle", "square", "triangle", "star", "cross", "ring"})
      categories_.push_back(add(w, PosTag::kNoun, {WordSense::Kind::kCategory, i++}));
    i = 0;
    for (const char* w : {"red", "green", "blue"})
      colors_.push_back(add(w, PosTag::kAdj, {WordSense::Kind::kColor, i++}));
    const std::array<std::pair<std::array<const char*, 3>, std::array<const char*, 2>>, 3> motion{{
        {{"standing", "resting", "waiting"}, {"still", "quietly"}},
        {{"jumping", "darting", "hopping"}, {"suddenly", "briefly"}},
        {{"walking", "drifting", "travelling"}, {"steadily", "slowly"}},
    }};
    for (std::size_t k = 0; k < 3; ++k) {
      const WordSense s{WordSense::Kind::kMotion, 0, static_cast<MotionKind>(k)};
      for (const char* w : motion[k].first) verbs_[k].push_back(add(w, PosTag::kVerb, s));
      for (const char* w : motion[k].second) adverbs_[k].push_back(add(w, PosTag::kAdv, s));
    }
  }

  std::vector<VocabEntry> entries_;
  std::vector<std::size_t> categories_, colors_;
  std::array<std::vector<std::size_t>, 3> verbs_, adverbs_;
};

/// The (category, colour, motion) an expression asks for; fields absent from
/// the expression stay empty.
struct ExpressionMeaning {
  std::optional<std::size_t> category, color;
  std::optional<MotionKind> motion;
};

inline ExpressionMeaning interpret(const TaggedExpression& e,
                                   const Vocabulary& vocab = Vocabulary::standard()) {
  ExpressionMeaning m;
  for (const auto& t : e.tokens) {
    const WordSense& s = vocab.at(t.vocab_id).sense;
    if (s.kind == WordSense::Kind::kCategory) m.category = s.index;
    if (s.kind == WordSense::Kind::kColor) m.color = s.index;
    if (s.kind == WordSense::Kind::kMotion) m.motion = s.motion;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Scenes

struct MotionProgram {
  MotionKind kind = MotionKind::kStatic;
  std::size_t onset = 0;
  std::size_t duration = 0;
  int direction = 1;
  double distance = 0.0;

  /// Horizontal offset from the start column at frame t.
  int offset(std::size_t t) const {
    if (kind == MotionKind::kStatic || duration == 0) return 0;
    const double u = std::clamp((static_cast<double>(t) - static_cast<double>(onset)) /
                                    static_cast<double>(duration),
                                0.0, 1.0);
    return direction * static_cast<int>(std::lround(u * distance));
  }

  /// Throws GenerationError when the program cannot fit in `frames`.
  void validate(std::size_t frames) const {
    if (onset + duration > frames) {
      throw GenerationError("motion program: onset " + std::to_string(onset) + " + duration " +
                            std::to_string(duration) + " exceeds " + std::to_string(frames) +
                            " frames");
    }
    if (kind == MotionKind::kShortBurst && (duration == 0 || 4 * duration > frames)) {
      throw GenerationError("short-burst duration must lie in [1, T/4]");
    }
    if (kind == MotionKind::kLongHorizon && 4 * duration < 3 * frames) {
      throw GenerationError("long-horizon duration must be at least 3T/4");
    }
  }
};

struct SceneObject {
  std::size_t category = 0;
  std::size_t color = 0;
  std::vector<double> appearance;
  MotionProgram motion;
  std::size_t row = 0;   // top row of the square
  std::size_t col0 = 0;  // left column at frame 0
  std::size_t size = 2;

  std::size_t col(std::size_t t) const {
    return static_cast<std::size_t>(static_cast<int>(col0) + motion.offset(t));
  }
};

struct BenchmarkConfig {
  std::size_t frames = 16;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 32;
  std::size_t object_size = 2;
  /// Standard deviation of per-pixel feature noise.
  double noise = 0.15;
  /// Per-coordinate appearance jitter between objects of the same kind.
  double jitter = 0.02;
  /// Extra objects beyond the look-alike pair: uniform in [min, max].
  std::size_t min_extra = 1, max_extra = 2;
  /// Chance of a scene also carrying one expression with no referent.
  double no_target_rate = 0.3;
  /// Chance that one extra object copies the pair's category and colour.
  double triple_rate = 0.15;
  /// Seed of the category/colour prototype vectors shared by all scenes.
  std::uint64_t prototype_seed = 0x5eed;

  void validate() const {
    if (frames < 8 || height < 4 || width < 4 || channels == 0 || object_size == 0) {
      throw GenerationError("benchmark config: need T >= 8, H, W >= 4, C >= 1");
    }
    if (min_extra > max_extra) throw GenerationError("benchmark config: min_extra > max_extra");
    const std::size_t bands = height / (object_size + 2);
    if (2 + max_extra > bands) {
      throw GenerationError("benchmark config: " + std::to_string(2 + max_extra) +
                            " objects need more row bands than H allows (" +
                            std::to_string(bands) + ")");
    }
    if (object_size + 9 > width) throw GenerationError("benchmark config: grid too narrow");
  }
};

inline nlohmann::json to_json(const BenchmarkConfig& c) {
  return {{"T", c.frames},          {"H", c.height},
          {"W", c.width},           {"C_img", c.channels},
          {"object_size", c.object_size}, {"noise", c.noise},
          {"jitter", c.jitter},     {"min_extra", c.min_extra},
          {"max_extra", c.max_extra}, {"no_target_rate", c.no_target_rate},
          {"triple_rate", c.triple_rate}, {"prototype_seed", c.prototype_seed}};
}

inline BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j) {
  BenchmarkConfig c;
  c.frames = j.value("T", c.frames);
  c.height = j.value("H", c.height);
  c.width = j.value("W", c.width);
  c.channels = j.value("C_img", c.channels);
  c.object_size = j.value("object_size", c.object_size);
  c.noise = j.value("noise", c.noise);
  c.jitter = j.value("jitter", c.jitter);
  c.min_extra = j.value("min_extra", c.min_extra);
  c.max_extra = j.value("max_extra", c.max_extra);
  c.no_target_rate = j.value("no_target_rate", c.no_target_rate);
  c.triple_rate = j.value("triple_rate", c.triple_rate);
  c.prototype_seed = j.value("prototype_seed", c.prototype_seed);
  return c;
}

struct Scene {
  std::uint64_t seed = 0;
  std::size_t frames = 0, height = 0, width = 0, channels = 0;
  std::vector<SceneObject> objects;
  std::vector<ExpressionRecord> expressions;
  Tensor features;  // [T x H x W x C]
  Tensor masks;     // [objects x T x H x W], 0/1

  std::string video() const { return std::to_string(seed); }

  /// Union of the masks of `ids`, [T x H x W]; all zero for an empty list.
  Tensor union_mask(const std::vector<std::size_t>& ids) const {
    const std::size_t n = frames * height * width;
    std::vector<double> out(n, 0.0);
    for (std::size_t id : ids) {
      const auto m = masks.data().subspan(id * n, n);
      for (std::size_t i = 0; i < n; ++i) out[i] = std::max(out[i], m[i]);
    }
    return Tensor::adopt({frames, height, width}, std::move(out));
  }

  /// Objects whose category, colour and motion satisfy the expression.
  std::vector<std::size_t> referents(const TaggedExpression& e, bool static_only = false) const {
    const ExpressionMeaning m = interpret(e);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < objects.size(); ++i) {
      const auto& o = objects[i];
      if (m.category && o.category != *m.category) continue;
      if (m.color && o.color != *m.color) continue;
      if (!static_only && m.motion && o.motion.kind != *m.motion) continue;
      out.push_back(i);
    }
    return out;
  }
};

namespace detail {

inline std::vector<std::vector<double>> prototypes(std::size_t count, std::size_t channels,
                                                   std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> out(count, std::vector<double>(channels));
  for (auto& p : out)
    for (double& v : p) v = n(rng);
  return out;
}

inline MotionProgram sample_motion(MotionKind kind, std::size_t frames, Rng& rng) {
  MotionProgram m;
  m.kind = kind;
  auto uniform = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  m.direction = std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
  if (kind == MotionKind::kShortBurst) {
    m.duration = uniform(2, frames / 4);
    m.onset = uniform(1, frames - m.duration - 1);
    m.distance = static_cast<double>(uniform(6, 8));
  } else if (kind == MotionKind::kLongHorizon) {
    m.duration = uniform((3 * frames + 3) / 4, frames - 1);
    m.onset = uniform(0, frames - 1 - m.duration);
    m.distance = static_cast<double>(uniform(8, 9));
  }
  return m;
}

}  // namespace detail

/// Deterministic scene for `seed`. Pure function of (seed, config).
inline Scene generate_scene(std::uint64_t seed, const BenchmarkConfig& cfg = {}) {
  cfg.validate();
  const Vocabulary& vocab = Vocabulary::standard();
  const auto cat_proto = detail::prototypes(vocab.categories(), cfg.channels, cfg.prototype_seed);
  const auto col_proto = detail::prototypes(vocab.colors(), cfg.channels, cfg.prototype_seed + 1);
  Rng rng(seed * 0x9E3779B97F4A7C15ull + 0x1234567ull);
  auto uniform = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::normal_distribution<double> gauss(0.0, 1.0);

  Scene s;
  s.seed = seed;
  s.frames = cfg.frames;
  s.height = cfg.height;
  s.width = cfg.width;
  s.channels = cfg.channels;

  const std::size_t extra = uniform(cfg.min_extra, cfg.max_extra);
  const std::size_t count = 2 + extra;
  const std::size_t band = cfg.object_size + 2;
  std::vector<std::size_t> bands(cfg.height / band);
  for (std::size_t i = 0; i < bands.size(); ++i) bands[i] = i;
  std::shuffle(bands.begin(), bands.end(), rng);

  const std::size_t pair_cat = uniform(0, vocab.categories() - 1);
  const std::size_t pair_col = uniform(0, vocab.colors() - 1);
  std::vector<MotionKind> kinds{MotionKind::kStatic, MotionKind::kShortBurst,
                                MotionKind::kLongHorizon};
  std::shuffle(kinds.begin(), kinds.end(), rng);
  const bool triple = std::bernoulli_distribution(cfg.triple_rate)(rng);

  for (std::size_t i = 0; i < count; ++i) {
    SceneObject o;
    o.size = cfg.object_size;
    MotionKind kind;
    if (i < 2) {
      o.category = pair_cat;
      o.color = pair_col;
      kind = kinds[i];
    } else if (i == 2 && triple) {
      o.category = pair_cat;
      o.color = pair_col;
      kind = kinds[uniform(0, 2)];
    } else {
      do {
        o.category = uniform(0, vocab.categories() - 1);
        o.color = uniform(0, vocab.colors() - 1);
      } while (o.category == pair_cat && o.color == pair_col);
      kind = kinds[uniform(0, 2)];
    }
    o.motion = detail::sample_motion(kind, cfg.frames, rng);
    o.motion.validate(cfg.frames);
    o.row = bands[i] * band + 1;
    const std::size_t span = cfg.width - cfg.object_size;  // last valid column
    const auto reach = static_cast<std::size_t>(std::lround(o.motion.distance));
    if (o.motion.direction > 0) {
      o.col0 = uniform(0, span - reach);
    } else {
      o.col0 = uniform(reach, span);
    }
    o.appearance.resize(cfg.channels);
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      o.appearance[c] = (cat_proto[o.category][c] + 0.8 * col_proto[o.color][c]) / 1.28 +
                        cfg.jitter * gauss(rng);
    }
    s.objects.push_back(std::move(o));
  }

  // Frames: noise everywhere plus each object's appearance on its support.
  const std::size_t t_len = cfg.frames, h = cfg.height, w = cfg.width, c = cfg.channels;
  std::vector<double> feat(t_len * h * w * c);
  for (double& v : feat) v = cfg.noise * gauss(rng);
  std::vector<double> masks(count * t_len * h * w, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& o = s.objects[i];
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t y = o.row; y < o.row + o.size; ++y) {
        for (std::size_t x = o.col(t); x < o.col(t) + o.size; ++x) {
          double* f = feat.data() + ((t * h + y) * w + x) * c;
          for (std::size_t k = 0; k < c; ++k) f[k] += o.appearance[k];
          masks[((i * t_len + t) * h + y) * w + x] = 1.0;
        }
      }
    }
  }
  s.features = Tensor::adopt({t_len, h, w, c}, std::move(feat));
  s.masks = Tensor::adopt({count, t_len, h, w}, std::move(masks));

  // Two paraphrases for every object, then maybe one expression with no referent.
  auto phrase = [&](std::size_t cat, std::size_t col, MotionKind kind, bool long_form) {
    TaggedExpression e;
    e.tokens.push_back(vocab.token(vocab.id(long_form ? "a" : "the")));
    e.tokens.push_back(vocab.token(vocab.color_word(col)));
    e.tokens.push_back(vocab.token(vocab.category_word(cat)));
    const auto& verbs = vocab.verbs(kind);
    e.tokens.push_back(vocab.token(verbs[uniform(0, verbs.size() - 1)]));
    if (long_form) {
      const auto& adv = vocab.adverbs(kind);
      e.tokens.push_back(vocab.token(adv[uniform(0, adv.size() - 1)]));
    }
    return e;
  };
  for (std::size_t i = 0; i < count; ++i) {
    const auto& o = s.objects[i];
    for (bool long_form : {false, true}) {
      ExpressionRecord r;
      r.expression = phrase(o.category, o.color, o.motion.kind, long_form);
      r.target_ids = s.referents(r.expression);
      r.video = s.video();
      s.expressions.push_back(std::move(r));
    }
  }
  if (std::bernoulli_distribution(cfg.no_target_rate)(rng)) {
    std::vector<MotionKind> unused;
    for (MotionKind k : kinds) {
      bool taken = false;
      for (const auto& o : s.objects)
        taken = taken || (o.category == pair_cat && o.color == pair_col && o.motion.kind == k);
      if (!taken) unused.push_back(k);
    }
    if (!unused.empty()) {
      ExpressionRecord r;
      r.expression = phrase(pair_cat, pair_col, unused[uniform(0, unused.size() - 1)],
                            std::bernoulli_distribution(0.5)(rng));
      r.target_ids = {};
      r.video = s.video();
      s.expressions.push_back(std::move(r));
    }
  }
  return s;
}

/// Re-derives every expression's referents from the motion programs and
/// compares them with the stored targets. Returns a description of the first
/// mismatch, or nothing when the scene is consistent.
inline std::optional<std::string> audit_scene(const Scene& s) {
  for (std::size_t e = 0; e < s.expressions.size(); ++e) {
    const auto& r = s.expressions[e];
    const ExpressionMeaning m = interpret(r.expression);
    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const auto& o = s.objects[i];
      // Classify motion from the rendered columns, not from the stored kind.
      std::size_t moving = 0;
      for (std::size_t t = 1; t < s.frames; ++t) moving += o.col(t) != o.col(t - 1);
      MotionKind observed = MotionKind::kStatic;
      if (moving > 0) {
        const std::size_t first = [&] {
          for (std::size_t t = 1; t < s.frames; ++t)
            if (o.col(t) != o.col(t - 1)) return t;
          return s.frames;
        }();
        std::size_t last = first;
        for (std::size_t t = 1; t < s.frames; ++t)
          if (o.col(t) != o.col(t - 1)) last = t;
        observed = 4 * (last - first + 1) <= s.frames ? MotionKind::kShortBurst
                                                       : MotionKind::kLongHorizon;
      }
      if (m.category && *m.category != o.category) continue;
      if (m.color && *m.color != o.color) continue;
      if (m.motion && *m.motion != observed) continue;
      expect.push_back(i);
    }
    if (expect != r.target_ids) {
      return "expression " + std::to_string(e) + " ('" + r.expression.text() + "') lists " +
             std::to_string(r.target_ids.size()) + " targets, audit finds " +
             std::to_string(expect.size());
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Dataset IO

inline constexpr std::array<char, 8> kSceneMagic{'M', 'S', 'C', 'O', 'P', 'E', '0', '1'};

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_f64(std::ostream& os, std::span<const double> v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}
inline std::uint64_t read_u64(std::istream& is, const std::string& what) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw InputError("truncated " + what);
  return v;
}
inline std::vector<double> read_f64(std::istream& is, std::size_t n, const std::string& what) {
  std::vector<double> v(n);
  if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8))) {
    throw InputError("truncated " + what);
  }
  return v;
}

}  // namespace detail

inline nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : s.objects) {
    nlohmann::json cols = nlohmann::json::array();
    for (std::size_t t = 0; t < s.frames; ++t) cols.push_back(o.col(t));
    objs.push_back({{"category", o.category},
                    {"color", o.color},
                    {"appearance", o.appearance},
                    {"motion",
                     {{"kind", std::string(motion_kind_name(o.motion.kind))},
                      {"onset", o.motion.onset},
                      {"duration", o.motion.duration},
                      {"direction", o.motion.direction},
                      {"distance", o.motion.distance}}},
                    {"row", o.row},
                    {"col0", o.col0},
                    {"size", o.size},
                    {"columns", cols}});
  }
  nlohmann::json exprs = nlohmann::json::array();
  for (const auto& r : s.expressions) exprs.push_back(to_json(r));
  return {{"seed", s.seed},   {"T", s.frames},        {"H", s.height}, {"W", s.width},
          {"C", s.channels},  {"objects", objs},      {"expressions", exprs}};
}

/// Writes scenes/{seed}.json and scenes/{seed}.bin under `root` and appends the
/// scene's expressions to root/expressions.jsonl.
inline void write_scene(const std::filesystem::path& root, const Scene& s) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "scenes");
  const std::string stem = std::to_string(s.seed);
  {
    std::ofstream js(root / "scenes" / (stem + ".json"));
    if (!js) throw InputError("cannot write " + (root / "scenes" / (stem + ".json")).string());
    js << scene_to_json(s).dump(1) << '\n';
  }
  {
    std::ofstream bin(root / "scenes" / (stem + ".bin"), std::ios::binary);
    if (!bin) throw InputError("cannot write " + (root / "scenes" / (stem + ".bin")).string());
    bin.write(kSceneMagic.data(), kSceneMagic.size());
    for (std::uint64_t v : {std::uint64_t{s.frames}, std::uint64_t{s.height},
                            std::uint64_t{s.width}, std::uint64_t{s.channels},
                            std::uint64_t{s.objects.size()}})
      detail::write_u64(bin, v);
    detail::write_f64(bin, s.features.data());
    detail::write_f64(bin, s.masks.data());
  }
  std::ofstream lines(root / "expressions.jsonl", std::ios::app);
  for (const auto& r : s.expressions) lines << to_json(r).dump() << '\n';
}

inline Scene read_scene(const std::filesystem::path& root, std::uint64_t seed) {
  const std::string stem = std::to_string(seed);
  const auto json_path = root / "scenes" / (stem + ".json");
  const auto bin_path = root / "scenes" / (stem + ".bin");
  std::ifstream js(json_path);
  if (!js) throw InputError("cannot open " + json_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(json_path.string() + ": " + e.what());
  }
  Scene s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    s.frames = j.at("T").get<std::size_t>();
    s.height = j.at("H").get<std::size_t>();
    s.width = j.at("W").get<std::size_t>();
    s.channels = j.at("C").get<std::size_t>();
    for (const auto& o : j.at("objects")) {
      SceneObject so;
      so.category = o.at("category").get<std::size_t>();
      so.color = o.at("color").get<std::size_t>();
      so.appearance = o.at("appearance").get<std::vector<double>>();
      const auto& m = o.at("motion");
      so.motion.kind = parse_motion_kind(m.at("kind").get<std::string>());
      so.motion.onset = m.at("onset").get<std::size_t>();
      so.motion.duration = m.at("duration").get<std::size_t>();
      so.motion.direction = m.at("direction").get<int>();
      so.motion.distance = m.at("distance").get<double>();
      so.row = o.at("row").get<std::size_t>();
      so.col0 = o.at("col0").get<std::size_t>();
      so.size = o.at("size").get<std::size_t>();
      s.objects.push_back(std::move(so));
    }
    for (const auto& e : j.at("expressions")) s.expressions.push_back(expression_from_json(e));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(json_path.string() + ": " + e.what());
  }

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw InputError("cannot open " + bin_path.string());
  std::array<char, 8> magic{};
  if (!bin.read(magic.data(), magic.size()) || magic != kSceneMagic) {
    throw InputError(bin_path.string() + ": bad magic header");
  }
  const std::string what = bin_path.string();
  const std::size_t t = detail::read_u64(bin, what), h = detail::read_u64(bin, what),
                    w = detail::read_u64(bin, what), c = detail::read_u64(bin, what),
                    n = detail::read_u64(bin, what);
  if (t != s.frames || h != s.height || w != s.width || c != s.channels ||
      n != s.objects.size()) {
    throw InputError(what + ": header disagrees with " + json_path.string());
  }
  s.features = Tensor({t, h, w, c}, detail::read_f64(bin, t * h * w * c, what));
  s.masks = Tensor({n, t, h, w}, detail::read_f64(bin, n * t * h * w, what));
  return s;
}

/// Seeds of every scene stored under root/scenes, ascending.
inline std::vector<std::uint64_t> list_scenes(const std::filesystem::path& root) {
  std::vector<std::uint64_t> seeds;
  const auto dir = root / "scenes";
  if (!std::filesystem::is_directory(dir)) throw InputError("no scenes directory in " + root.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    seeds.push_back(std::stoull(entry.path().stem().string()));
  }
  std::sort(seeds.begin(), seeds.end());
  return seeds;
}

// ---------------------------------------------------------------------------
// Metrics. Masks are [T x H x W] tensors of 0/1 values.

namespace detail {

inline void require_same_mask_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape() || a.rank() != 3) {
    throw DimensionError(std::string(what) + ": masks " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " must share a [T x H x W] shape");
  }
}

// Foreground pixels with a 4-neighbour outside the mask (or the grid edge).
inline std::vector<char> boundary(const double* m, std::size_t h, std::size_t w) {
  std::vector<char> b(h * w, 0);
  auto on = [&](long y, long x) {
    return y >= 0 && x >= 0 && y < static_cast<long>(h) && x < static_cast<long>(w) &&
           m[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] > 0.5;
  };
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x)
      if (on(y, x) && (!on(y - 1, x) || !on(y + 1, x) || !on(y, x - 1) || !on(y, x + 1)))
        b[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = 1;
  return b;
}

// Fraction of `from` boundary pixels within Chebyshev distance `tol` of a
// `to` boundary pixel.
inline double boundary_match(const std::vector<char>& from, const std::vector<char>& to,
                             std::size_t h, std::size_t w, long tol) {
  std::size_t total = 0, hit = 0;
  for (long y = 0; y < static_cast<long>(h); ++y) {
    for (long x = 0; x < static_cast<long>(w); ++x) {
      if (!from[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)]) continue;
      ++total;
      bool found = false;
      for (long dy = -tol; dy <= tol && !found; ++dy)
        for (long dx = -tol; dx <= tol && !found; ++dx) {
          const long yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
          found = to[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)] != 0;
        }
      hit += found;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

}  // namespace detail

/// Mean IoU over frames; a frame where both masks are empty scores 1.
inline double metric_J(const Tensor& pred, const Tensor& gt) {
  detail::require_same_mask_shape(pred, gt, "metric_J");
  const std::size_t t_len = pred.dim(0), hw = pred.dim(1) * pred.dim(2);
  double total = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = t * hw; i < (t + 1) * hw; ++i) {
      const bool p = pred[i] > 0.5, g = gt[i] > 0.5;
      inter += p && g;
      uni += p || g;
    }
    total += uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
  }
  return total / static_cast<double>(t_len);
}

/// Mean boundary F-measure over frames with a `tolerance`-pixel match radius.
/// Both empty scores 1, exactly one empty scores 0.
inline double metric_F(const Tensor& pred, const Tensor& gt, long tolerance = 1) {
  detail::require_same_mask_shape(pred, gt, "metric_F");
  const std::size_t t_len = pred.dim(0), h = pred.dim(1), w = pred.dim(2), hw = h * w;
  double total = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    const auto bp = detail::boundary(pred.data().data() + t * hw, h, w);
    const auto bg = detail::boundary(gt.data().data() + t * hw, h, w);
    const bool ep = std::none_of(bp.begin(), bp.end(), [](char c) { return c != 0; });
    const bool eg = std::none_of(bg.begin(), bg.end(), [](char c) { return c != 0; });
    if (ep && eg) {
      total += 1.0;
      continue;
    }
    if (ep || eg) continue;
    const double precision = detail::boundary_match(bp, bg, h, w, tolerance);
    const double recall = detail::boundary_match(bg, bp, h, w, tolerance);
    if (precision + recall > 0.0) total += 2.0 * precision * recall / (precision + recall);
  }
  return total / static_cast<double>(t_len);
}

}  // namespace mscope
