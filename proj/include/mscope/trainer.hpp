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

// Training loop, evaluation and run artifacts.

#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mscope/benchmark.hpp"
#include "mscope/losses.hpp"
#include "mscope/model.hpp"

namespace mscope {

struct SeedRange {
  std::uint64_t first = 0;
  std::uint64_t last = 0;  // inclusive

  std::size_t count() const { return static_cast<std::size_t>(last - first + 1); }
};

struct TrainConfig {
  std::size_t N_s = 8;
  std::size_t N_m = 4;
  std::size_t N_h = 3;
  std::size_t N_n = 100;
  /// Warmup before the contrastive term; negative means 20% of `steps`.
  long long N_i = -1;
  double beta = 0.2;
  double tau = 0.07;
  double lambda_con = 0.5;
  std::size_t L = 3;
  std::size_t C = 32;
  std::size_t pos_channels = 16;
  std::size_t projection_dim = 32;
  /// Std of the word-embedding init.
  double embedding_std = 0.2;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double clip_norm = 1.0;
  std::size_t steps = 2000;
  std::size_t eval_every = 500;
  std::uint64_t seed = 0;
  bool DS = true;
  bool HMP = true;
  bool CL = true;
  bool hungarian = true;
  QueryVariant query = QueryVariant::kDecoupled;
  LossWeights weights;
  BenchmarkConfig benchmark;
  SeedRange train_seeds{0, 199};
  SeedRange val_seeds{10000, 10039};
  /// Optional on-disk datasets; generated in memory when empty.
  std::string train_dir, val_dir;

  std::size_t warmup() const {
    return N_i >= 0 ? static_cast<std::size_t>(N_i) : steps / 5;
  }
  QueryVariant effective_query() const { return DS ? query : QueryVariant::kSentenceOnly; }
  std::size_t effective_stages() const { return HMP ? N_h : 0; }
  bool contrastive() const { return CL; }

  void validate() const {
    if (N_s == 0 || N_m == 0 || L == 0 || C == 0 || steps == 0 || eval_every == 0) {
      throw InputError("train config: N_s, N_m, L, C, steps and eval_every must be positive");
    }
    if (C % 4 != 0 || pos_channels % 4 != 0) {
      throw InputError("train config: C and pos_channels must be multiples of 4");
    }
    if (!(beta >= 0.0 && beta <= 1.0)) throw InputError("train config: beta outside [0, 1]");
    if (!(tau > 0.0)) throw InputError("train config: tau must be positive");
    if (!(embedding_std > 0.0)) throw InputError("train config: embedding_std must be positive");
    if (!(lambda_con >= 0.0)) throw InputError("train config: lambda_con must be non-negative");
    if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(clip_norm >= 0.0)) {
      throw InputError("train config: invalid optimizer settings");
    }
    if (train_seeds.last < train_seeds.first || val_seeds.last < val_seeds.first) {
      throw InputError("train config: empty seed range");
    }
    benchmark.validate();
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.vocab = Vocabulary::standard().size();
    m.channels = C;
    m.image_channels = benchmark.channels;
    m.pos_channels = pos_channels;
    m.static_queries = N_s;
    m.motion_queries = N_m;
    m.hmp_blocks = L;
    m.hmp_stages = effective_stages();
    m.projection_dim = projection_dim;
    m.embedding_std = embedding_std;
    m.query_variant = effective_query();
    m.link_mode = hungarian ? LinkMode::kHungarian : LinkMode::kIdentity;
    return m;
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"N_s", c.N_s},
          {"N_m", c.N_m},
          {"N_h", c.N_h},
          {"N_n", c.N_n},
          {"N_i", c.N_i},
          {"beta", c.beta},
          {"tau", c.tau},
          {"lambda_con", c.lambda_con},
          {"L", c.L},
          {"C", c.C},
          {"pos_channels", c.pos_channels},
          {"projection_dim", c.projection_dim},
          {"embedding_std", c.embedding_std},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"clip_norm", c.clip_norm},
          {"steps", c.steps},
          {"eval_every", c.eval_every},
          {"seed", c.seed},
          {"DS", c.DS},
          {"HMP", c.HMP},
          {"CL", c.CL},
          {"hungarian", c.hungarian},
          {"query", std::string(query_variant_name(c.query))},
          {"lambda_cls", c.weights.cls},
          {"lambda_dice", c.weights.dice},
          {"lambda_mask", c.weights.mask},
          {"benchmark", to_json(c.benchmark)},
          {"train_seeds", {c.train_seeds.first, c.train_seeds.last}},
          {"val_seeds", {c.val_seeds.first, c.val_seeds.last}},
          {"train_dir", c.train_dir},
          {"val_dir", c.val_dir}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    static const char* const known[] = {
        "N_s", "N_m", "N_h", "N_n", "N_i", "beta", "tau", "lambda_con", "L", "C", "pos_channels",
        "projection_dim", "embedding_std", "learning_rate", "momentum", "clip_norm", "steps", "eval_every", "seed",
        "DS", "HMP", "CL", "hungarian", "query", "lambda_cls", "lambda_dice", "lambda_mask",
        "benchmark", "train_seeds", "val_seeds", "train_dir", "val_dir", "T", "H", "W"};
    for (const auto& [key, _] : j.items()) {
      if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
        throw InputError("train config: unknown field '" + key + "'");
      }
    }
    c.N_s = j.value("N_s", c.N_s);
    c.N_m = j.value("N_m", c.N_m);
    c.N_h = j.value("N_h", c.N_h);
    c.N_n = j.value("N_n", c.N_n);
    c.N_i = j.value("N_i", c.N_i);
    c.beta = j.value("beta", c.beta);
    c.tau = j.value("tau", c.tau);
    c.lambda_con = j.value("lambda_con", c.lambda_con);
    c.L = j.value("L", c.L);
    c.C = j.value("C", c.C);
    c.pos_channels = j.value("pos_channels", c.pos_channels);
    c.projection_dim = j.value("projection_dim", c.projection_dim);
    c.embedding_std = j.value("embedding_std", c.embedding_std);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.steps = j.value("steps", c.steps);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.seed = j.value("seed", c.seed);
    c.DS = j.value("DS", c.DS);
    c.HMP = j.value("HMP", c.HMP);
    c.CL = j.value("CL", c.CL);
    c.hungarian = j.value("hungarian", c.hungarian);
    if (j.contains("query")) c.query = parse_query_variant(j.at("query").get<std::string>());
    c.weights.cls = j.value("lambda_cls", c.weights.cls);
    c.weights.dice = j.value("lambda_dice", c.weights.dice);
    c.weights.mask = j.value("lambda_mask", c.weights.mask);
    if (j.contains("benchmark")) c.benchmark = benchmark_config_from_json(j.at("benchmark"));
    c.benchmark.frames = j.value("T", c.benchmark.frames);
    c.benchmark.height = j.value("H", c.benchmark.height);
    c.benchmark.width = j.value("W", c.benchmark.width);
    auto range = [&](const char* key, SeedRange& r) {
      if (!j.contains(key)) return;
      const auto v = j.at(key).get<std::vector<std::uint64_t>>();
      if (v.size() != 2) throw InputError(std::string("train config: ") + key + " must be [first, last]");
      r = {v[0], v[1]};
    };
    range("train_seeds", c.train_seeds);
    range("val_seeds", c.val_seeds);
    c.train_dir = j.value("train_dir", c.train_dir);
    c.val_dir = j.value("val_dir", c.val_dir);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config " + path.string());
  try {
    return train_config_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Datasets

struct Sample {
  std::size_t scene = 0;
  std::size_t expression = 0;
  std::vector<std::size_t> targets;         // scene-local object ids
  std::vector<std::size_t> static_matches;  // objects matching category and colour
  std::vector<std::size_t> slots;           // global bank slots of `targets`
  bool long_horizon = false;
  Tensor target_masks;  // [K x T x HW], empty without targets
  Tensor static_masks;  // [K' x T x HW]
};

struct Dataset {
  std::vector<Scene> scenes;
  std::vector<Sample> samples;
  std::vector<std::size_t> slot_category, slot_video;
  std::vector<std::size_t> scene_offset;

  std::size_t slots() const { return slot_category.size(); }
};

namespace detail {

inline Tensor stack_masks(const Scene& s, const std::vector<std::size_t>& ids) {
  if (ids.empty()) return Tensor();
  const std::size_t n = s.frames * s.height * s.width;
  std::vector<double> out(ids.size() * n);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(s.masks.data().data() + ids[i] * n, n, out.data() + i * n);
  return Tensor::adopt({ids.size(), s.frames, s.height * s.width}, std::move(out));
}

}  // namespace detail

inline Dataset build_dataset(std::vector<Scene> scenes) {
  Dataset d;
  d.scenes = std::move(scenes);
  for (std::size_t si = 0; si < d.scenes.size(); ++si) {
    const Scene& s = d.scenes[si];
    d.scene_offset.push_back(d.slot_category.size());
    for (const auto& o : s.objects) {
      d.slot_category.push_back(o.category);
      d.slot_video.push_back(si);
    }
    for (std::size_t e = 0; e < s.expressions.size(); ++e) {
      const auto& r = s.expressions[e];
      for (std::size_t id : r.target_ids) {
        if (id >= s.objects.size()) {
          throw InputError("scene " + s.video() + ": target id " + std::to_string(id) +
                           " out of range");
        }
      }
      Sample smp;
      smp.scene = si;
      smp.expression = e;
      smp.targets = r.target_ids;
      smp.static_matches = s.referents(r.expression, /*static_only=*/true);
      for (std::size_t id : smp.targets) smp.slots.push_back(d.scene_offset.back() + id);
      const ExpressionMeaning m = interpret(r.expression);
      smp.long_horizon = !smp.targets.empty() && m.motion == MotionKind::kLongHorizon;
      smp.target_masks = detail::stack_masks(s, smp.targets);
      smp.static_masks = detail::stack_masks(s, smp.static_matches);
      d.samples.push_back(std::move(smp));
    }
  }
  return d;
}

inline Dataset generate_dataset(SeedRange seeds, const BenchmarkConfig& cfg) {
  std::vector<Scene> scenes;
  for (std::uint64_t s = seeds.first; s <= seeds.last; ++s) scenes.push_back(generate_scene(s, cfg));
  return build_dataset(std::move(scenes));
}

inline Dataset read_dataset(const std::filesystem::path& root) {
  std::vector<Scene> scenes;
  for (std::uint64_t seed : list_scenes(root)) scenes.push_back(read_scene(root, seed));
  if (scenes.empty()) throw InputError("no scenes under " + root.string());
  return build_dataset(std::move(scenes));
}

// ---------------------------------------------------------------------------
// Metrics over a dataset

struct LabelledToken {
  std::size_t object = 0;
  std::vector<double> vector;  // unit norm
};

/// Mean intra-object cosine similarity minus mean inter-object cosine
/// similarity. Needs at least two objects with two tokens each.
inline double separation_metric(const std::vector<LabelledToken>& tokens) {
  std::map<std::size_t, std::size_t> counts;
  for (const auto& t : tokens) ++counts[t.object];
  std::size_t eligible = 0;
  for (const auto& [obj, n] : counts) eligible += n >= 2;
  if (eligible < 2) {
    throw InputError("separation_metric: need two objects with at least two tokens each, got " +
                     std::to_string(eligible));
  }
  double intra = 0.0, inter = 0.0;
  std::size_t ni = 0, nx = 0;
  for (std::size_t a = 0; a < tokens.size(); ++a) {
    for (std::size_t b = a + 1; b < tokens.size(); ++b) {
      const auto& u = tokens[a].vector;
      const auto& v = tokens[b].vector;
      if (u.size() != v.size()) throw DimensionError("separation_metric: token length mismatch");
      double d = 0.0, nu = 0.0, nv = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) {
        d += u[k] * v[k];
        nu += u[k] * u[k];
        nv += v[k] * v[k];
      }
      const double cos = (nu > 0.0 && nv > 0.0) ? d / std::sqrt(nu * nv) : 0.0;
      if (tokens[a].object == tokens[b].object) {
        intra += cos;
        ++ni;
      } else {
        inter += cos;
        ++nx;
      }
    }
  }
  return (ni ? intra / static_cast<double>(ni) : 0.0) - (nx ? inter / static_cast<double>(nx) : 0.0);
}

struct EvalMetrics {
  double J = 0.0, F = 0.0, JF = 0.0;
  double accuracy = 0.0;
  double long_accuracy = 0.0;
  double separation = std::numeric_limits<double>::quiet_NaN();
  double loss_frame = 0.0, loss_video = 0.0;
};

/// Binary union mask [T x H x W] of the selected queries.
inline Tensor predicted_mask(const VideoPrediction& p, std::size_t h, std::size_t w) {
  const std::size_t t_len = p.probabilities.dim(1), hw = p.probabilities.dim(2);
  std::vector<double> out(t_len * hw, 0.0);
  for (std::size_t q : p.selected)
    for (std::size_t i = 0; i < t_len * hw; ++i)
      if (p.probabilities[q * t_len * hw + i] > 0.5) out[i] = 1.0;
  return Tensor::adopt({t_len, h, w}, std::move(out));
}

namespace detail {

inline double mask_iou(std::span<const double> a, std::span<const double> b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] > 0.5, y = b[i] > 0.5;
    inter += x && y;
    uni += x || y;
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace detail

/// Was the top-scoring query both selected and best aligned with a target?
/// Expressions with no referent count as correct when nothing is selected.
inline bool identified(const VideoPrediction& p, const Scene& s,
                       const std::vector<std::size_t>& targets) {
  if (targets.empty()) return p.selected.empty();
  if (p.selected.empty()) return false;
  std::size_t top = 0;
  for (std::size_t q = 1; q < p.scores.size(); ++q)
    if (p.scores[q] > p.scores[top]) top = q;
  if (p.scores[top] <= 0.5) return false;
  const std::size_t n = s.frames * s.height * s.width;
  std::vector<double> bin(n);
  for (std::size_t i = 0; i < n; ++i) bin[i] = p.probabilities[top * n + i] > 0.5 ? 1.0 : 0.0;
  std::size_t best = 0;
  double best_iou = -1.0;
  for (std::size_t o = 0; o < s.objects.size(); ++o) {
    const double iou = detail::mask_iou(bin, s.masks.data().subspan(o * n, n));
    if (iou > best_iou) {
      best_iou = iou;
      best = o;
    }
  }
  return best_iou > 0.0 && std::find(targets.begin(), targets.end(), best) != targets.end();
}

inline EvalMetrics evaluate(const Model& model, const Dataset& data, const LossWeights& w = {}) {
  NoGradGuard ng;
  EvalMetrics m;
  std::size_t n = 0, n_long = 0, correct = 0, correct_long = 0;
  std::vector<LabelledToken> tokens;
  for (const auto& smp : data.samples) {
    const Scene& s = data.scenes[smp.scene];
    const ForwardResult r = model.forward(s.features, s.expressions[smp.expression].expression);
    const VideoPrediction p = predict_video_masks(r.video, r.perception.mask_features);
    const Tensor pred = predicted_mask(p, s.height, s.width);
    const Tensor gt = s.union_mask(smp.targets);
    m.J += metric_J(pred, gt);
    m.F += metric_F(pred, gt);
    const bool ok = identified(p, s, smp.targets);
    correct += ok;
    ++n;
    if (smp.long_horizon) {
      ++n_long;
      correct_long += ok;
    }
    m.loss_frame += frame_loss(r.perception.class_logits, r.frame_mask_logits, smp.static_masks, w).item();
    const SetLoss lv = video_loss(r.video.score_logits, r.video_mask_logits, smp.target_masks, w);
    m.loss_video += lv.loss.item();
    if (!smp.targets.empty()) {
      std::size_t best_q = kUnmatched;
      for (std::size_t q = 0; q < lv.match.size(); ++q)
        if (lv.match[q] != kUnmatched && (best_q == kUnmatched || lv.cost[q] < lv.cost[best_q])) best_q = q;
      const Var z = model.project(select_rows(r.video.tokens, {best_q}));
      tokens.push_back({smp.slots[lv.match[best_q]],
                        std::vector<double>(z.value().data().begin(), z.value().data().end())});
    }
  }
  const double dn = static_cast<double>(n);
  m.J /= dn;
  m.F /= dn;
  m.JF = 0.5 * (m.J + m.F);
  m.accuracy = static_cast<double>(correct) / dn;
  m.long_accuracy = n_long ? static_cast<double>(correct_long) / static_cast<double>(n_long) : 0.0;
  m.loss_frame /= dn;
  m.loss_video /= dn;
  try {
    m.separation = separation_metric(tokens);
  } catch (const InputError&) {
  }
  return m;
}

// ---------------------------------------------------------------------------
// Training

struct ReportRow {
  std::size_t step = 0;
  EvalMetrics eval;
  /// Mean training losses since the previous row; loss_con carries lambda_con.
  double loss_frame = 0.0, loss_video = 0.0, loss_con = 0.0, loss_total = 0.0;
};

struct RunReport {
  TrainConfig config;
  std::vector<ReportRow> rows;
  nlohmann::json bank;

  const ReportRow& final_row() const {
    if (rows.empty()) throw InputError("run report has no rows");
    return rows.back();
  }
};

inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string report_csv(const RunReport& r) {
  std::string out =
      "step,J,F,JF,accuracy,long_accuracy,separation,val_loss_frame,val_loss_video,"
      "loss_frame,loss_video,loss_con,loss_total\n";
  for (const auto& row : r.rows) {
    const auto& e = row.eval;
    out += std::to_string(row.step);
    for (double v : {e.J, e.F, e.JF, e.accuracy, e.long_accuracy, e.separation, e.loss_frame,
                     e.loss_video, row.loss_frame, row.loss_video, row.loss_con, row.loss_total})
      out += "," + format_real(v);
    out += "\n";
  }
  return out;
}

struct StepLosses {
  Var total;
  double frame = 0.0, video = 0.0, con = 0.0;
  std::vector<double> anchor;  // projected anchor, empty without targets
  std::size_t slot = 0;
};

/// Hooks for tests; called before each optimizer step. `loss` rebuilds the
/// step objective from the current parameters without consuming randomness.
struct TrainHooks {
  std::function<void(std::size_t step, Model&, const Sample&, const std::function<StepLosses()>& loss)>
      before_step;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, Dataset train, Dataset val)
      : cfg_(std::move(cfg)),
        train_(std::move(train)),
        val_(std::move(val)),
        model_(cfg_.model_config(), cfg_.seed),
        bank_(cfg_.projection_dim, train_.slot_category, train_.slot_video),
        sample_rng_(cfg_.seed * 0x9E3779B97F4A7C15ull + 1),
        negative_rng_(cfg_.seed * 0x9E3779B97F4A7C15ull + 2) {
    cfg_.validate();
    if (train_.samples.empty() || val_.samples.empty()) throw InputError("trainer: empty dataset");
  }

  Model& model() { return model_; }
  const MemoryBank& bank() const { return bank_; }
  const TrainConfig& config() const { return cfg_; }

  /// Builds the total objective for one sample at `step`. Negatives are drawn
  /// from the bank as it stood before this step.
  StepLosses step_loss(const Sample& smp, std::size_t step, Rng& negative_rng) const {
    const Scene& s = train_.scenes[smp.scene];
    const ForwardResult r = model_.forward(s.features, s.expressions[smp.expression].expression);
    StepLosses out;
    Var lf = frame_loss(r.perception.class_logits, r.frame_mask_logits, smp.static_masks, cfg_.weights);
    const SetLoss lv = video_loss(r.video.score_logits, r.video_mask_logits, smp.target_masks, cfg_.weights);
    out.frame = lf.item();
    out.video = lv.loss.item();
    out.total = add(lf, lv.loss);
    if (smp.targets.empty()) return out;

    std::vector<std::size_t> matched;
    std::size_t best_q = kUnmatched;
    for (std::size_t q = 0; q < lv.match.size(); ++q) {
      if (lv.match[q] == kUnmatched) continue;
      matched.push_back(q);
      if (best_q == kUnmatched || lv.cost[q] < lv.cost[best_q]) best_q = q;
    }
    const std::size_t k = matched.size();
    Var pooled = scale(sum_axis(select_rows(r.video.tokens, matched), 0), 1.0 / static_cast<double>(k));
    Var anchor = reshape(model_.project(reshape(pooled, {1, cfg_.C})), {cfg_.projection_dim});
    out.slot = smp.slots[lv.match[best_q]];
    out.anchor.assign(anchor.value().data().begin(), anchor.value().data().end());

    if (cfg_.contrastive() && step >= cfg_.warmup() && bank_.initialized(out.slot)) {
      std::vector<std::size_t> negatives;
      for (std::size_t id : bank_.sample_negatives(out.slot, cfg_.N_n, negative_rng))
        if (std::find(smp.slots.begin(), smp.slots.end(), id) == smp.slots.end()) negatives.push_back(id);
      if (!negatives.empty()) {
        Var lc = scale(contrastive_loss(anchor, bank_.row(out.slot), bank_.gather(negatives), cfg_.tau),
                       cfg_.lambda_con);
        out.con = lc.item();
        out.total = add(out.total, lc);
      }
    }
    return out;
  }

  RunReport run(const TrainHooks& hooks = {}) {
    RunReport report;
    report.config = cfg_;
    SgdMomentum opt(cfg_.learning_rate, cfg_.momentum, cfg_.clip_norm);
    std::uniform_int_distribution<std::size_t> pick(0, train_.samples.size() - 1);
    ReportRow acc;
    std::size_t since = 0;
    for (std::size_t step = 0; step < cfg_.steps; ++step) {
      const Sample& smp = train_.samples[pick(sample_rng_)];
      if (hooks.before_step) {
        Rng probe = negative_rng_;
        hooks.before_step(step, model_, smp, [&, step, probe]() {
          Rng r = probe;
          return step_loss(smp, step, r);
        });
      }
      StepLosses l = step_loss(smp, step, negative_rng_);
      const double total = l.total.item();
      if (!std::isfinite(total)) {
        throw NumericalError("non-finite loss at step " + std::to_string(step));
      }
      model_.parameters().zero_grad();
      backward(l.total);
      opt.step(model_.parameters());
      if (!l.anchor.empty()) bank_.update(l.anchor, l.slot, cfg_.beta);

      acc.loss_frame += l.frame;
      acc.loss_video += l.video;
      acc.loss_con += l.con;
      acc.loss_total += total;
      ++since;
      const std::size_t done = step + 1;
      if (done % cfg_.eval_every == 0 || done == cfg_.steps) {
        const double d = static_cast<double>(since);
        ReportRow row;
        row.step = done;
        row.loss_frame = acc.loss_frame / d;
        row.loss_video = acc.loss_video / d;
        row.loss_con = acc.loss_con / d;
        row.loss_total = acc.loss_total / d;
        row.eval = evaluate(model_, val_, cfg_.weights);
        report.rows.push_back(row);
        acc = {};
        since = 0;
      }
    }
    report.bank = bank_.to_json();
    return report;
  }

 private:
  TrainConfig cfg_;
  Dataset train_, val_;
  Model model_;
  MemoryBank bank_;
  Rng sample_rng_, negative_rng_;
};

inline Dataset load_split(const std::string& dir, SeedRange seeds, const BenchmarkConfig& b) {
  return dir.empty() ? generate_dataset(seeds, b) : read_dataset(dir);
}

/// Trains `cfg` on its configured splits; writes the run into `out` when given.
inline RunReport train(const TrainConfig& cfg, const std::filesystem::path& out = {});

/// Writes report.csv, bank.json, config.json and model.bin into `out`.
inline void write_run(const std::filesystem::path& out, const RunReport& r, const Model& model) {
  std::filesystem::create_directories(out);
  {
    std::ofstream os(out / "report.csv");
    if (!os) throw InputError("cannot write " + (out / "report.csv").string());
    os << report_csv(r);
  }
  std::ofstream(out / "bank.json") << r.bank.dump() << '\n';
  std::ofstream(out / "config.json") << to_json(r.config).dump(2) << '\n';
  model.save(out / "model.bin");
}

inline RunReport train(const TrainConfig& cfg, const std::filesystem::path& out) {
  cfg.validate();
  Trainer t(cfg, load_split(cfg.train_dir, cfg.train_seeds, cfg.benchmark),
            load_split(cfg.val_dir, cfg.val_seeds, cfg.benchmark));
  RunReport r = t.run();
  if (!out.empty()) write_run(out, r, t.model());
  return r;
}

}  // namespace mscope
