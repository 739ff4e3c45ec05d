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

// Per-object centroid memory bank and the object-wise InfoNCE loss.
//
// Bank rows are constants maintained by EMA; gradients reach only the anchor
// and the projection head that produced it.

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "json.hpp"
#include "mscope/nn.hpp"

namespace mscope {

/// Two-layer MLP followed by L2 normalization.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(ParameterSet& params, const std::string& name, std::size_t channels,
                 std::size_t out_channels, Rng& rng, bool linear_only = false)
      : linear_only_(linear_only) {
    if (linear_only) {
      second_ = Linear(params, name + ".fc", channels, out_channels, rng, false);
    } else {
      first_ = Linear(params, name + ".fc1", channels, channels, rng);
      second_ = Linear(params, name + ".fc2", channels, out_channels, rng);
    }
  }

  Var operator()(const Var& v) const {
    Var h = linear_only_ ? v : gelu(first_(v));
    return l2_normalize(second_(h));
  }

 private:
  bool linear_only_ = false;
  Linear first_, second_;
};

struct BankEntry {
  std::size_t target_id = 0;
  std::size_t category = 0;
  std::size_t video = 0;
  std::vector<double> vector;
};

class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t dim, std::vector<std::size_t> categories, std::vector<std::size_t> videos)
      : dim_(dim),
        category_(std::move(categories)),
        video_(std::move(videos)),
        initialized_(category_.size(), 0),
        rows_(category_.size() * dim, 0.0) {
    if (category_.size() != video_.size()) {
      throw DimensionError("MemoryBank: category and video lists differ in length");
    }
  }

  std::size_t slots() const { return category_.size(); }
  std::size_t dim() const { return dim_; }
  bool initialized(std::size_t id) const { return initialized_.at(id) != 0; }
  std::size_t category(std::size_t id) const { return category_.at(id); }
  std::size_t video(std::size_t id) const { return video_.at(id); }

  std::span<const double> row(std::size_t id) const {
    check_id(id);
    return std::span<const double>(rows_).subspan(id * dim_, dim_);
  }

  /// EMA update M <- beta M + (1 - beta) anchor. The first touch copies the
  /// anchor. With `renormalize` the slot is projected back to unit norm.
  void update(std::span<const double> anchor, std::size_t id, double beta,
              bool renormalize = true) {
    check_id(id);
    if (anchor.size() != dim_) {
      throw DimensionError("MemoryBank::update: anchor of length " +
                           std::to_string(anchor.size()) + ", bank dim " + std::to_string(dim_));
    }
    if (!(beta >= 0.0 && beta <= 1.0)) throw InputError("MemoryBank::update: beta outside [0, 1]");
    double* m = rows_.data() + id * dim_;
    if (!initialized_[id]) {
      std::copy(anchor.begin(), anchor.end(), m);
      initialized_[id] = 1;
    } else {
      for (std::size_t j = 0; j < dim_; ++j) m[j] = beta * m[j] + (1.0 - beta) * anchor[j];
    }
    if (renormalize) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) s += m[j] * m[j];
      const double n = std::sqrt(s);
      if (n > 0.0)
        for (std::size_t j = 0; j < dim_; ++j) m[j] /= n;
    }
  }

  /// Up to `count` initialized slots other than `anchor_id`, drawn tier by
  /// tier: same category and video, then same category, then the rest.
  /// Uniform within a tier. Empty when nothing is eligible.
  std::vector<std::size_t> sample_negatives(std::size_t anchor_id, std::size_t count,
                                            Rng& rng) const {
    check_id(anchor_id);
    std::vector<std::size_t> tiers[3];
    for (std::size_t i = 0; i < slots(); ++i) {
      if (i == anchor_id || !initialized_[i]) continue;
      const bool same_cat = category_[i] == category_[anchor_id];
      const bool same_vid = video_[i] == video_[anchor_id];
      tiers[same_cat && same_vid ? 0 : (same_cat ? 1 : 2)].push_back(i);
    }
    std::vector<std::size_t> out;
    for (auto& tier : tiers) {
      if (out.size() >= count) break;
      const std::size_t need = count - out.size();
      if (tier.size() > need) {
        // Partial Fisher-Yates: the first `need` entries are a uniform draw.
        for (std::size_t i = 0; i < need; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, tier.size() - 1);
          std::swap(tier[i], tier[pick(rng)]);
        }
        tier.resize(need);
      }
      out.insert(out.end(), tier.begin(), tier.end());
    }
    return out;
  }

  /// Rows of `ids` stacked as [n x dim]; empty tensor for an empty list.
  Tensor gather(const std::vector<std::size_t>& ids) const {
    if (ids.empty()) return Tensor();
    std::vector<double> data;
    data.reserve(ids.size() * dim_);
    for (std::size_t id : ids) {
      auto r = row(id);
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({ids.size(), dim_}, std::move(data));
  }

  std::vector<BankEntry> snapshot() const {
    std::vector<BankEntry> out;
    for (std::size_t i = 0; i < slots(); ++i) {
      if (!initialized_[i]) continue;
      auto r = row(i);
      out.push_back({i, category_[i], video_[i], std::vector<double>(r.begin(), r.end())});
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : snapshot()) {
      arr.push_back({{"target_id", e.target_id},
                     {"category", e.category},
                     {"video", e.video},
                     {"vector", e.vector}});
    }
    return arr;
  }

 private:
  void check_id(std::size_t id) const {
    if (id >= slots()) {
      throw std::out_of_range("memory bank slot " + std::to_string(id) + " out of range (" +
                              std::to_string(slots()) + " slots)");
    }
  }

  std::size_t dim_ = 0;
  std::vector<std::size_t> category_, video_;
  std::vector<char> initialized_;
  std::vector<double> rows_;
};

/// -log( e^{a.m+/tau} / (e^{a.m+/tau} + sum e^{a.m-/tau}) ).
inline Var contrastive_loss(const Var& anchor, std::span<const double> positive,
                            const Tensor& negatives, double tau) {
  return info_nce(anchor, Tensor({positive.size()}, std::vector<double>(positive.begin(), positive.end())),
                  negatives, tau);
}

}  // namespace mscope
