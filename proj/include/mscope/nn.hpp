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
#include <string>

#include "mscope/parameter.hpp"

namespace mscope {

/// softmax(q k^T / sqrt(C)) v. Rank-3 operands attend batch-wise.
inline Var attention(const Var& q, const Var& k, const Var& v) {
  const std::size_t c = q.shape().back();
  if (k.shape().back() != c) {
    throw DimensionError("attention: query channels " + shape_string(q.shape()) +
                         " vs key channels " + shape_string(k.shape()));
  }
  if (k.shape()[k.rank() - 2] != v.shape()[v.rank() - 2]) {
    throw DimensionError("attention: " + shape_string(k.shape()) + " keys vs " +
                         shape_string(v.shape()) + " values");
  }
  Var scores = scale(matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(c)));
  return matmul(softmax(scores, scores.rank() - 1), v);
}

/// y = x W (+ b) on the last axis of a rank-1, -2 or -3 input.
struct Linear {
  Var weight;  // [in x out]
  Var bias;    // [out], undefined without bias

  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out,
         Rng& rng, bool with_bias = true, double gain = 1.0) {
    weight = params.add(name + ".weight",
                        random_normal({in, out}, rng, gain / std::sqrt(static_cast<double>(in))));
    if (with_bias) bias = params.add(name + ".bias", Tensor({out}));
  }

  Var operator()(const Var& x) const {
    Var y;
    if (x.rank() == 1) {
      y = reshape(matmul(reshape(x, {1, x.dim(0)}), weight), {weight.dim(1)});
    } else {
      y = matmul(x, weight);
    }
    return bias.defined() ? add_bias(y, bias) : y;
  }
};

struct LayerNorm {
  Var gain, shift;

  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& name, std::size_t channels) {
    gain = params.add(name + ".gain", Tensor({channels}, 1.0));
    shift = params.add(name + ".shift", Tensor({channels}));
  }

  Var operator()(const Var& x) const { return layer_norm(x, gain, shift); }
};

/// Pre-norm two-layer GELU MLP. Returns the residual branch only.
struct FeedForward {
  LayerNorm norm;
  Linear up, down;

  FeedForward() = default;
  FeedForward(ParameterSet& params, const std::string& name, std::size_t channels, Rng& rng,
              std::size_t expansion = 2)
      : norm(params, name + ".norm", channels),
        up(params, name + ".up", channels, expansion * channels, rng),
        down(params, name + ".down", expansion * channels, channels, rng) {}

  Var operator()(const Var& x) const { return down(gelu(up(norm(x)))); }
};

/// Zeroes a projection in place; used by residual-sanity tests and ablations.
inline void zero_linear(Linear& l) {
  for (double& v : l.weight.mutable_value().mutable_data()) v = 0.0;
  if (l.bias.defined())
    for (double& v : l.bias.mutable_value().mutable_data()) v = 0.0;
}

}  // namespace mscope
