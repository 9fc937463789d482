// Copyright 2026 The MFUR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MFUR_LAYERS_HPP_
#define MFUR_LAYERS_HPP_

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mfur/tensor.hpp"

namespace mfur {

// Named parameter handles in a stable, deterministic order.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

// Gaussian draws scaled by 1/sqrt(fan_in).
Tensor init_weight(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

struct LinearLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out], may be undefined

  static LinearLayer create(std::size_t in, std::size_t out, std::mt19937_64& rng,
                            bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNormLayer {
  Tensor gamma;  // undefined when not affine
  Tensor beta;
  double eps = 1e-5;

  static LayerNormLayer create(std::size_t dim, bool affine);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Inverted dropout. Identity when rate == 0 or rng is null.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64* rng);

// Nearest-neighbour resampling of a stack of [n x h x w] planes to
// [n x out_h x out_w]; output cell (y, x) reads source row
// floor((y + 0.5) * h / out_h), likewise for columns.
std::vector<double> resample_nearest(const std::vector<double>& planes, std::size_t n,
                                     std::size_t h, std::size_t w, std::size_t out_h,
                                     std::size_t out_w);

}  // namespace mfur

#endif  // MFUR_LAYERS_HPP_
