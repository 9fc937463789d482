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

#ifndef MFUR_EVIDENTIAL_HPP_
#define MFUR_EVIDENTIAL_HPP_

#include <cstddef>
#include <random>
#include <string>

#include "mfur/layers.hpp"
#include "mfur/tensor.hpp"

namespace mfur {

// Per-token evidence predictor: Linear -> GELU -> Linear, then Softplus.
struct EvidentialHead {
  LinearLayer fc1;
  LinearLayer fc2;

  // Hidden width is max(dim / 2, 8).
  static EvidentialHead create(std::size_t dim, std::size_t num_classes,
                               std::mt19937_64& rng);
  static std::size_t hidden_width(std::size_t dim);
  std::size_t num_classes() const { return fc2.out_features(); }
  void collect(const std::string& prefix, ParamList& out) const;
};

// Dirichlet parameters derived from non-negative evidence.
//   alpha = e + 1, S = sum_c alpha, sigma_i = C / S, sigma = mean_i sigma_i
struct DirichletState {
  Tensor evidence;            // [B x N x C]
  Tensor alpha;               // [B x N x C]
  Tensor strength;            // [B x N]
  Tensor token_uncertainty;   // [B x N]
  Tensor global_uncertainty;  // [B]
  std::size_t num_classes = 0;
};

// tokens: [B x N x D] -> evidence [B x N x C], elementwise >= 0.
Tensor compute_evidence(const Tensor& tokens, const EvidentialHead& head);

// Throws ContractError on negative evidence.
DirichletState dirichlet_state(const Tensor& evidence);

// alpha / S; every token row sums to one.
Tensor expected_probs(const DirichletState& state);

// Row-wise softmax over the class axis of [B x C] logits.
Tensor softmax_predict(const Tensor& logits);

}  // namespace mfur

#endif  // MFUR_EVIDENTIAL_HPP_
