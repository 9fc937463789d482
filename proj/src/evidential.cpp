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

#include "mfur/evidential.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "mfur/errors.hpp"
#include "mfur/ops.hpp"

namespace mfur {

std::size_t EvidentialHead::hidden_width(std::size_t dim) {
  return std::max<std::size_t>(dim / 2, 8);
}

EvidentialHead EvidentialHead::create(std::size_t dim, std::size_t num_classes,
                                      std::mt19937_64& rng) {
  const std::size_t hidden = hidden_width(dim);
  return EvidentialHead{LinearLayer::create(dim, hidden, rng),
                        LinearLayer::create(hidden, num_classes, rng)};
}

void EvidentialHead::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

Tensor compute_evidence(const Tensor& tokens, const EvidentialHead& head) {
  if (tokens.rank() < 1 || tokens.dim(-1) != head.fc1.in_features()) {
    throw DimensionError(fmt::format("evidential head expects width {}, got tokens {}",
                                     head.fc1.in_features(),
                                     shape_to_string(tokens.shape())));
  }
  return softplus(head.fc2(gelu(head.fc1(tokens))));
}

DirichletState dirichlet_state(const Tensor& evidence) {
  if (evidence.rank() != 3) {
    throw DimensionError(fmt::format("evidence must be [B x N x C], got {}",
                                     shape_to_string(evidence.shape())));
  }
  const auto values = evidence.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    // NaN passes through so a diverging run surfaces as a non-finite loss.
    if (values[i] < 0.0) {
      throw ContractError(
          fmt::format("evidence must be non-negative, found {} at index {}", values[i], i));
    }
  }
  DirichletState state;
  state.num_classes = evidence.dim(2);
  state.evidence = evidence;
  state.alpha = add_scalar(evidence, 1.0);
  state.strength = reduce(ReduceOp::kSum, state.alpha, 2);
  state.token_uncertainty =
      div(Tensor::scalar(static_cast<double>(state.num_classes)), state.strength);
  state.global_uncertainty = reduce(ReduceOp::kMean, state.token_uncertainty, 1);
  return state;
}

Tensor expected_probs(const DirichletState& state) {
  return div(state.alpha, expand_trailing(state.strength, state.alpha.shape()));
}

Tensor softmax_predict(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw DimensionError(fmt::format("softmax_predict expects [B x C], got {}",
                                     shape_to_string(logits.shape())));
  }
  return softmax(logits);
}

}  // namespace mfur
