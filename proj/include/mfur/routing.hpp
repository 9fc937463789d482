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

#ifndef MFUR_ROUTING_HPP_
#define MFUR_ROUTING_HPP_

#include <cstddef>
#include <random>
#include <string>

#include "mfur/layers.hpp"
#include "mfur/tensor.hpp"

namespace mfur {

// Parameters of one uncertainty-gated refinement site.
struct RoutingBlockParams {
  LinearLayer predictor;  // D -> 1, per token
  LinearLayer refine1;    // D -> D
  LinearLayer refine2;    // D -> D
  Tensor lambda_ref;      // learnable scalar, starts at 0.1
  double beta = 0.0;      // fixed gate coefficient in [0, 1]

  static RoutingBlockParams create(std::size_t dim, double beta, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct RoutingOutputs {
  Tensor logits;          // [B x N]
  Tensor mask;            // [B x N], sigmoid(logits)
  Tensor effective_mask;  // [B x N]
  Tensor delta;           // [B x N x D]
  Tensor delta_gated;     // [B x N x D]
  Tensor routed;          // [B x N x D]
};

struct RoutingMask {
  Tensor logits;
  Tensor mask;
};

// tokens_norm: [B x N x D].
RoutingMask routing_mask(const Tensor& tokens_norm, const LinearLayer& predictor);

// mask * tissue * (1 - token_uncertainty). An undefined tissue tensor means
// no tissue supervision (all ones). Tissue values must be exactly 0 or 1.
Tensor effective_mask(const Tensor& mask, const Tensor& tissue,
                      const Tensor& token_uncertainty);

// The convolutional refinement branch R: two 1x1 convolutions with GELU.
Tensor refinement_branch(const Tensor& tokens_norm, const RoutingBlockParams& params);

struct RefineResult {
  Tensor delta;
  Tensor delta_gated;
  Tensor routed;
};

// delta = M_eff * lambda * (R - A), delta' = (1 - beta * sigma) * delta,
// routed = A + delta'. sigma is the per-sample global uncertainty [B].
RefineResult refine(const Tensor& attention, const Tensor& refined,
                    const Tensor& effective, const Tensor& lambda_ref, double beta,
                    const Tensor& global_uncertainty);

// Mean BCE-with-logits over tokens of the samples that carry a tissue mask.
// `present[b]` flags supervision; with no supervised sample the loss is 0.
Tensor routing_loss(const Tensor& logits, const Tensor& tissue,
                    const std::vector<bool>& present);

}  // namespace mfur

#endif  // MFUR_ROUTING_HPP_
