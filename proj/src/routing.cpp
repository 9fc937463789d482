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

#include "mfur/routing.hpp"

#include <fmt/format.h>

#include "mfur/errors.hpp"
#include "mfur/ops.hpp"

namespace mfur {

RoutingBlockParams RoutingBlockParams::create(std::size_t dim, double beta,
                                              std::mt19937_64& rng) {
  if (beta < 0.0 || beta > 1.0) {
    throw ContractError(fmt::format("routing beta must lie in [0, 1], got {}", beta));
  }
  RoutingBlockParams p;
  p.predictor = LinearLayer::create(dim, 1, rng);
  p.refine1 = LinearLayer::create(dim, dim, rng);
  p.refine2 = LinearLayer::create(dim, dim, rng);
  p.lambda_ref = Tensor::scalar(0.1, /*requires_grad=*/true);
  p.beta = beta;
  return p;
}

void RoutingBlockParams::collect(const std::string& prefix, ParamList& out) const {
  predictor.collect(prefix + ".predictor", out);
  refine1.collect(prefix + ".refine1", out);
  refine2.collect(prefix + ".refine2", out);
  out.emplace_back(prefix + ".lambda_ref", lambda_ref);
}

RoutingMask routing_mask(const Tensor& tokens_norm, const LinearLayer& predictor) {
  if (tokens_norm.rank() != 3) {
    throw DimensionError(fmt::format("routing_mask expects [B x N x D], got {}",
                                     shape_to_string(tokens_norm.shape())));
  }
  const Tensor logits = reshape(predictor(tokens_norm),
                                {tokens_norm.dim(0), tokens_norm.dim(1)});
  return {logits, sigmoid(logits)};
}

Tensor effective_mask(const Tensor& mask, const Tensor& tissue,
                      const Tensor& token_uncertainty) {
  if (mask.shape() != token_uncertainty.shape()) {
    throw DimensionError(fmt::format("mask {} vs uncertainty {}",
                                     shape_to_string(mask.shape()),
                                     shape_to_string(token_uncertainty.shape())));
  }
  Tensor gated = mask;
  if (tissue.defined()) {
    if (tissue.shape() != mask.shape()) {
      throw DimensionError(fmt::format("tissue mask {} vs routing mask {}",
                                       shape_to_string(tissue.shape()),
                                       shape_to_string(mask.shape())));
    }
    for (double v : tissue.values()) {
      if (v != 0.0 && v != 1.0) {
        throw ContractError(fmt::format("tissue mask values must be 0 or 1, found {}", v));
      }
    }
    gated = mul(gated, tissue);
  }
  const Tensor certainty = add_scalar(neg(token_uncertainty), 1.0);
  return mul(gated, certainty);
}

Tensor refinement_branch(const Tensor& tokens_norm, const RoutingBlockParams& params) {
  return params.refine2(gelu(params.refine1(tokens_norm)));
}

RefineResult refine(const Tensor& attention, const Tensor& refined,
                    const Tensor& effective, const Tensor& lambda_ref, double beta,
                    const Tensor& global_uncertainty) {
  if (attention.shape() != refined.shape() || attention.rank() != 3) {
    throw DimensionError(fmt::format("refine: attention {} vs refinement {}",
                                     shape_to_string(attention.shape()),
                                     shape_to_string(refined.shape())));
  }
  if (beta < 0.0 || beta > 1.0) {
    throw ContractError(fmt::format("refine: beta {} outside [0, 1]", beta));
  }
  const Shape& shape = attention.shape();
  RefineResult out;
  const Tensor update = mul(sub(refined, attention), lambda_ref);
  out.delta = mul(expand_trailing(effective, shape), update);
  // 1 - beta * sigma, one gate per sample
  const Tensor gate = add_scalar(mul_scalar(global_uncertainty, -beta), 1.0);
  out.delta_gated = mul(expand_trailing(gate, shape), out.delta);
  out.routed = add(attention, out.delta_gated);
  return out;
}

Tensor routing_loss(const Tensor& logits, const Tensor& tissue,
                    const std::vector<bool>& present) {
  if (logits.rank() != 2 || present.size() != logits.dim(0)) {
    throw DimensionError(fmt::format("routing_loss: logits {} with {} presence flags",
                                     shape_to_string(logits.shape()), present.size()));
  }
  std::size_t supervised = 0;
  for (bool p : present) supervised += p ? 1 : 0;
  if (supervised == 0 || !tissue.defined()) return Tensor::scalar(0.0);
  const std::size_t b = logits.dim(0), n = logits.dim(1);
  std::vector<double> weights(b * n, 0.0);
  const double w = 1.0 / static_cast<double>(supervised * n);
  for (std::size_t i = 0; i < b; ++i) {
    if (!present[i]) continue;
    for (std::size_t j = 0; j < n; ++j) weights[i * n + j] = w;
  }
  return sum(mul(bce_with_logits(logits, tissue), Tensor(logits.shape(), std::move(weights))));
}

}  // namespace mfur
