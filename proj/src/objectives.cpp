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

#include "mfur/objectives.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "mfur/errors.hpp"
#include "mfur/ops.hpp"
#include "mfur/prototypes.hpp"
#include "mfur/routing.hpp"

namespace mfur {

void LossWeights::validate() const {
  if (route < 0.0 || cluster < 0.0 || diversity < 0.0) {
    throw ContractError(fmt::format("loss weights must be non-negative, got {}/{}/{}", route,
                                    cluster, diversity));
  }
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError(fmt::format("cross_entropy: logits {} for {} labels",
                                     shape_to_string(logits.shape()), labels.size()));
  }
  const std::size_t classes = logits.dim(1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw ContractError(
          fmt::format("label {} at position {} outside [0, {})", labels[i], i, classes));
    }
  }
  return neg(mean(pick(log_softmax(logits), labels)));
}

LossBreakdown total_loss(const LossParts& parts, const LossWeights& weights) {
  weights.validate();
  LossBreakdown out;
  out.total = add(add(add(parts.ce, mul_scalar(parts.routing, weights.route)),
                      mul_scalar(parts.cluster, weights.cluster)),
                  mul_scalar(parts.diversity, weights.diversity));
  out.total_value = out.total.item();
  out.ce = parts.ce.item();
  out.routing = parts.routing.item();
  out.cluster = parts.cluster.item();
  out.diversity = parts.diversity.item();
  return out;
}

LossParts loss_parts(const Model& model, const ModelOutput& output,
                     const std::vector<std::size_t>& labels, const TissueMasks* tissue) {
  LossParts parts;
  parts.ce = cross_entropy(output.logits, labels);

  const bool supervised =
      tissue && std::any_of(tissue->present.begin(), tissue->present.end(),
                            [](bool p) { return p; });
  if (supervised && !output.backbone.blocks.empty()) {
    Tensor acc;
    for (const BlockTrace& trace : output.backbone.blocks) {
      Tensor part = routing_loss(trace.routing.logits, trace.tissue, tissue->present);
      acc = acc.defined() ? add(acc, part) : part;
    }
    parts.routing =
        mul_scalar(acc, 1.0 / static_cast<double>(output.backbone.blocks.size()));
  } else {
    parts.routing = Tensor::scalar(0.0);
  }

  if (output.used_prototypes) {
    parts.cluster = cluster_loss(output.similarities);
    parts.diversity = diversity_loss(*model.prototypes());
  } else {
    parts.cluster = Tensor::scalar(0.0);
    parts.diversity = Tensor::scalar(0.0);
  }
  return parts;
}

}  // namespace mfur
