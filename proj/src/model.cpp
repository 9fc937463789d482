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

#include "mfur/model.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "mfur/errors.hpp"
#include "mfur/evidential.hpp"
#include "mfur/ops.hpp"

namespace mfur {

void ModelConfig::validate() const {
  backbone.validate();
  if (num_classes < 2) throw ContractError("model.classes must be at least 2");
  if (image_height == 0 || image_width == 0) {
    throw ContractError("image size must be positive");
  }
  std::size_t stride = backbone.total_stride();
  if (image_height % stride != 0 || image_width % stride != 0) {
    throw ContractError(fmt::format("image {}x{} not divisible by the backbone stride {}",
                                    image_height, image_width, stride));
  }
  if (use_prototypes && prototypes.per_class == 0) {
    throw ContractError("model.per_class must be positive");
  }
}

namespace {

BackboneConfig checked(const ModelConfig& config) {
  config.validate();
  return config.backbone;
}

}  // namespace

Model::Model(const ModelConfig& config, std::mt19937_64& rng)
    : config_(config),
      backbone_(checked(config), config.num_classes, rng),
      classifier_(LinearLayer::create(config.backbone.final_dim(), config.num_classes, rng)) {
  if (config_.use_prototypes) {
    prototypes_ = PrototypeBank::create(config_.num_classes, config_.backbone.final_dim(),
                                        config_.prototypes, rng);
  }
}

ModelOutput Model::forward(const Tensor& images, BackboneForwardOptions options,
                           const TissueMasks* tissue, bool respect_options) const {
  if (images.rank() != 4 || images.dim(1) != config_.backbone.in_channels ||
      images.dim(2) != config_.image_height || images.dim(3) != config_.image_width) {
    throw DimensionError(fmt::format("model expects [B x {} x {} x {}] images, got {}",
                                     config_.backbone.in_channels, config_.image_height,
                                     config_.image_width, shape_to_string(images.shape())));
  }
  if (!respect_options) options.detach_uncertainty = config_.detach_uncertainty;

  ModelOutput out;
  out.backbone = backbone_.forward(images, options, tissue);
  out.used_prototypes = uses_prototypes(options.mode);
  if (out.used_prototypes) {
    out.similarities = similarity(out.backbone.tokens, prototypes_);
    out.logits = class_logits(out.similarities, prototypes_);
  } else {
    out.logits = classifier_(out.backbone.pooled);
  }

  const std::size_t batch = images.dim(0);
  out.uncertainty.assign(batch, 0.0);
  if (!out.backbone.blocks.empty()) {
    const auto sigma = out.backbone.blocks.back().state.global_uncertainty.values();
    std::copy(sigma.begin(), sigma.end(), out.uncertainty.begin());
  } else {
    const Tensor probs = softmax(out.logits.detach());
    const std::size_t c = config_.num_classes;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto row = probs.values().subspan(b * c, c);
      out.uncertainty[b] = 1.0 - *std::max_element(row.begin(), row.end());
    }
  }
  return out;
}

ParamList Model::parameters() const {
  ParamList params;
  backbone_.collect(params);
  classifier_.collect("classifier", params);
  if (config_.use_prototypes) prototypes_.collect("prototypes", params);
  return params;
}

}  // namespace mfur
