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

#ifndef MFUR_MODEL_HPP_
#define MFUR_MODEL_HPP_

#include <cstddef>
#include <random>
#include <vector>

#include "mfur/backbone.hpp"
#include "mfur/layers.hpp"
#include "mfur/prototypes.hpp"
#include "mfur/tensor.hpp"

namespace mfur {

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::toy();
  std::size_t num_classes = 3;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  // The prototype head replaces the linear classifier in ug2rlpr mode.
  bool use_prototypes = true;
  PrototypeConfig prototypes;
  bool detach_uncertainty = true;

  void validate() const;
};

struct ModelOutput {
  Tensor logits;        // [B x C]
  Tensor similarities;  // [B x N x K_tot], undefined for the linear head
  BackboneOutput backbone;
  // Global uncertainty of the last refined block per sample, or
  // 1 - max probability when no evidential head ran.
  std::vector<double> uncertainty;
  bool used_prototypes = false;
};

class Model {
 public:
  Model(const ModelConfig& config, std::mt19937_64& rng);

  // options.detach_uncertainty is taken from the config unless
  // `respect_options` is set.
  ModelOutput forward(const Tensor& images, BackboneForwardOptions options,
                      const TissueMasks* tissue = nullptr,
                      bool respect_options = false) const;

  bool uses_prototypes(Mode mode) const {
    return mode == Mode::kUg2rlpr && config_.use_prototypes;
  }

  const ModelConfig& config() const { return config_; }
  const Backbone& backbone() const { return backbone_; }
  const LinearLayer& classifier() const { return classifier_; }
  const PrototypeBank* prototypes() const {
    return config_.use_prototypes ? &prototypes_ : nullptr;
  }

  // Every learnable tensor under a stable dotted name.
  ParamList parameters() const;

 private:
  ModelConfig config_;
  Backbone backbone_;
  LinearLayer classifier_;
  PrototypeBank prototypes_;
};

}  // namespace mfur

#endif  // MFUR_MODEL_HPP_
