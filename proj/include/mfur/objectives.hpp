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

#ifndef MFUR_OBJECTIVES_HPP_
#define MFUR_OBJECTIVES_HPP_

#include <cstddef>
#include <vector>

#include "mfur/model.hpp"
#include "mfur/tensor.hpp"

namespace mfur {

struct LossWeights {
  double route = 0.3;
  double cluster = 0.1;
  double diversity = 0.05;

  void validate() const;
};

struct LossParts {
  Tensor ce;
  Tensor routing;
  Tensor cluster;
  Tensor diversity;
};

struct LossBreakdown {
  Tensor total;
  double total_value = 0.0;
  double ce = 0.0;
  double routing = 0.0;
  double cluster = 0.0;
  double diversity = 0.0;
};

// Mean of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

// ((ce + route*routing) + cluster*L_cluster) + diversity*L_div.
LossBreakdown total_loss(const LossParts& parts, const LossWeights& weights);

// Gathers the parts from one forward pass. The routing part averages the
// per-block supervision loss over refined blocks and is zero without masks.
LossParts loss_parts(const Model& model, const ModelOutput& output,
                     const std::vector<std::size_t>& labels, const TissueMasks* tissue);

}  // namespace mfur

#endif  // MFUR_OBJECTIVES_HPP_
