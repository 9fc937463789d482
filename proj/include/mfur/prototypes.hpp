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

#ifndef MFUR_PROTOTYPES_HPP_
#define MFUR_PROTOTYPES_HPP_

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mfur/layers.hpp"
#include "mfur/tensor.hpp"

namespace mfur {

enum class AggMode { kLogSumExp, kMax, kMean };
enum class DiversityScope { kWithinClass, kGlobal };

struct PrototypeConfig {
  std::size_t per_class = 3;
  bool use_cosine = true;
  AggMode agg = AggMode::kLogSumExp;
  DiversityScope diversity_scope = DiversityScope::kWithinClass;
  double diversity_power = 2.0;
  double init_log_temperature = 2.302585092994045684;  // ln 10
};

// C x K learned prototypes. Prototype k belongs to class k / K.
struct PrototypeBank {
  Tensor prototypes;       // [K_tot x D]
  Tensor log_temperature;  // scalar; tau = exp(log_temperature)
  std::vector<std::size_t> class_map;
  std::size_t num_classes = 0;
  std::size_t per_class = 0;
  bool use_cosine = true;
  AggMode agg = AggMode::kLogSumExp;
  DiversityScope diversity_scope = DiversityScope::kWithinClass;
  double diversity_power = 2.0;

  // Unit-norm Gaussian prototypes.
  static PrototypeBank create(std::size_t num_classes, std::size_t dim,
                              const PrototypeConfig& config, std::mt19937_64& rng);
  // Wraps explicit prototype vectors, rows grouped by class.
  static PrototypeBank from_values(std::size_t num_classes, const Tensor& prototypes,
                                   const PrototypeConfig& config);

  std::size_t total() const { return class_map.size(); }
  std::size_t dim() const { return prototypes.dim(1); }
  double temperature() const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// tokens [B x T x D] -> s [B x T x K_tot]. Cosine similarity scaled by tau,
// norms clamped at 1e-12; raw dot products when use_cosine is off.
Tensor similarity(const Tensor& tokens, const PrototypeBank& bank);

// Aggregates over tokens, then over each class's prototypes -> [B x C].
Tensor class_logits(const Tensor& similarities, const PrototypeBank& bank);

// -(1 / (B K_tot)) sum_b sum_k max_i s[b, i, k]
Tensor cluster_loss(const Tensor& similarities);

// Mean of |cos(p_k, p_l)|^q over the selected off-diagonal pairs; 0 when
// no pair is selected.
Tensor diversity_loss(const PrototypeBank& bank);

// lambda_c * cluster + lambda_d * diversity.
Tensor prototype_regularizer(double lambda_cluster, double lambda_diversity,
                             const Tensor& similarities, const PrototypeBank& bank);

struct PrototypeMatch {
  std::size_t prototype = 0;
  std::size_t class_id = 0;
  std::size_t token = 0;
  double similarity = 0.0;
};

// Prototypes ranked by their best token similarity for one image
// (tokens [T x D] or [1 x T x D]); ties go to the lower prototype id.
std::vector<PrototypeMatch> top_matches(const Tensor& tokens, const PrototypeBank& bank,
                                        std::size_t n);

}  // namespace mfur

#endif  // MFUR_PROTOTYPES_HPP_
