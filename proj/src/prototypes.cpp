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

#include "mfur/prototypes.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mfur/errors.hpp"
#include "mfur/ops.hpp"

namespace mfur {

namespace {

constexpr double kMinNorm = 1e-12;

ReduceOp to_reduce(AggMode mode) {
  switch (mode) {
    case AggMode::kMax: return ReduceOp::kMax;
    case AggMode::kMean: return ReduceOp::kMean;
    case AggMode::kLogSumExp: break;
  }
  return ReduceOp::kLogSumExp;
}

void apply_config(PrototypeBank& bank, const PrototypeConfig& config) {
  bank.use_cosine = config.use_cosine;
  bank.agg = config.agg;
  bank.diversity_scope = config.diversity_scope;
  bank.diversity_power = config.diversity_power;
  if (config.diversity_power < 1.0) {
    throw ContractError(fmt::format("diversity power must be >= 1, got {}",
                                    config.diversity_power));
  }
}

}  // namespace

PrototypeBank PrototypeBank::create(std::size_t num_classes, std::size_t dim,
                                    const PrototypeConfig& config, std::mt19937_64& rng) {
  if (num_classes == 0 || config.per_class == 0 || dim == 0) {
    throw ContractError("prototype bank needs classes, prototypes and a width");
  }
  const std::size_t total = num_classes * config.per_class;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> values(total * dim);
  for (std::size_t k = 0; k < total; ++k) {
    double ss = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      values[k * dim + j] = normal(rng);
      ss += values[k * dim + j] * values[k * dim + j];
    }
    const double norm = std::max(std::sqrt(ss), kMinNorm);
    for (std::size_t j = 0; j < dim; ++j) values[k * dim + j] /= norm;
  }
  return from_values(num_classes, Tensor({total, dim}, std::move(values), true), config);
}

PrototypeBank PrototypeBank::from_values(std::size_t num_classes, const Tensor& prototypes,
                                         const PrototypeConfig& config) {
  if (prototypes.rank() != 2 || num_classes == 0 ||
      prototypes.dim(0) != num_classes * config.per_class) {
    throw DimensionError(fmt::format("{} prototypes cannot split into {} classes of {}",
                                     prototypes.rank() == 2 ? prototypes.dim(0) : 0,
                                     num_classes, config.per_class));
  }
  PrototypeBank bank;
  bank.prototypes = prototypes;
  bank.log_temperature = Tensor::scalar(config.init_log_temperature, true);
  bank.num_classes = num_classes;
  bank.per_class = config.per_class;
  bank.class_map.resize(prototypes.dim(0));
  for (std::size_t k = 0; k < bank.class_map.size(); ++k) {
    bank.class_map[k] = k / config.per_class;
  }
  apply_config(bank, config);
  return bank;
}

double PrototypeBank::temperature() const { return std::exp(log_temperature.item()); }

void PrototypeBank::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".prototypes", prototypes);
  out.emplace_back(prefix + ".log_temperature", log_temperature);
}

Tensor similarity(const Tensor& tokens, const PrototypeBank& bank) {
  if (tokens.rank() != 3 || tokens.dim(2) != bank.dim()) {
    throw DimensionError(fmt::format("similarity: tokens {} vs prototype width {}",
                                     shape_to_string(tokens.shape()), bank.dim()));
  }
  const Tensor undefined;
  if (!bank.use_cosine) {
    return linear(tokens, transpose_last2(bank.prototypes), undefined);
  }
  const Tensor z = l2_normalize(tokens, kMinNorm);
  const Tensor p = l2_normalize(bank.prototypes, kMinNorm);
  const Tensor cosine = linear(z, transpose_last2(p), undefined);
  return mul(cosine, exp(bank.log_temperature));
}

Tensor class_logits(const Tensor& similarities, const PrototypeBank& bank) {
  if (similarities.rank() != 3 || similarities.dim(2) != bank.total()) {
    throw DimensionError(fmt::format("class_logits: similarities {} for {} prototypes",
                                     shape_to_string(similarities.shape()), bank.total()));
  }
  const ReduceOp op = to_reduce(bank.agg);
  const Tensor evidence = reduce(op, similarities, 1);  // [B x K_tot]
  const Tensor grouped =
      reshape(evidence, {similarities.dim(0), bank.num_classes, bank.per_class});
  return reduce(op, grouped, 2);
}

Tensor cluster_loss(const Tensor& similarities) {
  if (similarities.rank() != 3 || similarities.dim(1) == 0) {
    throw DimensionError(fmt::format("cluster_loss expects [B x T x K] with T >= 1, got {}",
                                     shape_to_string(similarities.shape())));
  }
  return neg(mean(reduce(ReduceOp::kMax, similarities, 1)));
}

Tensor diversity_loss(const PrototypeBank& bank) {
  const std::size_t total = bank.total();
  std::vector<double> weights(total * total, 0.0);
  std::size_t pairs = 0;
  for (std::size_t k = 0; k < total; ++k) {
    for (std::size_t l = 0; l < total; ++l) {
      if (k == l) continue;
      if (bank.diversity_scope == DiversityScope::kWithinClass &&
          bank.class_map[k] != bank.class_map[l]) {
        continue;
      }
      weights[k * total + l] = 1.0;
      ++pairs;
    }
  }
  if (pairs == 0) return Tensor::scalar(0.0);
  for (double& w : weights) w /= static_cast<double>(pairs);
  const Tensor p = l2_normalize(bank.prototypes, kMinNorm);
  const Tensor gram = matmul(p, transpose_last2(p));
  return sum(mul(abs_pow(gram, bank.diversity_power),
                 Tensor({total, total}, std::move(weights))));
}

Tensor prototype_regularizer(double lambda_cluster, double lambda_diversity,
                             const Tensor& similarities, const PrototypeBank& bank) {
  if (lambda_cluster < 0.0 || lambda_diversity < 0.0) {
    throw ContractError("prototype regularizer weights must be non-negative");
  }
  return add(mul_scalar(cluster_loss(similarities), lambda_cluster),
             mul_scalar(diversity_loss(bank), lambda_diversity));
}

std::vector<PrototypeMatch> top_matches(const Tensor& tokens, const PrototypeBank& bank,
                                        std::size_t n) {
  if (n > bank.total()) {
    throw ContractError(fmt::format("requested {} matches from {} prototypes", n,
                                    bank.total()));
  }
  Tensor batch = tokens;
  if (tokens.rank() == 2) batch = reshape(tokens, {1, tokens.dim(0), tokens.dim(1)});
  if (batch.rank() != 3 || batch.dim(0) != 1) {
    throw DimensionError(fmt::format("top_matches expects one image, got {}",
                                     shape_to_string(tokens.shape())));
  }
  NoGradGuard no_grad;
  const Tensor s = similarity(batch, bank);
  const std::size_t t = s.dim(1), k_tot = s.dim(2);
  std::vector<PrototypeMatch> all(k_tot);
  for (std::size_t k = 0; k < k_tot; ++k) {
    PrototypeMatch m{k, bank.class_map[k], 0, s[k]};
    for (std::size_t i = 1; i < t; ++i) {
      if (s[i * k_tot + k] > m.similarity) {
        m.similarity = s[i * k_tot + k];
        m.token = i;
      }
    }
    all[k] = m;
  }
  std::stable_sort(all.begin(), all.end(), [](const PrototypeMatch& a, const PrototypeMatch& b) {
    return a.similarity > b.similarity;
  });
  all.resize(n);
  return all;
}

}  // namespace mfur
