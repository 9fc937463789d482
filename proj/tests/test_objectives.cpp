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

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mfur/errors.hpp"
#include "mfur/model.hpp"
#include "mfur/objectives.hpp"
#include "mfur/ops.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

namespace mfur {
namespace {

using testing::random_tensor;
using testing::tiny_model_config;

TEST(ObjectivesTest, CrossEntropyCases) {
  EXPECT_NEAR(cross_entropy(Tensor({1, 2}, 0.0), {0}).item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(cross_entropy(Tensor({1, 3}, std::vector<double>{50, 0, 0}), {0}).item(), 0.0,
              1e-20);
  EXPECT_THROW(cross_entropy(Tensor({1, 2}, 0.0), {2}), ContractError);
  EXPECT_THROW(cross_entropy(Tensor({2, 2}, 0.0), {0}), DimensionError);
}

TEST(ObjectivesTest, CrossEntropyMatchesExplicitSoftmax) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> label(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor logits = random_tensor({6, 4}, rng, -8, 8, false);
    std::vector<std::size_t> labels(6);
    for (auto& l : labels) l = label(rng);
    double total = 0.0;
    for (std::size_t b = 0; b < 6; ++b) {
      double z = 0.0;
      for (std::size_t c = 0; c < 4; ++c) z += std::exp(logits[b * 4 + c]);
      total -= std::log(std::exp(logits[b * 4 + labels[b]]) / z);
    }
    EXPECT_NEAR(cross_entropy(logits, labels).item(), total / 6.0, 1e-9);
  }
}

LossParts scalar_parts(double ce, double routing, double cluster, double diversity) {
  return LossParts{Tensor::scalar(ce), Tensor::scalar(routing), Tensor::scalar(cluster),
                   Tensor::scalar(diversity)};
}

TEST(ObjectivesTest, TotalLossArithmetic) {
  const double ln2 = std::log(2.0);
  EXPECT_EQ(total_loss(scalar_parts(0.7, 0.2, -3.0, 0.4), {0.0, 0.0, 0.0}).total_value, 0.7);
  const LossBreakdown b = total_loss(scalar_parts(ln2, ln2, 0.0, 0.0), {1.0, 0.0, 0.0});
  EXPECT_EQ(b.total_value, 2.0 * ln2);
  EXPECT_EQ(b.ce, ln2);
  EXPECT_EQ(b.routing, ln2);

  const LossWeights w{0.3, 0.1, 0.05};
  const double ce = 0.912345, routing = 0.3141, cluster = -7.25, diversity = 0.0421;
  const LossBreakdown full = total_loss(scalar_parts(ce, routing, cluster, diversity), w);
  const double expect = ((ce + 0.3 * routing) + 0.1 * cluster) + 0.05 * diversity;
  EXPECT_EQ(full.total_value, expect);
  EXPECT_EQ(full.total.item(), expect);
  EXPECT_LT(full.total_value, ce);
}

TEST(ObjectivesTest, NegativeWeightsRejected) {
  EXPECT_THROW(total_loss(scalar_parts(1, 1, 1, 1), {-0.1, 0.0, 0.0}), ContractError);
  EXPECT_THROW(total_loss(scalar_parts(1, 1, 1, 1), {0.0, -1.0, 0.0}), ContractError);
  EXPECT_THROW((LossWeights{0.0, 0.0, -1e-9}.validate()), ContractError);
}

TEST(ObjectivesTest, ZeroWeightBlocksExclusiveGradient) {
  const Tensor a({2}, std::vector<double>{0.4, -0.2}, true);
  const Tensor b({2}, std::vector<double>{1.5, 0.5}, true);
  LossParts parts{sum(square(a)), sum(square(b)), Tensor::scalar(0.0), Tensor::scalar(0.0)};
  backward(total_loss(parts, {0.0, 0.1, 0.05}).total);
  EXPECT_NE(a.grad()[0], 0.0);
  if (b.has_grad()) {
    for (double g : b.grad()) EXPECT_EQ(g, 0.0);
  }
}

struct ModelLossFixture {
  std::mt19937_64 rng{21};
  Model model{tiny_model_config(), rng};
  Tensor images = random_tensor({2, 1, 32, 32}, rng, 0, 1, false);
  std::vector<std::size_t> labels{0, 2};
  TissueMasks tissue = testing::half_masks(2, 32, 32);

  LossParts parts() const {
    const ModelOutput out = model.forward(images, BackboneForwardOptions{}, &tissue);
    return loss_parts(model, out, labels, &tissue);
  }
};

TEST(ObjectivesTest, LossPartsFollowHeadAndMasks) {
  ModelLossFixture f;
  const LossParts with = f.parts();
  EXPECT_GT(with.routing.item(), 0.0);
  EXPECT_LT(with.cluster.item(), 0.0);
  EXPECT_GT(with.diversity.item(), 0.0);

  const ModelOutput out = f.model.forward(f.images, BackboneForwardOptions{});
  EXPECT_EQ(loss_parts(f.model, out, f.labels, nullptr).routing.item(), 0.0);
  TissueMasks absent = f.tissue;
  absent.present.assign(2, false);
  EXPECT_EQ(loss_parts(f.model, out, f.labels, &absent).routing.item(), 0.0);

  BackboneForwardOptions base;
  base.mode = Mode::kBaseline;
  const ModelOutput b = f.model.forward(f.images, base, &f.tissue);
  const LossParts bp = loss_parts(f.model, b, f.labels, &f.tissue);
  EXPECT_EQ(bp.routing.item(), 0.0);
  EXPECT_EQ(bp.cluster.item(), 0.0);
  EXPECT_EQ(bp.diversity.item(), 0.0);
}

std::vector<std::vector<double>> grads_of(ParamList params, const Tensor& loss) {
  for (auto& [name, p] : params) p.zero_grad();
  backward(loss);
  std::vector<std::vector<double>> out;
  for (const auto& [name, p] : params) {
    if (p.has_grad()) {
      out.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      out.emplace_back(p.numel(), 0.0);
    }
  }
  return out;
}

TEST(ObjectivesTest, TotalGradientIsWeightedSumOfParts) {
  ModelLossFixture f;
  const ParamList params = f.model.parameters();
  const LossWeights w{0.3, 0.1, 0.05};
  const auto total = grads_of(params, total_loss(f.parts(), w).total);
  const auto ce = grads_of(params, f.parts().ce);
  const auto routing = grads_of(params, f.parts().routing);
  const auto cluster = grads_of(params, f.parts().cluster);
  const auto diversity = grads_of(params, f.parts().diversity);
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < total[p].size(); ++i) {
      const double expect = ce[p][i] + w.route * routing[p][i] + w.cluster * cluster[p][i] +
                            w.diversity * diversity[p][i];
      EXPECT_NEAR(total[p][i], expect, 1e-10 * (1.0 + std::abs(expect))) << params[p].first;
    }
  }
}

TEST(ObjectivesTest, TotalGradientMatchesFiniteDifferencesOnScalars) {
  ModelLossFixture f;
  ParamList subset;
  for (const auto& [name, p] : f.model.parameters()) {
    if (p.numel() == 1) subset.emplace_back(name, p);
  }
  ASSERT_FALSE(subset.empty());
  const auto r = testing::check_gradients(
      [&] { return total_loss(f.parts(), LossWeights{}).total; }, subset, 1e-5, 1e-3, 1e-7);
  EXPECT_EQ(r.failures, 0u) << r.first_failure;
}

}  // namespace
}  // namespace mfur
