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
#include "mfur/ops.hpp"
#include "mfur/routing.hpp"
#include "support/gradcheck.hpp"

namespace mfur {
namespace {

using testing::check_gradients;
using testing::random_tensor;

TEST(RoutingTest, MaskIsSigmoidOfLogits) {
  std::mt19937_64 rng(1);
  LinearLayer predictor = LinearLayer::create(4, 1, rng);
  for (double& v : predictor.weight.mutable_values()) v = 0.0;
  predictor.bias.mutable_values()[0] = 0.7;
  const RoutingMask m = routing_mask(random_tensor({2, 3, 4}, rng, -1, 1, false), predictor);
  EXPECT_EQ(m.mask.shape(), (Shape{2, 3}));
  for (double v : m.mask.values()) EXPECT_NEAR(v, 1.0 / (1.0 + std::exp(-0.7)), 1e-15);
  predictor.bias.mutable_values()[0] = 0.0;
  const Tensor half = routing_mask(Tensor({1, 2, 4}), predictor).mask;
  for (double v : half.values()) EXPECT_EQ(v, 0.5);
  predictor.bias.mutable_values()[0] = 40.0;
  const Tensor saturated = routing_mask(Tensor({1, 2, 4}), predictor).mask;
  for (double v : saturated.values()) {
    EXPECT_NEAR(v, 1.0, 1e-15);
  }
}

TEST(RoutingTest, EffectiveMaskCases) {
  const Tensor one({1, 1}, 1.0), zero({1, 1}, 0.0);
  EXPECT_EQ(effective_mask(one, one, zero)[0], 1.0);
  EXPECT_EQ(effective_mask(Tensor({1, 1}, 0.7), one, one)[0], 0.0);
  EXPECT_NEAR(effective_mask(Tensor({1, 1}, 0.5), one, Tensor({1, 1}, 0.2))[0], 0.4, 1e-15);
  EXPECT_NEAR(effective_mask(Tensor({1, 1}, 0.5), Tensor(), Tensor({1, 1}, 0.2))[0], 0.4,
              1e-15);
  EXPECT_EQ(effective_mask(Tensor({1, 1}, 0.5), zero, zero)[0], 0.0);
  EXPECT_THROW(effective_mask(one, Tensor({1, 1}, 0.5), zero), ContractError);
}

TEST(RoutingTest, EffectiveMaskBoundsAndMonotonicity) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double m = u(rng), s1 = 0.01 + 0.99 * u(rng), s2 = 0.01 + 0.99 * u(rng);
    const double tissue = trial % 2;
    const double a = effective_mask(Tensor({1, 1}, m), Tensor({1, 1}, tissue),
                                    Tensor({1, 1}, std::min(s1, s2)))[0];
    const double b = effective_mask(Tensor({1, 1}, m), Tensor({1, 1}, tissue),
                                    Tensor({1, 1}, std::max(s1, s2)))[0];
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, m);
    EXPECT_GE(a, b);
  }
}

TEST(RoutingTest, RefineCases) {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({2, 3, 4}, rng, -1, 1, false);
  const Tensor r = random_tensor({2, 3, 4}, rng, -1, 1, false);
  const Tensor meff = random_tensor({2, 3}, rng, 0, 1, false);
  const Tensor lambda({}, 0.3);
  const Tensor sigma({2}, std::vector<double>{0.4, 0.9});

  const RefineResult b0 = refine(a, r, meff, lambda, 0.0, sigma);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_EQ(b0.delta_gated[i], b0.delta[i]);
    EXPECT_NEAR(b0.delta[i], meff[i / 4] * 0.3 * (r[i] - a[i]), 1e-15);
    EXPECT_EQ(b0.routed[i], a[i] + b0.delta_gated[i]);
  }

  const RefineResult full = refine(a, r, meff, lambda, 1.0, Tensor({2}, 1.0));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(full.routed[i], a[i]);

  const RefineResult same = refine(a, a, meff, lambda, 0.5, sigma);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(same.routed[i], a[i]);

  const RefineResult zero_lambda = refine(a, r, meff, Tensor({}, 0.0), 0.5, sigma);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(zero_lambda.routed[i], a[i]);

  const RefineResult zero_mask = refine(a, r, Tensor({2, 3}, 0.0), lambda, 0.5, sigma);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(zero_mask.routed[i], a[i]);

  const RefineResult gated = refine(a, r, meff, lambda, 0.8, sigma);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double g = 1.0 - 0.8 * sigma[i / 12];
    EXPECT_NEAR(gated.delta_gated[i], g * gated.delta[i], 1e-15);
    EXPECT_LE(std::abs(gated.delta_gated[i]), std::abs(gated.delta[i]));
  }
}

TEST(RoutingTest, RoutingLossAnalyticCases) {
  const std::vector<bool> present{true};
  EXPECT_NEAR(routing_loss(Tensor({1, 2}, 0.0), Tensor({1, 2}, 1.0), present).item(),
              std::log(2.0), 1e-15);
  EXPECT_NEAR(routing_loss(Tensor({1, 1}, 50.0), Tensor({1, 1}, 1.0), present).item(), 0.0,
              1e-20);
  EXPECT_NEAR(routing_loss(Tensor({1, 1}, -50.0), Tensor({1, 1}, 1.0), present).item(), 50.0,
              1e-12);
  EXPECT_EQ(routing_loss(Tensor({1, 2}, 3.0), Tensor({1, 2}, 1.0), {false}).item(), 0.0);
}

TEST(RoutingTest, RoutingLossMatchesExplicitBce) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor logits = random_tensor({3, 5}, rng, -10, 10, false);
    std::vector<double> m(15);
    for (double& v : m) v = coin(rng) ? 1.0 : 0.0;
    const std::vector<bool> present{true, trial % 2 == 0, true};
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < 3; ++b) {
      if (!present[b]) continue;
      for (std::size_t i = 0; i < 5; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-logits[b * 5 + i]));
        const double t = m[b * 5 + i];
        total += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
        ++count;
      }
    }
    EXPECT_NEAR(routing_loss(logits, Tensor({3, 5}, m), present).item(), total / count, 1e-9);
  }
}

TEST(RoutingTest, BranchGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const RoutingBlockParams p = RoutingBlockParams::create(4, 0.6, rng);
  EXPECT_EQ(p.lambda_ref.item(), 0.1);
  const Tensor x = random_tensor({2, 3, 4}, rng, -1, 1, false);
  const Tensor a = random_tensor({2, 3, 4}, rng, -1, 1, false);
  const Tensor tissue({2, 3}, std::vector<double>{1, 0, 1, 1, 1, 0});
  const Tensor sigma_tok = random_tensor({2, 3}, rng, 0.1, 0.9, false);
  const Tensor sigma({2}, std::vector<double>{0.3, 0.7});
  ParamList params;
  p.collect("route", params);
  const auto r = check_gradients(
      [&] {
        const RoutingMask m = routing_mask(x, p.predictor);
        const Tensor meff = effective_mask(m.mask, tissue, sigma_tok);
        const RefineResult out =
            refine(a, refinement_branch(x, p), meff, p.lambda_ref, p.beta, sigma);
        return sum(square(out.routed)) + routing_loss(m.logits, tissue, {true, true});
      },
      params, 1e-5, 1e-6, 1e-8);
  EXPECT_EQ(r.failures, 0u) << r.first_failure;
}

}  // namespace
}  // namespace mfur
