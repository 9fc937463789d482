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
#include "mfur/evidential.hpp"
#include "mfur/ops.hpp"
#include "support/gradcheck.hpp"

namespace mfur {
namespace {

using testing::check_gradients;
using testing::random_tensor;

TEST(EvidentialTest, HiddenWidth) {
  EXPECT_EQ(EvidentialHead::hidden_width(8), 8u);
  EXPECT_EQ(EvidentialHead::hidden_width(12), 8u);
  EXPECT_EQ(EvidentialHead::hidden_width(64), 32u);
}

TEST(EvidentialTest, ZeroHeadGivesLnTwoEvidence) {
  std::mt19937_64 rng(1);
  EvidentialHead head = EvidentialHead::create(8, 3, rng);
  for (Tensor t : {head.fc1.weight, head.fc1.bias, head.fc2.weight, head.fc2.bias}) {
    for (double& v : t.mutable_values()) v = 0.0;
  }
  const Tensor e = compute_evidence(random_tensor({2, 5, 8}, rng, -1, 1, false), head);
  EXPECT_EQ(e.shape(), (Shape{2, 5, 3}));
  for (double v : e.values()) EXPECT_NEAR(v, std::log(2.0), 1e-15);
}

TEST(EvidentialTest, EvidenceIsNonNegative) {
  std::mt19937_64 rng(2);
  const EvidentialHead head = EvidentialHead::create(8, 4, rng);
  const Tensor e = compute_evidence(random_tensor({3, 7, 8}, rng, -20, 20, false), head);
  for (double v : e.values()) EXPECT_GE(v, 0.0);
  EXPECT_THROW(compute_evidence(Tensor({1, 2, 6}), head), DimensionError);
}

TEST(EvidentialTest, ZeroEvidenceState) {
  const DirichletState s = dirichlet_state(Tensor({1, 1, 3}, 0.0));
  for (double a : s.alpha.values()) EXPECT_EQ(a, 1.0);
  EXPECT_EQ(s.strength[0], 3.0);
  EXPECT_EQ(s.token_uncertainty[0], 1.0);
  const Tensor probs = expected_probs(s);
  for (double p : probs.values()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
}

TEST(EvidentialTest, TwoClassArithmetic) {
  const DirichletState s = dirichlet_state(Tensor({1, 1, 2}, std::vector<double>{3, 1}));
  EXPECT_EQ(s.alpha[0], 4.0);
  EXPECT_EQ(s.alpha[1], 2.0);
  EXPECT_EQ(s.strength[0], 6.0);
  EXPECT_NEAR(s.token_uncertainty[0], 1.0 / 3.0, 1e-15);
  const Tensor p = expected_probs(s);
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(EvidentialTest, GlobalUncertaintyIsTokenMean) {
  const DirichletState s =
      dirichlet_state(Tensor({1, 2, 2}, std::vector<double>{0, 0, 3, 1}));
  EXPECT_NEAR(s.global_uncertainty[0], 2.0 / 3.0, 1e-15);
}

TEST(EvidentialTest, NegativeEvidenceRejected) {
  EXPECT_THROW(dirichlet_state(Tensor({1, 1, 2}, std::vector<double>{1, -1e-9})),
               ContractError);
}

TEST(EvidentialTest, StateInvariantsOnRandomEvidence) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor e = random_tensor({2, 4, 3}, rng, 0, 5, false);
    const DirichletState s = dirichlet_state(e);
    const Tensor p = expected_probs(s);
    for (std::size_t i = 0; i < 8; ++i) {
      double total = 0.0, probs = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(s.alpha[i * 3 + c], e[i * 3 + c] + 1.0);
        total += s.alpha[i * 3 + c];
        probs += p[i * 3 + c];
      }
      EXPECT_NEAR(s.strength[i], total, 1e-12);
      EXPECT_GE(s.strength[i], 3.0);
      EXPECT_GT(s.token_uncertainty[i], 0.0);
      EXPECT_LE(s.token_uncertainty[i], 1.0);
      EXPECT_NEAR(probs, 1.0, 1e-9);
    }
  }
}

TEST(EvidentialTest, MoreEvidenceLowersUncertainty) {
  std::mt19937_64 rng(4);
  const Tensor e = random_tensor({1, 3, 4}, rng, 0, 2, false);
  const DirichletState base = dirichlet_state(e);
  for (std::size_t k = 0; k < e.numel(); ++k) {
    Tensor bumped = e.detach();
    bumped.mutable_values()[k] += 0.5;
    const DirichletState s = dirichlet_state(bumped);
    EXPECT_LT(s.token_uncertainty[k / 4], base.token_uncertainty[k / 4]);
  }
  const DirichletState scaled = dirichlet_state(e * 10.0);
  const Tensor p0 = expected_probs(base), p1 = expected_probs(scaled);
  for (std::size_t i = 0; i < 3; ++i) {
    std::size_t a0 = 0, a1 = 0;
    for (std::size_t c = 1; c < 4; ++c) {
      if (p0[i * 4 + c] > p0[i * 4 + a0]) a0 = c;
      if (p1[i * 4 + c] > p1[i * 4 + a1]) a1 = c;
    }
    EXPECT_EQ(a0, a1);
    EXPECT_LT(scaled.token_uncertainty[i], base.token_uncertainty[i]);
  }
}

TEST(EvidentialTest, SoftmaxPredictCases) {
  const Tensor half = softmax_predict(Tensor({1, 2}, 0.0));
  EXPECT_EQ(half[0], 0.5);
  EXPECT_EQ(half[1], 0.5);
  const Tensor big = softmax_predict(Tensor({1, 2}, std::vector<double>{1000, 0}));
  EXPECT_NEAR(big[0], 1.0, 1e-15);
  EXPECT_TRUE(std::isfinite(big[1]));
  EXPECT_GE(big[1], 0.0);
  std::mt19937_64 rng(5);
  const Tensor z = random_tensor({4, 5}, rng, -3, 3, false);
  const Tensor a = softmax_predict(z), b = softmax_predict(z + 17.25);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(EvidentialTest, EvidenceGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const EvidentialHead head = EvidentialHead::create(8, 3, rng);
  const Tensor x = random_tensor({2, 3, 8}, rng, -1, 1, false);
  ParamList params;
  head.collect("head", params);
  const auto r = check_gradients(
      [&] { return sum(square(compute_evidence(x, head))); }, params, 1e-5, 1e-5, 1e-7);
  EXPECT_EQ(r.failures, 0u) << r.first_failure;
}

TEST(EvidentialTest, UncertaintyGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const EvidentialHead head = EvidentialHead::create(8, 3, rng);
  const Tensor x = random_tensor({2, 3, 8}, rng, -1, 1, false);
  ParamList params;
  head.collect("head", params);
  const auto r = check_gradients(
      [&] { return sum(dirichlet_state(compute_evidence(x, head)).global_uncertainty); },
      params, 1e-5, 1e-3, 1e-8);
  EXPECT_EQ(r.failures, 0u) << r.first_failure;
}

}  // namespace
}  // namespace mfur
