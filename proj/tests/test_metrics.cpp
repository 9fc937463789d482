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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "mfur/errors.hpp"
#include "mfur/metrics.hpp"
#include "mfur/model.hpp"
#include "mfur/ops.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace mfur {
namespace {

using namespace mfur::testing;

PredictionSet make(std::vector<double> probs, std::size_t classes,
                   std::vector<std::size_t> labels, std::vector<double> uncertainty = {}) {
  PredictionSet p;
  const std::size_t n = labels.size();
  p.probs = Tensor({n, classes}, std::move(probs));
  p.labels = std::move(labels);
  p.uncertainty = uncertainty.empty() ? std::vector<double>(n, 0.0) : std::move(uncertainty);
  return p;
}

TEST(MetricsTest, ValidateRejectsBadSets) {
  EXPECT_THROW(make({0.5, 0.6}, 2, {0}).validate(), ContractError);
  EXPECT_THROW(make({0.5, 0.5}, 2, {2}).validate(), ContractError);
  PredictionSet p = make({0.5, 0.5}, 2, {0});
  p.uncertainty = {0.1, 0.2};
  EXPECT_THROW(p.validate(), DimensionError);
}

TEST(MetricsTest, ConfidenceBins) {
  EXPECT_EQ(confidence_bin(1.0, 15), 14u);
  EXPECT_EQ(confidence_bin(0.5, 2), 0u);
  EXPECT_EQ(confidence_bin(0.51, 2), 1u);
  EXPECT_EQ(confidence_bin(0.01, 10), 0u);
}

TEST(MetricsTest, CalibrationHandCases) {
  // Five samples at confidence 0.8, four correct.
  std::vector<double> probs;
  for (int i = 0; i < 5; ++i) probs.insert(probs.end(), {0.8, 0.2});
  const PredictionSet calibrated = make(probs, 2, {0, 0, 0, 0, 1});
  EXPECT_NEAR(ece(calibrated), 0.0, 1e-15);
  EXPECT_NEAR(mce(calibrated), 0.0, 1e-15);

  const PredictionSet split = make({1.0, 0.0, 1.0, 0.0}, 2, {0, 1});
  EXPECT_EQ(ece(split), 0.5);
  EXPECT_EQ(mce(split), 0.5);
}

TEST(MetricsTest, BrierAndNllHandCases) {
  EXPECT_EQ(brier(make({0, 1, 0}, 3, {1})), 0.0);
  EXPECT_EQ(brier(make({0.5, 0.5}, 2, {0})), 0.5);
  EXPECT_EQ(brier(make({0.5, 0.5}, 2, {1})), 0.5);
  EXPECT_EQ(nll(make({1.0, 0.0}, 2, {0})), 0.0);
  const double e = std::exp(-1.0);
  EXPECT_NEAR(nll(make({e, 1.0 - e}, 2, {0})), 1.0, 1e-15);
  EXPECT_NEAR(nll(make({1.0, 0.0}, 2, {1})), -std::log(1e-12), 1e-9);
}

TEST(MetricsTest, RiskCoverageHandCases) {
  const PredictionSet right = make({0.9, 0.1, 0.2, 0.8, 0.7, 0.3}, 2, {0, 1, 0}, {0.3, 0.1, 0.2});
  const RiskCoverage r = risk_coverage(right);
  EXPECT_EQ(r.aurc, 0.0);
  for (const auto& [cov, risk] : r.curve) EXPECT_EQ(risk, 0.0);
  const PredictionSet wrong = make({0.9, 0.1, 0.2, 0.8, 0.7, 0.3}, 2, {1, 0, 1}, {0.3, 0.1, 0.2});
  EXPECT_EQ(risk_coverage(wrong).aurc, 1.0);

  // Accepted order 1, 2, 0 with the error on sample 0.
  const PredictionSet mixed = make({0.9, 0.1, 0.2, 0.8, 0.7, 0.3}, 2, {1, 1, 0}, {0.3, 0.1, 0.2});
  const RiskCoverage m = risk_coverage(mixed);
  EXPECT_NEAR(m.aurc, (0.0 + 0.0 + 1.0 / 3.0) / 3.0, 1e-15);
  ASSERT_EQ(m.curve.size(), 3u);
  EXPECT_NEAR(m.curve[0].first, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(m.acc_at(0.5), 1.0);
  EXPECT_NEAR(m.acc_at(0.9), 2.0 / 3.0, 1e-15);
}

TEST(MetricsTest, AccuracyF1Auroc) {
  const PredictionSet p =
      make({0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4, 0.5, 0.4, 0.1}, 3, {0, 1, 2, 1});
  EXPECT_EQ(accuracy(p), 0.75);
  // Per class F1: class 0 = 2/3, class 1 = 2/3, class 2 = 1.
  EXPECT_NEAR(macro_f1(p), (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0, 1e-15);
  const PredictionSet perfect = make({0.9, 0.1, 0.2, 0.8}, 2, {0, 1});
  EXPECT_EQ(macro_auroc(perfect), 1.0);
  const PredictionSet tied = make({0.5, 0.5, 0.5, 0.5}, 2, {0, 1});
  EXPECT_EQ(macro_auroc(tied), 0.5);
  EXPECT_TRUE(std::isnan(macro_auroc(make({0.5, 0.5}, 2, {0}))));
}

double auroc_oracle(const PredictionSet& p) {
  const std::size_t c = p.probs.dim(1);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < c; ++k) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p.labels[i] != k) continue;
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (p.labels[j] == k) continue;
        const double a = p.probs[i * c + k], b = p.probs[j * c + k];
        wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
        pairs += 1.0;
      }
    }
    if (pairs > 0) {
      total += wins / pairs;
      ++used;
    }
  }
  return total / used;
}

TEST(MetricsTest, OraclesOnRandomSets) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> size(2, 64);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t classes = 2 + trial % 4;
    const PredictionSet p = random_predictions(size(rng), classes, rng);
    const std::size_t bins = 1 + trial % 20;
    EXPECT_NEAR(ece(p, bins), ece_oracle(p, bins), 1e-12);
    EXPECT_NEAR(mce(p, bins), mce_oracle(p, bins), 1e-12);
    EXPECT_NEAR(brier(p), brier_oracle(p), 1e-12);
    EXPECT_NEAR(nll(p), nll_oracle(p), 1e-12);
    const RiskCoverage rc = risk_coverage(p);
    EXPECT_NEAR(rc.aurc, aurc_oracle(p), 1e-12);
    for (double c : {0.5, 0.7, 0.9}) EXPECT_NEAR(rc.acc_at(c), acc_at_oracle(p, c), 1e-12);
    const double auroc = auroc_oracle(p);
    if (std::isnan(auroc)) {
      EXPECT_TRUE(std::isnan(macro_auroc(p)));
    } else {
      EXPECT_NEAR(macro_auroc(p), auroc, 1e-12);
    }
    EXPECT_GE(mce(p, bins), ece(p, bins) - 1e-15);
    EXPECT_GE(ece(p, bins), 0.0);
    EXPECT_LE(mce(p, bins), 1.0);
    EXPECT_LE(brier(p), 2.0);
  }
}

TEST(MetricsTest, MetricsIgnoreSampleOrder) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    PredictionSet p = random_predictions(30, 3, rng);
    std::iota(p.uncertainty.begin(), p.uncertainty.end(), 0.0);
    std::shuffle(p.uncertainty.begin(), p.uncertainty.end(), rng);
    std::vector<std::size_t> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    PredictionSet q;
    std::vector<double> probs;
    for (std::size_t i : perm) {
      for (std::size_t k = 0; k < 3; ++k) probs.push_back(p.probs[i * 3 + k]);
      q.labels.push_back(p.labels[i]);
      q.uncertainty.push_back(p.uncertainty[i]);
    }
    q.probs = Tensor({30, 3}, probs);
    EXPECT_NEAR(ece(p), ece(q), 1e-12);
    EXPECT_NEAR(mce(p), mce(q), 1e-12);
    EXPECT_NEAR(brier(p), brier(q), 1e-12);
    EXPECT_NEAR(nll(p), nll(q), 1e-12);
    EXPECT_NEAR(risk_coverage(p).aurc, risk_coverage(q).aurc, 1e-12);
  }
}

TEST(MetricsTest, ErrorsLastMinimizesAurc) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 3 + trial % 6;
    PredictionSet p = random_predictions(n, 2, rng);
    std::vector<double> scores(n);
    std::iota(scores.begin(), scores.end(), 0.0);
    double best = 2.0;
    do {
      p.uncertainty = scores;
      best = std::min(best, risk_coverage(p).aurc);
    } while (std::next_permutation(scores.begin(), scores.end()));
    for (std::size_t i = 0; i < n; ++i) p.uncertainty[i] = p.correct(i) ? 0.0 : 1.0;
    EXPECT_NEAR(risk_coverage(p).aurc, best, 1e-12);
  }
}

TEST(MetricsTest, RandomPredictorHasFlatSelectiveAccuracy) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 10000;
  std::vector<double> probs;
  PredictionSet p;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = u(rng);
    probs.insert(probs.end(), {a, 1.0 - a});
    p.labels.push_back(i % 2);
    p.uncertainty.push_back(u(rng));
  }
  p.probs = Tensor({n, 2}, probs);
  const RiskCoverage rc = risk_coverage(p);
  for (double c : {0.5, 0.7, 0.9}) EXPECT_NEAR(rc.acc_at(c), 0.5, 0.05);
}

TEST(MetricsTest, CsvRows) {
  const PredictionSet p = make({0.9, 0.1, 0.2, 0.8}, 2, {0, 0}, {0.1, 0.2});
  const MetricRow row = metric_row("run", 0.4, p);
  EXPECT_EQ(MetricRow::csv_header(),
            "run_id,beta,ece,brier,nll,mce,aurc,acc50,acc70,acc90,accuracy,macro_f1,auroc");
  EXPECT_EQ(row.accuracy, 0.5);
  EXPECT_EQ(row.acc50, 1.0);
  EXPECT_EQ(row.to_csv().rfind("run,0.4,", 0), 0u);
  const std::string curve = risk_coverage_csv(risk_coverage(p));
  EXPECT_EQ(curve.rfind("coverage,selective_risk\n", 0), 0u);
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 3);
}

struct McFixture {
  std::mt19937_64 rng{31};
  Model model{tiny_model_config(), rng};
  Tensor images = random_tensor({3, 1, 32, 32}, rng, 0, 1, false);
  std::vector<std::size_t> labels{0, 1, 2};
};

TEST(MetricsTest, McSinglePassMatchesManualPass) {
  McFixture f;
  McConfig config{1, 0.1, 5};
  const McResult r = mc_predict(f.model, f.images, f.labels, config, {});
  std::seed_seq seq{std::uint64_t{5}, std::uint64_t{0}, std::uint64_t{0x6d63}};
  std::mt19937_64 pass_rng(seq);
  BackboneForwardOptions o;
  o.rng = &pass_rng;
  o.dropout_rate = 0.1;
  const ModelOutput out = f.model.forward(f.images, o);
  const Tensor probs = softmax(out.logits);
  for (std::size_t i = 0; i < probs.numel(); ++i) {
    EXPECT_EQ(r.mean.probs[i], probs[i]);
    EXPECT_EQ(r.per_pass[i], probs[i]);
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.mean.uncertainty[i], out.uncertainty[i]);
}

TEST(MetricsTest, McWithoutDropoutIsConstant) {
  McFixture f;
  const McResult r = mc_predict(f.model, f.images, f.labels, McConfig{4, 0.0, 9}, {});
  const PredictionSet det = predict(f.model, f.images, f.labels, {});
  for (double v : r.variance.values()) EXPECT_EQ(v, 0.0);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(r.per_pass[t * 9 + i], det.probs[i]);
  }
}

TEST(MetricsTest, McMeanIsNormalizedAndSeeded) {
  McFixture f;
  const McConfig config{6, 0.3, 11};
  const McResult a = mc_predict(f.model, f.images, f.labels, config, {});
  const McResult b = mc_predict(f.model, f.images, f.labels, config, {});
  for (std::size_t i = 0; i < 3; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) total += a.mean.probs[i * 3 + k];
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
  for (std::size_t i = 0; i < a.per_pass.numel(); ++i) EXPECT_EQ(a.per_pass[i], b.per_pass[i]);
  double var = 0.0;
  for (double v : a.variance.values()) var += v;
  EXPECT_GT(var, 0.0);
  EXPECT_THROW(mc_predict(f.model, f.images, f.labels, McConfig{0, 0.1, 1}, {}), ContractError);
}

TEST(MetricsTest, BatchSizeDoesNotChangePredictions) {
  McFixture f;
  InferenceOptions small;
  small.batch_size = 2;
  const PredictionSet a = predict(f.model, f.images, f.labels, {});
  const PredictionSet b = predict(f.model, f.images, f.labels, small);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(a.probs[i], b.probs[i], 1e-15);
}

TEST(MetricsTest, BaselineRanksByConfidence) {
  McFixture f;
  InferenceOptions base;
  base.mode = Mode::kBaseline;
  const PredictionSet p = predict(f.model, f.images, f.labels, base);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(p.uncertainty[i], 1.0 - p.confidence(i));
}

}  // namespace
}  // namespace mfur
