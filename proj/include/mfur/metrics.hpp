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

#ifndef MFUR_METRICS_HPP_
#define MFUR_METRICS_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mfur/backbone.hpp"
#include "mfur/tensor.hpp"

namespace mfur {

class Model;

struct PredictionSet {
  Tensor probs;  // [B x C]
  std::vector<std::size_t> labels;
  std::vector<double> uncertainty;

  // Checks row sums (1e-6), label range and lengths.
  void validate() const;
  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return probs.dim(1); }
  double confidence(std::size_t i) const;
  std::size_t predicted(std::size_t i) const;  // first argmax
  bool correct(std::size_t i) const { return predicted(i) == labels[i]; }
};

double ece(const PredictionSet& preds, std::size_t bins = 15);
double mce(const PredictionSet& preds, std::size_t bins = 15);
double brier(const PredictionSet& preds);
double nll(const PredictionSet& preds);
double accuracy(const PredictionSet& preds);
double macro_f1(const PredictionSet& preds);
// Macro one-vs-rest; classes lacking positives or negatives are skipped.
// NaN when no class qualifies.
double macro_auroc(const PredictionSet& preds);

// Equal-width bin on (0, 1] holding `confidence`.
std::size_t confidence_bin(double confidence, std::size_t bins);

struct RiskCoverage {
  double aurc = 0.0;
  std::vector<std::pair<double, double>> curve;  // (coverage, selective risk)
  double acc_at(double coverage) const;
};

RiskCoverage risk_coverage(const PredictionSet& preds);

struct McConfig {
  std::size_t passes = 20;
  double dropout_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct McResult {
  PredictionSet mean;
  Tensor per_pass;  // [T x B x C]
  Tensor variance;  // [B x C]
};

struct InferenceOptions {
  Mode mode = Mode::kUg2rlpr;
  std::optional<double> beta_override;
  std::size_t batch_size = 64;
};

// Dropout-free single pass.
PredictionSet predict(const Model& model, const Tensor& images,
                      const std::vector<std::size_t>& labels, const InferenceOptions& options);

McResult mc_predict(const Model& model, const Tensor& images,
                    const std::vector<std::size_t>& labels, const McConfig& config,
                    const InferenceOptions& options);

struct MetricRow {
  std::string run_id;
  double beta = 0.0;
  double ece = 0.0;
  double brier = 0.0;
  double nll = 0.0;
  double mce = 0.0;
  double aurc = 0.0;
  double acc50 = 0.0;
  double acc70 = 0.0;
  double acc90 = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double auroc = 0.0;

  static std::string csv_header();
  std::string to_csv() const;
};

MetricRow metric_row(const std::string& run_id, double beta, const PredictionSet& preds,
                     std::size_t bins = 15);

std::string risk_coverage_csv(const RiskCoverage& rc);

}  // namespace mfur

#endif  // MFUR_METRICS_HPP_
