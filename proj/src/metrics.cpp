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

#include "mfur/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "mfur/errors.hpp"
#include "mfur/model.hpp"
#include "mfur/ops.hpp"

namespace mfur {

void PredictionSet::validate() const {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw DimensionError(fmt::format("prediction set: probs {} for {} labels",
                                     shape_to_string(probs.shape()), labels.size()));
  }
  if (!uncertainty.empty() && uncertainty.size() != labels.size()) {
    throw DimensionError("prediction set: uncertainty length differs from labels");
  }
  const std::size_t c = probs.dim(1);
  const auto p = probs.values();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= c) {
      throw ContractError(fmt::format("label {} at row {} outside [0, {})", labels[i], i, c));
    }
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) total += p[i * c + k];
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError(fmt::format("probability row {} sums to {}", i, total));
    }
  }
}

double PredictionSet::confidence(std::size_t i) const {
  const std::size_t c = num_classes();
  const auto row = probs.values().subspan(i * c, c);
  return *std::max_element(row.begin(), row.end());
}

std::size_t PredictionSet::predicted(std::size_t i) const {
  const std::size_t c = num_classes();
  const auto row = probs.values().subspan(i * c, c);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::size_t confidence_bin(double confidence, std::size_t bins) {
  const double scaled = std::ceil(confidence * static_cast<double>(bins));
  if (scaled <= 1.0) return 0;
  return std::min(static_cast<std::size_t>(scaled) - 1, bins - 1);
}

namespace {

struct BinStats {
  std::vector<std::size_t> count;
  std::vector<double> correct;
  std::vector<double> confidence;
};

BinStats bin_stats(const PredictionSet& preds, std::size_t bins) {
  if (bins == 0) throw ContractError("bin count must be positive");
  BinStats s{std::vector<std::size_t>(bins, 0), std::vector<double>(bins, 0.0),
             std::vector<double>(bins, 0.0)};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double conf = preds.confidence(i);
    const std::size_t b = confidence_bin(conf, bins);
    s.count[b] += 1;
    s.correct[b] += preds.correct(i) ? 1.0 : 0.0;
    s.confidence[b] += conf;
  }
  return s;
}

}  // namespace

double ece(const PredictionSet& preds, std::size_t bins) {
  const BinStats s = bin_stats(preds, bins);
  if (preds.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (s.count[b] == 0) continue;
    const double n = static_cast<double>(s.count[b]);
    total += n / static_cast<double>(preds.size()) *
             std::abs(s.correct[b] / n - s.confidence[b] / n);
  }
  return total;
}

double mce(const PredictionSet& preds, std::size_t bins) {
  const BinStats s = bin_stats(preds, bins);
  double worst = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (s.count[b] == 0) continue;
    const double n = static_cast<double>(s.count[b]);
    worst = std::max(worst, std::abs(s.correct[b] / n - s.confidence[b] / n));
  }
  return worst;
}

double brier(const PredictionSet& preds) {
  if (preds.size() == 0) return 0.0;
  const std::size_t c = preds.num_classes();
  const auto p = preds.probs.values();
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double d = p[i * c + k] - (k == preds.labels[i] ? 1.0 : 0.0);
      total += d * d;
    }
  }
  return total / static_cast<double>(preds.size());
}

double nll(const PredictionSet& preds) {
  if (preds.size() == 0) return 0.0;
  const std::size_t c = preds.num_classes();
  const auto p = preds.probs.values();
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    total -= std::log(std::max(p[i * c + preds.labels[i]], 1e-12));
  }
  return total / static_cast<double>(preds.size());
}

double accuracy(const PredictionSet& preds) {
  if (preds.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds.correct(i) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double macro_f1(const PredictionSet& preds) {
  const std::size_t c = preds.num_classes();
  std::vector<double> tp(c, 0.0), fp(c, 0.0), fn(c, 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::size_t y = preds.labels[i], yhat = preds.predicted(i);
    if (y == yhat) {
      tp[y] += 1.0;
    } else {
      fp[yhat] += 1.0;
      fn[y] += 1.0;
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double denom = 2.0 * tp[k] + fp[k] + fn[k];
    total += denom > 0.0 ? 2.0 * tp[k] / denom : 0.0;
  }
  return total / static_cast<double>(c);
}

double macro_auroc(const PredictionSet& preds) {
  const std::size_t n = preds.size(), c = preds.num_classes();
  const auto p = preds.probs.values();
  double total = 0.0;
  std::size_t used = 0;
  std::vector<std::size_t> order(n);
  std::vector<double> rank(n);
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) pos += preds.labels[i] == k ? 1 : 0;
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) continue;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return p[a * c + k] < p[b * c + k];
    });
    // Mid-ranks for ties.
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && p[order[j + 1] * c + k] == p[order[i] * c + k]) ++j;
      const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
      i = j + 1;
    }
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (preds.labels[i] == k) rank_sum += rank[i];
    }
    const double dp = static_cast<double>(pos), dn = static_cast<double>(neg);
    total += (rank_sum - dp * (dp + 1.0) / 2.0) / (dp * dn);
    ++used;
  }
  if (used == 0) return std::numeric_limits<double>::quiet_NaN();
  return total / static_cast<double>(used);
}

double RiskCoverage::acc_at(double coverage) const {
  if (curve.empty()) throw ContractError("empty risk-coverage curve");
  if (!(coverage > 0.0 && coverage <= 1.0)) {
    throw ContractError(fmt::format("coverage {} outside (0, 1]", coverage));
  }
  const double b = static_cast<double>(curve.size());
  // The epsilon keeps exact products such as 0.7 * 10 from rounding up.
  const double want = std::ceil(coverage * b - 1e-9);
  const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(want), 1,
                                                curve.size());
  return 1.0 - curve[k - 1].second;
}

RiskCoverage risk_coverage(const PredictionSet& preds) {
  const std::size_t n = preds.size();
  if (preds.uncertainty.size() != n) {
    throw ContractError("risk_coverage needs one uncertainty score per sample");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds.uncertainty[a] < preds.uncertainty[b];
  });
  RiskCoverage rc;
  rc.curve.reserve(n);
  std::size_t errors = 0;
  double sum = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    errors += preds.correct(order[k - 1]) ? 0 : 1;
    const double risk = static_cast<double>(errors) / static_cast<double>(k);
    rc.curve.emplace_back(static_cast<double>(k) / static_cast<double>(n), risk);
    sum += risk;
  }
  rc.aurc = n == 0 ? 0.0 : sum / static_cast<double>(n);
  return rc;
}

void McConfig::validate() const {
  if (passes < 1) throw ContractError("mc.T must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ContractError(fmt::format("mc.dropout_rate {} outside [0, 1)", dropout_rate));
  }
}

namespace {

struct PassResult {
  std::vector<double> probs;
  std::vector<double> sigma;
  bool has_sigma = false;
};

PassResult run_pass(const Model& model, const Tensor& images, const InferenceOptions& options,
                    std::mt19937_64* rng, double rate) {
  if (images.rank() != 4) {
    throw DimensionError(fmt::format("images must be [B x C x H x W], got {}",
                                     shape_to_string(images.shape())));
  }
  if (options.batch_size == 0) throw ContractError("inference batch size must be positive");
  NoGradGuard guard;
  const std::size_t n = images.dim(0);
  const std::size_t per_image = images.numel() / std::max<std::size_t>(n, 1);
  const std::size_t c = model.config().num_classes;
  PassResult out;
  out.probs.reserve(n * c);
  const auto all = images.values();
  for (std::size_t start = 0; start < n; start += options.batch_size) {
    const std::size_t count = std::min(options.batch_size, n - start);
    Shape shape = images.shape();
    shape[0] = count;
    Tensor chunk(shape, std::vector<double>(all.begin() + start * per_image,
                                            all.begin() + (start + count) * per_image));
    BackboneForwardOptions fo;
    fo.mode = options.mode;
    fo.rng = rng;
    fo.dropout_rate = rate;
    fo.beta_override = options.beta_override;
    const ModelOutput mo = model.forward(chunk, fo);
    const Tensor probs = softmax(mo.logits);
    out.probs.insert(out.probs.end(), probs.values().begin(), probs.values().end());
    out.has_sigma = !mo.backbone.blocks.empty();
    out.sigma.insert(out.sigma.end(), mo.uncertainty.begin(), mo.uncertainty.end());
  }
  return out;
}

}  // namespace

PredictionSet predict(const Model& model, const Tensor& images,
                      const std::vector<std::size_t>& labels, const InferenceOptions& options) {
  PassResult pass = run_pass(model, images, options, nullptr, 0.0);
  PredictionSet ps;
  ps.probs = Tensor({labels.size(), model.config().num_classes}, std::move(pass.probs));
  ps.labels = labels;
  ps.uncertainty = std::move(pass.sigma);
  ps.validate();
  return ps;
}

McResult mc_predict(const Model& model, const Tensor& images,
                    const std::vector<std::size_t>& labels, const McConfig& config,
                    const InferenceOptions& options) {
  config.validate();
  const std::size_t n = labels.size(), c = model.config().num_classes, t = config.passes;
  std::vector<double> all;
  all.reserve(t * n * c);
  std::vector<double> mean(n * c, 0.0), sigma(n, 0.0);
  bool has_sigma = false;
  for (std::size_t pass = 0; pass < t; ++pass) {
    std::seed_seq seq{config.seed, static_cast<std::uint64_t>(pass), std::uint64_t{0x6d63}};
    std::mt19937_64 rng(seq);
    const PassResult r = run_pass(model, images, options, &rng, config.dropout_rate);
    if (r.probs.size() != n * c) {
      throw DimensionError(fmt::format("mc_predict: {} labels for {} images", n,
                                       r.probs.size() / c));
    }
    all.insert(all.end(), r.probs.begin(), r.probs.end());
    for (std::size_t i = 0; i < n * c; ++i) mean[i] += r.probs[i];
    has_sigma = r.has_sigma;
    if (has_sigma) {
      for (std::size_t i = 0; i < n; ++i) sigma[i] += r.sigma[i];
    }
  }
  const double dt = static_cast<double>(t);
  for (double& v : mean) v /= dt;
  std::vector<double> variance(n * c, 0.0);
  for (std::size_t pass = 0; pass < t; ++pass) {
    for (std::size_t i = 0; i < n * c; ++i) {
      const double d = all[pass * n * c + i] - mean[i];
      variance[i] += d * d;
    }
  }
  for (double& v : variance) v /= dt;

  McResult out;
  out.mean.probs = Tensor({n, c}, std::move(mean));
  out.mean.labels = labels;
  if (has_sigma) {
    for (double& s : sigma) s /= dt;
    out.mean.uncertainty = std::move(sigma);
  } else {
    out.mean.uncertainty.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.mean.uncertainty[i] = 1.0 - out.mean.confidence(i);
  }
  out.mean.validate();
  out.per_pass = Tensor({t, n, c}, std::move(all));
  out.variance = Tensor({n, c}, std::move(variance));
  return out;
}

std::string MetricRow::csv_header() {
  return "run_id,beta,ece,brier,nll,mce,aurc,acc50,acc70,acc90,accuracy,macro_f1,auroc";
}

std::string MetricRow::to_csv() const {
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}", run_id, beta, ece, brier, nll,
                     mce, aurc, acc50, acc70, acc90, accuracy, macro_f1, auroc);
}

MetricRow metric_row(const std::string& run_id, double beta, const PredictionSet& preds,
                     std::size_t bins) {
  MetricRow row;
  row.run_id = run_id;
  row.beta = beta;
  row.ece = ece(preds, bins);
  row.brier = brier(preds);
  row.nll = nll(preds);
  row.mce = mce(preds, bins);
  const RiskCoverage rc = risk_coverage(preds);
  row.aurc = rc.aurc;
  row.acc50 = rc.acc_at(0.5);
  row.acc70 = rc.acc_at(0.7);
  row.acc90 = rc.acc_at(0.9);
  row.accuracy = accuracy(preds);
  row.macro_f1 = macro_f1(preds);
  row.auroc = macro_auroc(preds);
  return row;
}

std::string risk_coverage_csv(const RiskCoverage& rc) {
  std::string out = "coverage,selective_risk\n";
  for (const auto& [coverage, risk] : rc.curve) {
    out += fmt::format("{},{}\n", coverage, risk);
  }
  return out;
}

}  // namespace mfur
