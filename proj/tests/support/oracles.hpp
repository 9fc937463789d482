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

#ifndef MFUR_TESTS_SUPPORT_ORACLES_HPP_
#define MFUR_TESTS_SUPPORT_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "mfur/metrics.hpp"
#include "mfur/tensor.hpp"

// Loop-based reference metrics, written without reusing library helpers.
namespace mfur::testing {

struct Row {
  double conf = 0.0;
  bool correct = false;
};

inline std::vector<Row> rows_of(const PredictionSet& p) {
  const std::size_t c = p.probs.dim(1);
  std::vector<Row> rows;
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (p.probs[i * c + k] > p.probs[i * c + best]) best = k;
    }
    rows.push_back({p.probs[i * c + best], best == p.labels[i]});
  }
  return rows;
}

// Per-bin (gap, count) with bin b covering (b / bins, (b + 1) / bins].
inline std::vector<std::pair<double, std::size_t>> bin_gaps(const PredictionSet& p,
                                                            std::size_t bins) {
  const auto rows = rows_of(p);
  std::vector<std::pair<double, std::size_t>> out;
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / bins, hi = static_cast<double>(b + 1) / bins;
    double conf = 0.0, acc = 0.0;
    std::size_t n = 0;
    for (const Row& r : rows) {
      const bool inside = r.conf > lo && r.conf <= hi;
      if (!inside) continue;
      conf += r.conf;
      acc += r.correct ? 1.0 : 0.0;
      ++n;
    }
    if (n > 0) out.emplace_back(std::abs(acc / n - conf / n), n);
  }
  return out;
}

inline double ece_oracle(const PredictionSet& p, std::size_t bins) {
  double total = 0.0;
  for (const auto& [gap, n] : bin_gaps(p, bins)) {
    total += static_cast<double>(n) / p.labels.size() * gap;
  }
  return total;
}

inline double mce_oracle(const PredictionSet& p, std::size_t bins) {
  double worst = 0.0;
  for (const auto& [gap, n] : bin_gaps(p, bins)) worst = std::max(worst, gap);
  return worst;
}

inline double brier_oracle(const PredictionSet& p) {
  const std::size_t c = p.probs.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double d = p.probs[i * c + k] - (k == p.labels[i] ? 1.0 : 0.0);
      total += d * d;
    }
  }
  return total / p.labels.size();
}

inline double nll_oracle(const PredictionSet& p) {
  const std::size_t c = p.probs.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    total -= std::log(std::max(p.probs[i * c + p.labels[i]], 1e-12));
  }
  return total / p.labels.size();
}

// Indices in the order they are accepted: lower uncertainty first, lower
// index on ties. Selection sort keeps this independent of std::sort.
inline std::vector<std::size_t> acceptance_order(const std::vector<double>& u) {
  std::vector<std::size_t> order;
  std::vector<bool> used(u.size(), false);
  for (std::size_t step = 0; step < u.size(); ++step) {
    std::size_t pick = u.size();
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (used[i]) continue;
      if (pick == u.size() || u[i] < u[pick]) pick = i;
    }
    used[pick] = true;
    order.push_back(pick);
  }
  return order;
}

inline std::vector<double> prefix_risks(const PredictionSet& p) {
  const auto rows = rows_of(p);
  const auto order = acceptance_order(p.uncertainty);
  std::vector<double> risks;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    double errors = 0.0;
    for (std::size_t j = 0; j < k; ++j) errors += rows[order[j]].correct ? 0.0 : 1.0;
    risks.push_back(errors / k);
  }
  return risks;
}

inline double aurc_oracle(const PredictionSet& p) {
  double total = 0.0;
  for (double r : prefix_risks(p)) total += r;
  return total / p.labels.size();
}

inline double acc_at_oracle(const PredictionSet& p, double coverage) {
  const std::size_t n = p.labels.size();
  std::size_t k = 1;
  while (static_cast<double>(k) < coverage * n - 1e-9) ++k;
  return 1.0 - prefix_risks(p)[k - 1];
}

// Random simplex rows, labels and uncertainties; about one in four
// uncertainty values repeats an earlier one to exercise ties.
inline PredictionSet random_predictions(std::size_t n, std::size_t classes,
                                        std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> label(0, classes - 1);
  std::vector<double> probs(n * classes);
  PredictionSet p;
  for (std::size_t i = 0; i < n; ++i) {
    const double sharp = 0.5 + 6.0 * u(rng);
    double z = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      probs[i * classes + k] = std::exp(sharp * u(rng));
      z += probs[i * classes + k];
    }
    for (std::size_t k = 0; k < classes; ++k) probs[i * classes + k] /= z;
    p.labels.push_back(label(rng));
    if (i > 0 && u(rng) < 0.25) {
      p.uncertainty.push_back(p.uncertainty[static_cast<std::size_t>(u(rng) * i)]);
    } else {
      p.uncertainty.push_back(u(rng));
    }
  }
  p.probs = Tensor({n, classes}, probs);
  return p;
}

}  // namespace mfur::testing

#endif  // MFUR_TESTS_SUPPORT_ORACLES_HPP_
