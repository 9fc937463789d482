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

#ifndef MFUR_TRAINER_HPP_
#define MFUR_TRAINER_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mfur/data.hpp"
#include "mfur/metrics.hpp"
#include "mfur/model.hpp"
#include "mfur/objectives.hpp"

namespace mfur {

enum class OptimizerKind { kSgd, kAdam };
enum class Monitor { kValLoss, kValAccuracy, kValAuroc };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t patience = 10;
  Monitor monitor = Monitor::kValLoss;
  std::uint64_t seed = 7;
  Mode mode = Mode::kUg2rlpr;
  LossWeights weights;

  void validate() const;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, ParamList params);

  // Applies one update from the gradients currently stored on the
  // parameters; missing gradients count as zero.
  void step();
  void zero_grad();
  std::uint64_t steps() const { return steps_; }

  void export_state(std::vector<NamedArray>& out) const;
  // Throws LoadError when an entry is missing or mis-shaped.
  void import_state(const std::vector<NamedArray>& in);

 private:
  TrainConfig config_;
  ParamList params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t steps_ = 0;
};

struct Checkpoint {
  std::string config;  // resolved run configuration text
  std::vector<NamedArray> tensors;
  std::uint64_t epoch = 0;
  std::string rng_state;

  const NamedArray* find(std::string_view name) const;
  std::string encode() const;
  static Checkpoint decode(std::string_view bytes, std::string_view origin = "<memory>");
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

// Copies checkpointed parameters into the model; throws LoadError on a
// missing name or shape mismatch.
void apply_checkpoint(const Checkpoint& checkpoint, const Model& model);

struct HistoryRow {
  std::size_t epoch = 0;
  double train_total = 0.0;
  double train_ce = 0.0;
  double train_routing = 0.0;
  double train_cluster = 0.0;
  double train_diversity = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
  double val_auroc = 0.0;

  static std::string csv_header();
  std::string to_csv() const;
};

std::string history_csv(const std::vector<HistoryRow>& rows);

struct EvalResult {
  PredictionSet preds;
  MetricRow row;
};

// Without `mc` a single deterministic pass runs with dropout disabled.
EvalResult evaluate(const Model& model, const Dataset& data, Mode mode,
                    const std::optional<McConfig>& mc, std::optional<double> beta_override,
                    const std::string& run_id, std::size_t bins = 15);

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;
  bool diverged = false;
  std::string message;
};

class Trainer {
 public:
  Trainer(const ModelConfig& model_config, const TrainConfig& config, const Dataset& train,
          const Dataset& val, std::string config_snapshot = {});

  // One pass of updates over the shuffled training set followed by the
  // deterministic evaluation row. Returns nullopt when a loss goes
  // non-finite; parameters are then left mid-epoch.
  std::optional<HistoryRow> run_epoch();

  // Full loop with early stopping, starting after the current epoch.
  TrainResult train();

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& checkpoint);

  const Model& model() const { return model_; }
  std::size_t epoch() const { return epoch_; }
  const std::vector<HistoryRow>& history() const { return history_; }

  // Per-sample training loss breakdown averaged over the set, no dropout.
  LossBreakdown dataset_loss(const Dataset& data) const;

 private:
  double monitor_value(const HistoryRow& row) const;
  bool improved(double value) const;

  ModelConfig model_config_;
  TrainConfig config_;
  const Dataset& train_;
  const Dataset& val_;
  std::string snapshot_;
  std::mt19937_64 init_rng_;
  Model model_;
  Optimizer optimizer_;
  std::mt19937_64 rng_;
  std::size_t epoch_ = 0;
  std::vector<HistoryRow> history_;
  double best_value_ = 0.0;
  bool has_best_ = false;
  std::size_t bad_epochs_ = 0;
};

}  // namespace mfur

#endif  // MFUR_TRAINER_HPP_
