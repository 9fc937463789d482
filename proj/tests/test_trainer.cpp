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
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "mfur/data.hpp"
#include "mfur/errors.hpp"
#include "mfur/objectives.hpp"
#include "mfur/ops.hpp"
#include "mfur/trainer.hpp"
#include "support/fixtures.hpp"

namespace mfur {
namespace {

using testing::tiny_model_config;

const SplitSet& tiny_splits() {
  static const SplitSet splits = [] {
    SyntheticSpec s;
    s.train = 24;
    s.val = 12;
    s.test = 12;
    return generate(s);
  }();
  return splits;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.lr = 1e-3;
  return c;
}

std::vector<double> flat_params(const Model& model) {
  std::vector<double> out;
  for (const auto& [name, p] : model.parameters()) {
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return out;
}

TEST(TrainerTest, ConfigValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.patience = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = TrainConfig{};
  c.lr = -1e-3;
  EXPECT_THROW(c.validate(), ContractError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(TrainerTest, SgdStepMatchesClosedForm) {
  TrainConfig c;
  c.optimizer = OptimizerKind::kSgd;
  c.lr = 0.1;
  const Tensor x({2}, std::vector<double>{1.0, -2.0}, true);
  Optimizer opt(c, {{"x", x}});
  backward(sum(mul(Tensor({2}, std::vector<double>{1.5, 0.5}), square(x))) * 0.5);
  opt.step();
  EXPECT_NEAR(x[0], 1.0 - 0.1 * 1.5, 1e-12);
  EXPECT_NEAR(x[1], -2.0 - 0.1 * (0.5 * -2.0), 1e-12);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(TrainerTest, AdamStepsMatchClosedForm) {
  TrainConfig c;
  c.lr = 0.01;
  const double a[2] = {1.5, 0.5};
  double ref[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  const Tensor x({2}, std::vector<double>{ref[0], ref[1]}, true);
  Optimizer opt(c, {{"x", x}});
  for (int t = 1; t <= 3; ++t) {
    opt.zero_grad();
    backward(sum(mul(Tensor({2}, std::vector<double>{a[0], a[1]}), square(x))) * 0.5);
    opt.step();
    for (int i = 0; i < 2; ++i) {
      const double g = a[i] * ref[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(x[i], ref[i], 1e-12) << "step " << t;
    }
  }
}

TEST(TrainerTest, OptimizerStateRoundTrip) {
  TrainConfig c;
  const Tensor x({2}, std::vector<double>{1.0, 2.0}, true);
  Optimizer opt(c, {{"x", x}});
  backward(sum(square(x)));
  opt.step();
  std::vector<NamedArray> state;
  opt.export_state(state);
  const Tensor y({2}, std::vector<double>{1.0, 2.0}, true);
  Optimizer other(c, {{"x", y}});
  other.import_state(state);
  EXPECT_EQ(other.steps(), 1u);
  state.pop_back();
  Optimizer broken(c, {{"x", y}});
  EXPECT_THROW(broken.import_state(state), LoadError);
}

TEST(TrainerTest, SmallStepsReduceLossOnFixedBatch) {
  std::mt19937_64 rng(3);
  const Model model(tiny_model_config(), rng);
  TrainConfig c;
  c.lr = 1e-3;
  Optimizer opt(c, model.parameters());
  const Batch batch = tiny_splits().train.batch({0, 1, 2, 3, 4, 5, 6, 7});
  double previous = 0.0;
  for (int step = 0; step < 6; ++step) {
    opt.zero_grad();
    const ModelOutput out = model.forward(batch.images, {}, &batch.tissue);
    const LossBreakdown loss =
        total_loss(loss_parts(model, out, batch.labels, &batch.tissue), c.weights);
    if (step > 0) {
      EXPECT_LT(loss.total_value, previous) << "step " << step;
    }
    previous = loss.total_value;
    backward(loss.total);
    opt.step();
  }
}

TEST(TrainerTest, ZeroLearningRateFreezesEverything) {
  TrainConfig c = quick_config();
  c.lr = 0.0;
  c.epochs = 3;
  c.patience = 5;
  Trainer t(tiny_model_config(), c, tiny_splits().train, tiny_splits().val);
  const std::vector<double> before = flat_params(t.model());
  const TrainResult r = t.train();
  EXPECT_EQ(flat_params(t.model()), before);
  ASSERT_EQ(r.history.size(), 3u);
  EXPECT_EQ(r.history[0].train_total, r.history[2].train_total);
  EXPECT_EQ(r.history[0].val_loss, r.history[1].val_loss);
}

TEST(TrainerTest, PatienceStopsAfterNonImprovingEpoch) {
  TrainConfig c = quick_config();
  c.lr = 0.0;
  c.epochs = 10;
  c.patience = 1;
  Trainer t(tiny_model_config(), c, tiny_splits().train, tiny_splits().val);
  const TrainResult r = t.train();
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_FALSE(r.diverged);
}

TEST(TrainerTest, SameSeedSameHistory) {
  const TrainConfig c = quick_config();
  Trainer a(tiny_model_config(), c, tiny_splits().train, tiny_splits().val);
  Trainer b(tiny_model_config(), c, tiny_splits().train, tiny_splits().val);
  const std::string ha = history_csv(a.train().history);
  const std::string hb = history_csv(b.train().history);
  EXPECT_EQ(ha, hb);
  EXPECT_EQ(ha.rfind(HistoryRow::csv_header(), 0), 0u);
  TrainConfig other = c;
  other.seed = 8;
  Trainer d(tiny_model_config(), other, tiny_splits().train, tiny_splits().val);
  EXPECT_NE(history_csv(d.train().history), ha);
}

TEST(TrainerTest, CheckpointRoundTripResumesBitwise) {
  const TrainConfig c = quick_config();
  Trainer a(tiny_model_config(), c, tiny_splits().train, tiny_splits().val, "snapshot");
  ASSERT_TRUE(a.run_epoch());
  const Checkpoint saved = a.checkpoint();
  EXPECT_EQ(saved.epoch, 1u);
  EXPECT_EQ(saved.config, "snapshot");

  testing::TempDir dir("ckpt");
  saved.save(dir.path() / "c.mfur");
  const Checkpoint loaded = Checkpoint::load(dir.path() / "c.mfur");
  EXPECT_EQ(loaded.encode(), saved.encode());

  Trainer b(tiny_model_config(), c, tiny_splits().train, tiny_splits().val, "snapshot");
  b.restore(loaded);
  EXPECT_EQ(flat_params(b.model()), flat_params(a.model()));
  const auto ra = a.run_epoch();
  const auto rb = b.run_epoch();
  ASSERT_TRUE(ra && rb);
  EXPECT_EQ(ra->to_csv(), rb->to_csv());
  EXPECT_EQ(flat_params(b.model()), flat_params(a.model()));
  EXPECT_EQ(a.checkpoint().encode(), b.checkpoint().encode());
}

TEST(TrainerTest, CheckpointDecodeErrors) {
  Trainer t(tiny_model_config(), quick_config(), tiny_splits().train, tiny_splits().val);
  const std::string bytes = t.checkpoint().encode();
  EXPECT_EQ(bytes.substr(0, 4), "MFUR");
  std::string bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(Checkpoint::decode(bad), FormatError);
  EXPECT_THROW(Checkpoint::decode(bytes.substr(0, bytes.size() / 2)), FormatError);
}

TEST(TrainerTest, ApplyCheckpointRejectsOtherShapes) {
  Trainer t(tiny_model_config(), quick_config(), tiny_splits().train, tiny_splits().val);
  ModelConfig wide = tiny_model_config();
  wide.backbone.stages[1].dim = 16;
  std::mt19937_64 rng(1);
  const Model other(wide, rng);
  EXPECT_THROW(apply_checkpoint(t.checkpoint(), other), LoadError);
  Checkpoint missing = t.checkpoint();
  missing.tensors.erase(missing.tensors.begin());
  EXPECT_THROW(apply_checkpoint(missing, t.model()), LoadError);
}

TEST(TrainerTest, EvaluateReproducesBestHistoryRow) {
  TrainConfig c = quick_config();
  c.epochs = 3;
  Trainer t(tiny_model_config(), c, tiny_splits().train, tiny_splits().val);
  const TrainResult r = t.train();
  std::mt19937_64 rng(0);
  const Model model(tiny_model_config(), rng);
  apply_checkpoint(r.best, model);
  const EvalResult e = evaluate(model, tiny_splits().val, c.mode, std::nullopt, std::nullopt, "x");
  const HistoryRow& best = r.history[r.best_epoch - 1];
  EXPECT_NEAR(e.row.nll, best.val_loss, 1e-12);
  EXPECT_NEAR(e.row.accuracy, best.val_accuracy, 1e-12);
  EXPECT_NEAR(e.row.macro_f1, best.val_macro_f1, 1e-12);
  if (!std::isnan(best.val_auroc)) EXPECT_NEAR(e.row.auroc, best.val_auroc, 1e-12);
}

TEST(TrainerTest, BetaOverrideTouchesOnlyGates) {
  Trainer t(tiny_model_config(), quick_config(), tiny_splits().train, tiny_splits().val);
  ASSERT_TRUE(t.run_epoch());
  const std::vector<double> before = flat_params(t.model());
  const EvalResult a = evaluate(t.model(), tiny_splits().test, Mode::kUg2rlpr, std::nullopt,
                                std::nullopt, "a");
  const EvalResult b =
      evaluate(t.model(), tiny_splits().test, Mode::kUg2rlpr, std::nullopt, 0.0, "b");
  EXPECT_EQ(flat_params(t.model()), before);
  EXPECT_EQ(a.row.beta, 0.8);
  EXPECT_EQ(b.row.beta, 0.0);
  bool differs = false;
  for (std::size_t i = 0; i < a.preds.probs.numel(); ++i) {
    differs |= a.preds.probs[i] != b.preds.probs[i];
  }
  EXPECT_TRUE(differs);
}

TEST(TrainerTest, DivergenceIsReported) {
  TrainConfig c = quick_config();
  c.optimizer = OptimizerKind::kSgd;
  c.lr = 1e300;
  c.epochs = 3;
  Trainer t(tiny_model_config(), c, tiny_splits().train, tiny_splits().val);
  const TrainResult r = t.train();
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.message.empty());
  for (const auto& a : r.last.tensors) {
    for (double v : a.values) ASSERT_TRUE(std::isfinite(v)) << a.name;
  }
}

}  // namespace
}  // namespace mfur
