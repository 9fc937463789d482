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

#include "mfur/cli.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "mfur/config.hpp"
#include "mfur/data.hpp"
#include "mfur/errors.hpp"
#include "mfur/metrics.hpp"
#include "mfur/model.hpp"
#include "mfur/ops.hpp"
#include "mfur/prototypes.hpp"
#include "mfur/trainer.hpp"

namespace mfur {

namespace {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

// Registers every config key as a --dotted.key option.
class KeyFlags {
 public:
  void attach(CLI::App* app) {
    for (const auto& k : config_keys()) {
      CLI::Option* opt = app->add_option("--" + k.key, values_[k.key], k.help);
      opt->group("Config keys");
      options_.emplace_back(k.key, opt);
    }
  }

  Overrides collect() const {
    Overrides out;
    for (const auto& [key, opt] : options_) {
      if (opt->count() > 0) out.emplace_back(key, values_.at(key));
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> options_;
};

Overrides file_layer(const std::string& path) {
  if (path.empty()) return {};
  return parse_config_text(read_text(path), path);
}

const char* env_seed() { return std::getenv("MFUR_SEED"); }

struct LoadedModel {
  RunConfig config;
  std::unique_ptr<Model> model;
};

LoadedModel model_from_checkpoint(const Checkpoint& ckpt, std::string_view origin,
                                  const std::vector<Overrides>& extra) {
  std::vector<Overrides> layers{parse_config_text(ckpt.config, origin)};
  layers.insert(layers.end(), extra.begin(), extra.end());
  LoadedModel out;
  out.config = resolve_config(layers, env_seed());
  std::mt19937_64 rng(0);
  out.model = std::make_unique<Model>(out.config.model, rng);
  apply_checkpoint(ckpt, *out.model);
  return out;
}

std::optional<McConfig> mc_of(const RunConfig& c) {
  if (!c.eval_mc) return std::nullopt;
  c.mc.validate();
  return c.mc;
}

std::string mode_name(Mode m) { return m == Mode::kBaseline ? "baseline" : "ug2rlpr"; }

std::vector<double> parse_betas(const std::string& text) {
  std::vector<double> betas;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double b = 0.0;
    try {
      std::size_t used = 0;
      b = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw UsageError(fmt::format("--betas: '{}' is not a number", item));
    }
    if (!(b >= 0.0 && b <= 1.0)) {
      throw UsageError(fmt::format("--betas: beta {} outside [0, 1]", b));
    }
    betas.push_back(b);
  }
  if (betas.empty()) throw UsageError("--betas needs at least one value");
  return betas;
}

const Dataset& pick_split(const SplitSet& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  throw UsageError(fmt::format("--split must be train, val or test, got '{}'", name));
}

void adopt_data_shape(RunConfig& cfg, const SplitSet& splits) {
  cfg.model.num_classes = splits.train.num_classes;
  cfg.model.backbone.in_channels = splits.train.channels;
  cfg.model.image_height = splits.train.height;
  cfg.model.image_width = splits.train.width;
}

struct TrainRun {
  TrainResult result;
  LoadedModel best;
};

TrainRun train_once(const RunConfig& cfg, const SplitSet& splits) {
  cfg.model.validate();
  cfg.train.validate();
  const std::string echo = echo_config(cfg);
  Trainer trainer(cfg.model, cfg.train, splits.train, splits.val, echo);
  TrainRun run;
  run.result = trainer.train();
  run.best = model_from_checkpoint(run.result.best, "checkpoint", {});
  return run;
}

int cmd_gen(const std::string& out_dir, bool force, const Overrides& file, const Overrides& flags,
            std::ostream& out) {
  const RunConfig cfg = resolve_config({file, flags}, env_seed());
  cfg.spec.validate();
  const fs::path dir(out_dir);
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) {
      throw UsageError(fmt::format("'{}' is not empty; pass --force to overwrite", out_dir));
    }
    for (const char* sub : {"images", "masks"}) fs::remove_all(dir / sub);
  }
  const SplitSet splits = generate(cfg.spec);
  save_splits(splits, dir);
  write_text(dir / "config.txt", echo_config(cfg));
  fmt::print(out, "wrote {} train, {} val, {} test samples to {}\n", splits.train.size(),
             splits.val.size(), splits.test.size(), out_dir);
  return kExitOk;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir, const Overrides& file,
              const Overrides& flags, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve_config({file, flags}, env_seed());
  LabelRemap remap;
  const SplitSet splits = load_splits(data_dir, &remap);
  if (!remap.identity()) fmt::print(out, "label remap:\n{}", remap.report());
  adopt_data_shape(cfg, splits);
  cfg.model.validate();
  cfg.train.validate();
  if (cfg.eval_mc) cfg.mc.validate();

  const fs::path dir(out_dir);
  fs::create_directories(dir / "checkpoints");
  const std::string echo = echo_config(cfg);
  write_text(dir / "config.txt", echo);

  Trainer trainer(cfg.model, cfg.train, splits.train, splits.val, echo);
  const TrainResult result = trainer.train();
  write_text(dir / "history.csv", history_csv(result.history));
  result.best.save(dir / "checkpoints" / "best.mfur");
  result.last.save(dir / "checkpoints" / "last.mfur");
  if (result.diverged) {
    fmt::print(err, "training diverged: {}\n", result.message);
    return kExitDiverged;
  }
  fmt::print(out, "trained {} epochs, best epoch {} ({})\n", result.history.size(),
             result.best_epoch, result.message.empty() ? "epoch limit" : result.message);

  if (splits.test.size() > 0) {
    const LoadedModel best = model_from_checkpoint(result.best, "checkpoint", {});
    const std::string run_id = fmt::format("{}-seed{}", mode_name(cfg.train.mode), cfg.train.seed);
    const EvalResult ev =
        evaluate(*best.model, splits.test, cfg.train.mode, mc_of(cfg), std::nullopt, run_id,
                 cfg.bins);
    write_text(dir / "metrics.csv", MetricRow::csv_header() + "\n" + ev.row.to_csv() + "\n");
    write_text(dir / "risk_coverage.csv", risk_coverage_csv(risk_coverage(ev.preds)));
    fmt::print(out, "{}\n{}\n", MetricRow::csv_header(), ev.row.to_csv());
  }
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& split,
             const std::string& out_dir, std::optional<double> beta, const Overrides& file,
             const Overrides& flags, std::ostream& out) {
  if (beta && !(*beta >= 0.0 && *beta <= 1.0)) {
    throw UsageError(fmt::format("--beta {} outside [0, 1]", *beta));
  }
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  const LoadedModel loaded = model_from_checkpoint(ckpt, ckpt_path, {file, flags});
  const SplitSet splits = load_splits(data_dir);
  const Dataset& data = pick_split(splits, split);
  const RunConfig& cfg = loaded.config;
  const std::string run_id = fmt::format("{}-{}", mode_name(cfg.train.mode), split);
  const EvalResult ev =
      evaluate(*loaded.model, data, cfg.train.mode, mc_of(cfg), beta, run_id, cfg.bins);
  const std::string table = MetricRow::csv_header() + "\n" + ev.row.to_csv() + "\n";
  if (!out_dir.empty()) {
    write_text(fs::path(out_dir) / "metrics.csv", table);
    write_text(fs::path(out_dir) / "risk_coverage.csv", risk_coverage_csv(risk_coverage(ev.preds)));
  }
  out << table;
  return kExitOk;
}

int cmd_sweep(const std::string& ckpt_path, const std::string& data_dir, const std::string& split,
              const std::string& betas_text, const std::string& out_file, bool retrain,
              const Overrides& file, const Overrides& flags, std::ostream& out) {
  const std::vector<double> betas = parse_betas(betas_text);
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  const LoadedModel loaded = model_from_checkpoint(ckpt, ckpt_path, {file, flags});
  const SplitSet splits = load_splits(data_dir);
  const Dataset& data = pick_split(splits, split);
  const RunConfig& cfg = loaded.config;

  std::string table = MetricRow::csv_header() + "\n";
  for (double beta : betas) {
    const std::string run_id = fmt::format("beta={}", beta);
    EvalResult ev;
    if (retrain) {
      RunConfig c = cfg;
      auto& schedule = c.model.backbone.beta_schedule;
      for (std::size_t s = c.model.backbone.ugtr_from_stage; s < schedule.size(); ++s) {
        schedule[s] = beta;
      }
      const TrainRun run = train_once(c, splits);
      ev = evaluate(*run.best.model, data, c.train.mode, mc_of(c), beta, run_id, c.bins);
    } else {
      ev = evaluate(*loaded.model, data, cfg.train.mode, mc_of(cfg), beta, run_id, cfg.bins);
    }
    table += ev.row.to_csv() + "\n";
  }
  if (!out_file.empty()) write_text(out_file, table);
  out << table;
  return kExitOk;
}

int cmd_explain(const std::string& ckpt_path, const std::string& input, const std::string& out_dir,
                bool zero_evidence, std::size_t top, std::optional<double> beta,
                const Overrides& file, const Overrides& flags, std::ostream& out,
                std::ostream& err) {
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  const LoadedModel loaded = model_from_checkpoint(ckpt, ckpt_path, {file, flags});
  const Model& model = *loaded.model;
  const Tensor image = read_image(input);
  const Tensor batch = reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});

  BackboneForwardOptions fo;
  fo.mode = loaded.config.train.mode;
  fo.force_zero_evidence = zero_evidence;
  fo.beta_override = beta;
  NoGradGuard guard;
  const ModelOutput mo = model.forward(batch, fo);

  const fs::path dir(out_dir);
  fs::create_directories(dir);
  const Tensor probs = softmax(mo.logits);
  std::string pred = "class,probability\n";
  for (std::size_t c = 0; c < probs.numel(); ++c) pred += fmt::format("{},{}\n", c, probs[c]);
  write_text(dir / "prediction.csv", pred);

  for (const BlockTrace& t : mo.backbone.blocks) {
    const std::string tag = fmt::format("stage{}_block{}", t.stage, t.block);
    write_tensor(reshape(t.state.token_uncertainty, {t.height, t.width}),
                 dir / fmt::format("sigma_{}.mftn", tag));
    write_tensor(reshape(t.routing.effective_mask, {t.height, t.width}),
                 dir / fmt::format("meff_{}.mftn", tag));
    write_tensor(reshape(t.routing.mask, {t.height, t.width}),
                 dir / fmt::format("mask_{}.mftn", tag));
  }
  if (mo.backbone.blocks.empty()) {
    fmt::print(err, "notice: no refined blocks in {} mode; uncertainty maps skipped\n",
               mode_name(fo.mode));
  }

  if (mo.used_prototypes) {
    const PrototypeBank& bank = *model.prototypes();
    const auto matches = top_matches(mo.backbone.tokens, bank, std::min(top, bank.total()));
    const std::size_t width = mo.backbone.stages.back().width;
    const std::string image_id = fs::path(input).stem().string();
    std::string csv = "image,rank,prototype,class,token,row,col,similarity\n";
    for (std::size_t r = 0; r < matches.size(); ++r) {
      const auto& m = matches[r];
      csv += fmt::format("{},{},{},{},{},{},{},{}\n", image_id, r + 1, m.prototype, m.class_id, m.token,
                         m.token / width, m.token % width, m.similarity);
    }
    write_text(dir / "prototypes.csv", csv);
  } else {
    fmt::print(err, "notice: checkpoint has no active prototype head; similarity export skipped\n");
  }
  fmt::print(out, "wrote explanation files to {}\n", out_dir);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Uncertainty-gated prototype transformer toolkit", "mfur"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, ckpt, split = "test", mode, input;
  std::string betas = "0,0.2,0.4,0.6,0.8,1.0";
  bool force = false, retrain = false, zero_evidence = false;
  std::size_t top = 5;
  std::optional<double> beta;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  auto* train = app.add_subcommand("train", "train a model");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* sweep = app.add_subcommand("sweep-beta", "metric rows across gate coefficients");
  auto* explain = app.add_subcommand("explain", "uncertainty maps and prototype matches");

  std::map<CLI::App*, KeyFlags> keys;
  for (CLI::App* sub : {gen, train, eval, sweep, explain}) {
    sub->add_option("--config", config_path, "key = value config file");
    keys[sub].attach(sub);
  }
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_flag("--force", force, "overwrite a non-empty output directory");

  train->add_option("--data", data_dir, "dataset directory with train/val/test.csv")->required();
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_option("--mode", mode, "baseline or ug2rlpr")
      ->check(CLI::IsMember({"baseline", "ug2rlpr"}));

  eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--split", split, "train, val or test");
  eval->add_option("--out", out_dir, "directory for metrics.csv and risk_coverage.csv");
  eval->add_option("--beta", beta, "gate coefficient override");

  sweep->add_option("--ckpt", ckpt, "checkpoint file")->required();
  sweep->add_option("--data", data_dir, "dataset directory")->required();
  sweep->add_option("--split", split, "train, val or test");
  sweep->add_option("--betas", betas, "comma-separated gate coefficients in [0, 1]");
  sweep->add_option("--out", out_dir, "CSV output file");
  sweep->add_flag("--retrain", retrain, "train a fresh model per beta");

  explain->add_option("--ckpt", ckpt, "checkpoint file")->required();
  explain->add_option("--input", input, "image (.mftn or .pgm)")->required();
  explain->add_option("--out", out_dir, "output directory")->required();
  explain->add_flag("--force-zero-evidence", zero_evidence, "zero all evidence heads");
  explain->add_option("--top", top, "number of prototype matches");
  explain->add_option("--beta", beta, "gate coefficient override");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const Overrides file = file_layer(config_path);
    Overrides flags = keys[sub].collect();
    if (sub == gen) return cmd_gen(out_dir, force, file, flags, out);
    if (sub == train) {
      if (!mode.empty()) flags.emplace_back("train.mode", mode);
      return cmd_train(data_dir, out_dir, file, flags, out, err);
    }
    if (sub == eval) return cmd_eval(ckpt, data_dir, split, out_dir, beta, file, flags, out);
    if (sub == sweep) {
      return cmd_sweep(ckpt, data_dir, split, betas, out_dir, retrain, file, flags, out);
    }
    return cmd_explain(ckpt, input, out_dir, zero_evidence, top, beta, file, flags, out, err);
  } catch (const UsageError& e) {
    fmt::print(err, "usage error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitFailure;
  }
}

}  // namespace mfur
