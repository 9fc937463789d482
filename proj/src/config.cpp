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

#include "mfur/config.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "mfur/errors.hpp"

namespace mfur {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            std::string_view expected) {
  throw UsageError(fmt::format("bad value '{}' for key '{}': expected {}", value, key, expected));
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    const auto out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    bad_value(key, v, "a non-negative integer");
  }
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    bad_value(key, v, "a number");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(parse_double(key, item));
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_size(key, item));
  if (out.empty()) bad_value(key, v, "a comma-separated list of integers");
  return out;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  return fmt::format("{}", fmt::join(v, ","));
}

template <typename Field>
void set_stage_field(RunConfig& c, const std::vector<Field>& values, auto apply) {
  auto& stages = c.model.backbone.stages;
  if (stages.size() != values.size()) stages.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) apply(stages[i], values[i]);
}

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

template <typename E, std::size_t N>
E parse_enum(const std::string& key, const std::string& v, const EnumName<E> (&names)[N]) {
  for (const auto& n : names) {
    if (v == n.name) return n.value;
  }
  std::vector<std::string> options;
  for (const auto& n : names) options.emplace_back(n.name);
  bad_value(key, v, fmt::format("one of {}", fmt::join(options, ", ")));
}

template <typename E, std::size_t N>
std::string enum_name(E value, const EnumName<E> (&names)[N]) {
  for (const auto& n : names) {
    if (n.value == value) return n.name;
  }
  return "?";
}

constexpr EnumName<AttentionKind> kAttentionNames[] = {{AttentionKind::kFull, "full"},
                                                       {AttentionKind::kTopKSparse, "topk_sparse"}};
constexpr EnumName<AggMode> kAggNames[] = {
    {AggMode::kLogSumExp, "logsumexp"}, {AggMode::kMax, "max"}, {AggMode::kMean, "mean"}};
constexpr EnumName<DiversityScope> kScopeNames[] = {{DiversityScope::kWithinClass, "within_class"},
                                                    {DiversityScope::kGlobal, "global"}};
constexpr EnumName<OptimizerKind> kOptimizerNames[] = {{OptimizerKind::kSgd, "sgd"},
                                                       {OptimizerKind::kAdam, "adam"}};
constexpr EnumName<Monitor> kMonitorNames[] = {{Monitor::kValLoss, "val_loss"},
                                               {Monitor::kValAccuracy, "val_accuracy"},
                                               {Monitor::kValAuroc, "val_auroc"}};
constexpr EnumName<Mode> kModeNames[] = {{Mode::kBaseline, "baseline"},
                                         {Mode::kUg2rlpr, "ug2rlpr"}};

// Declares a scalar key bound to one field.
#define MFUR_SIZE_KEY(name, group, help, field)                                              \
  ConfigKey {                                                                                 \
    name, group, help, [](const RunConfig& c) { return fmt::format("{}", c.field); },       \
        [](RunConfig& c, const std::string& v) { c.field = parse_size(name, v); }            \
  }
#define MFUR_U64_KEY(name, group, help, field)                                               \
  ConfigKey {                                                                                 \
    name, group, help, [](const RunConfig& c) { return fmt::format("{}", c.field); },       \
        [](RunConfig& c, const std::string& v) { c.field = parse_u64(name, v); }             \
  }
#define MFUR_DOUBLE_KEY(name, group, help, field)                                            \
  ConfigKey {                                                                                 \
    name, group, help, [](const RunConfig& c) { return fmt::format("{}", c.field); },       \
        [](RunConfig& c, const std::string& v) { c.field = parse_double(name, v); }          \
  }
#define MFUR_BOOL_KEY(name, group, help, field)                                              \
  ConfigKey {                                                                                 \
    name, group, help, [](const RunConfig& c) { return fmt_bool(c.field); },                \
        [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }            \
  }
#define MFUR_ENUM_KEY(name, group, help, field, table)                                       \
  ConfigKey {                                                                                 \
    name, group, help, [](const RunConfig& c) { return enum_name(c.field, table); },        \
        [](RunConfig& c, const std::string& v) { c.field = parse_enum(name, v, table); }     \
  }

std::vector<ConfigKey> build_keys() {
  using G = KeyGroup;
  std::vector<ConfigKey> k = {
      MFUR_SIZE_KEY("spec.classes", G::kSpec, "number of classes", spec.classes),
      MFUR_SIZE_KEY("spec.train", G::kSpec, "training samples", spec.train),
      MFUR_SIZE_KEY("spec.val", G::kSpec, "validation samples", spec.val),
      MFUR_SIZE_KEY("spec.test", G::kSpec, "test samples", spec.test),
      MFUR_SIZE_KEY("spec.height", G::kSpec, "image height", spec.height),
      MFUR_SIZE_KEY("spec.width", G::kSpec, "image width", spec.width),
      MFUR_DOUBLE_KEY("spec.ambiguity", G::kSpec, "mixture plus label-noise level in [0,1]",
                      spec.ambiguity),
      MFUR_DOUBLE_KEY("spec.mask_fraction", G::kSpec, "fraction of samples with tissue masks",
                      spec.mask_fraction),
      MFUR_DOUBLE_KEY("spec.noise", G::kSpec, "pixel noise standard deviation", spec.noise),
      MFUR_U64_KEY("spec.seed", G::kSpec, "generator seed", spec.seed),
      ConfigKey{"spec.class_weights", G::kSpec, "comma list of class frequencies (empty = balanced)",
                [](const RunConfig& c) { return fmt_list(c.spec.class_weights); },
                [](RunConfig& c, const std::string& v) {
                  c.spec.class_weights = parse_doubles("spec.class_weights", v);
                }},
      ConfigKey{"model.preset", G::kModel, "backbone preset: toy or paper4stage",
                [](const RunConfig& c) { return c.preset; },
                [](RunConfig& c, const std::string& v) {
                  c.model.backbone = BackboneConfig::preset(v);
                  c.preset = v;
                }},
      MFUR_SIZE_KEY("model.classes", G::kModel, "number of classes (train sets it from data)",
                    model.num_classes),
      MFUR_SIZE_KEY("model.channels", G::kModel, "input channels (train sets it from data)",
                    model.backbone.in_channels),
      MFUR_SIZE_KEY("model.height", G::kModel, "input height (train sets it from data)",
                    model.image_height),
      MFUR_SIZE_KEY("model.width", G::kModel, "input width (train sets it from data)",
                    model.image_width),
      ConfigKey{"model.depths", G::kModel, "blocks per stage",
                [](const RunConfig& c) {
                  std::vector<std::size_t> v;
                  for (const auto& s : c.model.backbone.stages) v.push_back(s.depth);
                  return fmt_list(v);
                },
                [](RunConfig& c, const std::string& v) {
                  set_stage_field(c, parse_sizes("model.depths", v),
                                  [](StageConfig& s, std::size_t x) { s.depth = x; });
                }},
      ConfigKey{"model.dims", G::kModel, "token width per stage",
                [](const RunConfig& c) {
                  std::vector<std::size_t> v;
                  for (const auto& s : c.model.backbone.stages) v.push_back(s.dim);
                  return fmt_list(v);
                },
                [](RunConfig& c, const std::string& v) {
                  set_stage_field(c, parse_sizes("model.dims", v),
                                  [](StageConfig& s, std::size_t x) { s.dim = x; });
                }},
      ConfigKey{"model.heads", G::kModel, "attention heads per stage",
                [](const RunConfig& c) {
                  std::vector<std::size_t> v;
                  for (const auto& s : c.model.backbone.stages) v.push_back(s.heads);
                  return fmt_list(v);
                },
                [](RunConfig& c, const std::string& v) {
                  set_stage_field(c, parse_sizes("model.heads", v),
                                  [](StageConfig& s, std::size_t x) { s.heads = x; });
                }},
      ConfigKey{"model.downsample", G::kModel, "per stage 1 = 2x2 patch merge on entry",
                [](const RunConfig& c) {
                  std::vector<int> v;
                  for (const auto& s : c.model.backbone.stages) v.push_back(s.downsample ? 1 : 0);
                  return fmt_list(v);
                },
                [](RunConfig& c, const std::string& v) {
                  std::vector<bool> flags;
                  for (const auto& item : split_list(v)) {
                    flags.push_back(parse_bool("model.downsample", item));
                  }
                  if (flags.empty()) bad_value("model.downsample", v, "a list of 0/1");
                  set_stage_field(c, flags, [](StageConfig& s, bool x) { s.downsample = x; });
                }},
      ConfigKey{"model.betas", G::kModel, "gate coefficient per stage",
                [](const RunConfig& c) { return fmt_list(c.model.backbone.beta_schedule); },
                [](RunConfig& c, const std::string& v) {
                  c.model.backbone.beta_schedule = parse_doubles("model.betas", v);
                }},
      MFUR_SIZE_KEY("model.stem_channels", G::kModel, "hidden width of the stem",
                    model.backbone.stem_channels),
      MFUR_ENUM_KEY("model.attention", G::kModel, "full or topk_sparse",
                    model.backbone.attention_kind, kAttentionNames),
      MFUR_DOUBLE_KEY("model.topk_ratio", G::kModel, "kept key fraction for topk_sparse",
                      model.backbone.topk_ratio),
      MFUR_SIZE_KEY("model.ugtr_from_stage", G::kModel, "first stage with refinement",
                    model.backbone.ugtr_from_stage),
      MFUR_DOUBLE_KEY("model.dropout", G::kModel, "dropout rate during training",
                      model.backbone.dropout),
      MFUR_SIZE_KEY("model.mlp_ratio", G::kModel, "MLP hidden width multiple",
                    model.backbone.mlp_ratio),
      MFUR_BOOL_KEY("model.norm_affine", G::kModel, "learned LayerNorm scale and shift",
                    model.backbone.norm_affine),
      MFUR_BOOL_KEY("model.detach_uncertainty", G::kModel,
                    "stop gradients through the uncertainty gates", model.detach_uncertainty),
      MFUR_BOOL_KEY("model.prototypes", G::kModel, "use the prototype head in ug2rlpr mode",
                    model.use_prototypes),
      MFUR_SIZE_KEY("model.per_class", G::kModel, "prototypes per class",
                    model.prototypes.per_class),
      MFUR_BOOL_KEY("model.cosine", G::kModel, "cosine similarity instead of dot product",
                    model.prototypes.use_cosine),
      MFUR_ENUM_KEY("model.agg", G::kModel, "prototype aggregation: logsumexp, max or mean",
                    model.prototypes.agg, kAggNames),
      MFUR_ENUM_KEY("model.diversity_scope", G::kModel, "within_class or global",
                    model.prototypes.diversity_scope, kScopeNames),
      MFUR_DOUBLE_KEY("model.diversity_power", G::kModel, "exponent q of the diversity term",
                      model.prototypes.diversity_power),
      MFUR_DOUBLE_KEY("model.log_temperature", G::kModel, "initial log temperature",
                      model.prototypes.init_log_temperature),
      MFUR_SIZE_KEY("train.epochs", G::kTrain, "maximum epochs", train.epochs),
      MFUR_SIZE_KEY("train.batch_size", G::kTrain, "mini-batch size", train.batch_size),
      MFUR_DOUBLE_KEY("train.lr", G::kTrain, "learning rate", train.lr),
      MFUR_ENUM_KEY("train.optimizer", G::kTrain, "sgd or adam", train.optimizer,
                    kOptimizerNames),
      MFUR_DOUBLE_KEY("train.adam_beta1", G::kTrain, "Adam first-moment decay",
                      train.adam_beta1),
      MFUR_DOUBLE_KEY("train.adam_beta2", G::kTrain, "Adam second-moment decay",
                      train.adam_beta2),
      MFUR_DOUBLE_KEY("train.adam_eps", G::kTrain, "Adam epsilon", train.adam_eps),
      MFUR_SIZE_KEY("train.patience", G::kTrain, "early-stopping patience in epochs",
                    train.patience),
      MFUR_ENUM_KEY("train.monitor", G::kTrain, "val_loss, val_accuracy or val_auroc",
                    train.monitor, kMonitorNames),
      MFUR_U64_KEY("train.seed", G::kTrain, "initialization and shuffling seed", train.seed),
      MFUR_ENUM_KEY("train.mode", G::kTrain, "baseline or ug2rlpr", train.mode, kModeNames),
      MFUR_DOUBLE_KEY("loss.route", G::kLoss, "routing supervision weight", train.weights.route),
      MFUR_DOUBLE_KEY("loss.cluster", G::kLoss, "prototype cluster weight",
                      train.weights.cluster),
      MFUR_DOUBLE_KEY("loss.diversity", G::kLoss, "prototype diversity weight",
                      train.weights.diversity),
      MFUR_SIZE_KEY("mc.T", G::kMc, "stochastic passes", mc.passes),
      MFUR_DOUBLE_KEY("mc.dropout_rate", G::kMc, "dropout rate during MC inference",
                      mc.dropout_rate),
      MFUR_U64_KEY("mc.seed", G::kMc, "MC dropout seed", mc.seed),
      MFUR_BOOL_KEY("eval.mc", G::kEval, "evaluate with MC dropout", eval_mc),
      MFUR_SIZE_KEY("eval.bins", G::kEval, "calibration bins", bins),
  };
  return k;
}

#undef MFUR_SIZE_KEY
#undef MFUR_U64_KEY
#undef MFUR_DOUBLE_KEY
#undef MFUR_BOOL_KEY
#undef MFUR_ENUM_KEY

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

const ConfigKey* find_key(std::string_view key) {
  for (const auto& k : config_keys()) {
    if (k.key == key) return &k;
  }
  return nullptr;
}

Overrides parse_config_text(std::string_view text, std::string_view origin) {
  Overrides out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw UsageError(fmt::format("{}:{}: expected key = value", origin, line_no));
    }
    std::string key = trim(body.substr(0, eq));
    if (!find_key(key)) {
      throw UsageError(fmt::format("{}:{}: unknown config key '{}'", origin, line_no, key));
    }
    out.emplace_back(std::move(key), trim(body.substr(eq + 1)));
  }
  return out;
}

RunConfig resolve_config(const std::vector<Overrides>& layers, const char* env_seed) {
  std::map<std::string, std::string> merged;
  for (const auto& layer : layers) {
    for (const auto& [key, value] : layer) {
      if (!find_key(key)) throw UsageError(fmt::format("unknown config key '{}'", key));
      merged[key] = value;
    }
  }
  RunConfig c;
  if (auto it = merged.find("model.preset"); it != merged.end()) {
    find_key("model.preset")->set(c, it->second);
  }
  for (const auto& k : config_keys()) {
    if (k.key == "model.preset") continue;
    if (auto it = merged.find(k.key); it != merged.end()) k.set(c, it->second);
  }
  if (env_seed && *env_seed) {
    for (const char* key : {"spec.seed", "train.seed", "mc.seed"}) {
      if (!merged.count(key)) find_key(key)->set(c, env_seed);
    }
  }
  return c;
}

std::string echo_config(const RunConfig& config) {
  std::string out;
  for (const auto& k : config_keys()) {
    out += fmt::format("{} = {}\n", k.key, k.get(config));
  }
  return out;
}

}  // namespace mfur
