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

#ifndef MFUR_CONFIG_HPP_
#define MFUR_CONFIG_HPP_

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mfur/data.hpp"
#include "mfur/metrics.hpp"
#include "mfur/model.hpp"
#include "mfur/trainer.hpp"

namespace mfur {

struct RunConfig {
  SyntheticSpec spec;
  std::string preset = "toy";
  ModelConfig model;
  TrainConfig train;
  McConfig mc;
  bool eval_mc = true;
  std::size_t bins = 15;
};

enum class KeyGroup { kSpec, kModel, kTrain, kLoss, kMc, kEval };

struct ConfigKey {
  std::string key;
  KeyGroup group;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Every addressable key, in echo order.
const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_key(std::string_view key);

using Overrides = std::vector<std::pair<std::string, std::string>>;

// key = value lines; '#' starts a comment. Unknown keys raise UsageError.
Overrides parse_config_text(std::string_view text, std::string_view origin);

// Later layers win. model.preset is applied before the other model keys.
// Seeds not set by any layer fall back to `env_seed` when non-null.
RunConfig resolve_config(const std::vector<Overrides>& layers, const char* env_seed);

// Fully resolved key = value text; parse_config_text round-trips it.
std::string echo_config(const RunConfig& config);

}  // namespace mfur

#endif  // MFUR_CONFIG_HPP_
