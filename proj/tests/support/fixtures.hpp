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

#ifndef MFUR_TESTS_SUPPORT_FIXTURES_HPP_
#define MFUR_TESTS_SUPPORT_FIXTURES_HPP_

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <system_error>
#include <vector>

#include "mfur/backbone.hpp"
#include "mfur/model.hpp"
#include "mfur/tensor.hpp"

namespace mfur::testing {

// Two stages of width 8 on 32x32 inputs, ending on a 4x4 grid; C = 3, K = 2.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.backbone.stages = {{1, 8, 2, false}, {1, 8, 2, true}};
  c.backbone.stem_channels = 4;
  c.backbone.beta_schedule = {0.0, 0.8};
  c.num_classes = 3;
  c.prototypes.per_class = 2;
  return c;
}

// Left half tissue for sample 0, right half for sample 1, and so on.
inline TissueMasks half_masks(std::size_t batch, std::size_t h, std::size_t w) {
  TissueMasks t;
  std::vector<double> m(batch * h * w, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const bool left = x < w / 2;
        m[(b * h + y) * w + x] = (b % 2 == 0) == left ? 1.0 : 0.0;
      }
    }
  }
  t.masks = Tensor({batch, h, w}, m);
  t.present.assign(batch, true);
  return t;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("mfur-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace mfur::testing

#endif  // MFUR_TESTS_SUPPORT_FIXTURES_HPP_
