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

#ifndef MFUR_DATA_HPP_
#define MFUR_DATA_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mfur/backbone.hpp"
#include "mfur/tensor.hpp"

namespace mfur {

struct SyntheticSpec {
  std::size_t classes = 3;
  std::size_t train = 800;
  std::size_t val = 200;
  std::size_t test = 200;
  std::size_t height = 32;
  std::size_t width = 32;
  double ambiguity = 0.25;
  double mask_fraction = 0.5;
  double noise = 0.1;
  std::uint64_t seed = 7;
  // Optional class frequencies; empty means balanced.
  std::vector<double> class_weights;

  void validate() const;
};

struct Batch {
  Tensor images;  // [B x C x H x W]
  std::vector<std::size_t> labels;
  TissueMasks tissue;
  bool has_tissue = false;  // at least one sample carries a mask
};

struct Dataset {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<double> images;  // n x C x H x W
  std::vector<std::size_t> labels;
  std::vector<double> masks;  // n x H x W, zero where absent
  std::vector<bool> has_mask;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return channels * height * width; }
  bool any_mask() const;
  Tensor image_tensor() const;
  Batch batch(const std::vector<std::size_t>& indices) const;
  void validate() const;
};

struct SplitSet {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Nuisance variables of one rendered class recipe.
struct Nuisance {
  int shift_x = 0;  // in [-2, 2]
  int shift_y = 0;
  int phase = 0;  // quarter turns, in [0, 3]
};

inline constexpr int kMaxShift = 2;
inline constexpr int kPhases = 4;

// Noise-free class template; `blob` receives the envelope when non-null.
std::vector<double> render_class(const SyntheticSpec& spec, std::size_t cls,
                                 const Nuisance& nuisance, std::vector<double>* blob = nullptr);

SplitSet generate(const SyntheticSpec& spec);

// Maximum-likelihood class under the clean recipe with Gaussian pixel
// noise, marginalizing the nuisance grid uniformly.
class LikelihoodClassifier {
 public:
  explicit LikelihoodClassifier(const SyntheticSpec& spec);
  std::size_t classify(const double* image) const;

 private:
  SyntheticSpec spec_;
  std::vector<std::vector<std::vector<double>>> templates_;  // [class][nuisance]
};

enum class DType : std::uint32_t { kF32 = 1, kF64 = 2, kU8 = 3 };

inline constexpr std::uint32_t kTensorFileVersion = 1;

std::string encode_tensor(const Tensor& tensor, DType dtype = DType::kF64);
// `origin` names the source in error messages.
Tensor decode_tensor(std::string_view bytes, std::string_view origin = "<memory>");
void write_tensor(const Tensor& tensor, const std::filesystem::path& path,
                  DType dtype = DType::kF64);
Tensor read_tensor(const std::filesystem::path& path);

// Binary 8-bit PGM; values scaled to [0, 1], shape [H x W].
Tensor read_pgm(const std::filesystem::path& path);
void write_pgm(const Tensor& image, const std::filesystem::path& path);

// Reads a .mftn or .pgm image file as [C x H x W].
Tensor read_image(const std::filesystem::path& path);

struct LabelRemap {
  std::vector<long long> original;  // original id of each contiguous class
  bool identity() const;
  std::string report() const;
};

// Manifest CSV with header file,label[,mask_file]; paths relative to the
// manifest. Labels are remapped to contiguous ids.
Dataset load_image_dir(const std::filesystem::path& manifest, LabelRemap* remap = nullptr);

// train.csv, val.csv and test.csv under `dir`, with one shared remap.
SplitSet load_splits(const std::filesystem::path& dir, LabelRemap* remap = nullptr);

// Writes images/, masks/ and the three manifests.
void save_splits(const SplitSet& splits, const std::filesystem::path& dir);

}  // namespace mfur

#endif  // MFUR_DATA_HPP_
