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

#include "mfur/data.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "mfur/errors.hpp"
#include "mfur/layers.hpp"
#include "mfur/ops.hpp"

namespace mfur {

namespace fs = std::filesystem;

void SyntheticSpec::validate() const {
  if (classes < 2) throw ContractError(fmt::format("spec.classes must be >= 2, got {}", classes));
  if (height == 0 || width == 0) throw ContractError("spec image size must be positive");
  if (!(ambiguity >= 0.0 && ambiguity <= 1.0)) {
    throw ContractError(fmt::format("spec.ambiguity {} outside [0, 1]", ambiguity));
  }
  if (!(mask_fraction >= 0.0 && mask_fraction <= 1.0)) {
    throw ContractError(fmt::format("spec.mask_fraction {} outside [0, 1]", mask_fraction));
  }
  if (!(noise >= 0.0)) throw ContractError("spec.noise must be non-negative");
  if (!class_weights.empty()) {
    if (class_weights.size() != classes) {
      throw ContractError(fmt::format("spec.class_weights has {} entries for {} classes",
                                      class_weights.size(), classes));
    }
    double total = 0.0;
    for (double w : class_weights) {
      if (!(w >= 0.0)) throw ContractError("spec.class_weights must be non-negative");
      total += w;
    }
    if (!(total > 0.0)) throw ContractError("spec.class_weights must not all be zero");
  }
}

bool Dataset::any_mask() const {
  return std::any_of(has_mask.begin(), has_mask.end(), [](bool m) { return m; });
}

Tensor Dataset::image_tensor() const {
  return Tensor({size(), channels, height, width}, images);
}

Batch Dataset::batch(const std::vector<std::size_t>& indices) const {
  const std::size_t per = image_numel(), plane = height * width;
  std::vector<double> img, msk;
  img.reserve(indices.size() * per);
  msk.reserve(indices.size() * plane);
  Batch b;
  for (std::size_t idx : indices) {
    if (idx >= size()) {
      throw ContractError(fmt::format("sample index {} outside dataset of {}", idx, size()));
    }
    img.insert(img.end(), images.begin() + idx * per, images.begin() + (idx + 1) * per);
    msk.insert(msk.end(), masks.begin() + idx * plane, masks.begin() + (idx + 1) * plane);
    b.labels.push_back(labels[idx]);
    b.tissue.present.push_back(has_mask[idx]);
    b.has_tissue = b.has_tissue || has_mask[idx];
  }
  b.images = Tensor({indices.size(), channels, height, width}, std::move(img));
  b.tissue.masks = Tensor({indices.size(), height, width}, std::move(msk));
  return b;
}

void Dataset::validate() const {
  const std::size_t n = labels.size();
  if (images.size() != n * image_numel() || masks.size() != n * height * width ||
      has_mask.size() != n) {
    throw ContractError("dataset buffers disagree with the sample count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= num_classes) {
      throw ContractError(fmt::format("sample {} has label {} of {} classes", i, labels[i],
                                      num_classes));
    }
  }
}

namespace {

double class_aspect(const SyntheticSpec& spec, std::size_t cls) {
  return 1.0 + 1.5 * static_cast<double>(cls) / static_cast<double>(spec.classes - 1);
}

double class_frequency(const SyntheticSpec& spec, std::size_t cls) {
  return 2.0 + 4.0 * static_cast<double>(cls) / static_cast<double>(spec.classes - 1);
}

Nuisance draw_nuisance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> shift(-kMaxShift, kMaxShift);
  std::uniform_int_distribution<int> phase(0, kPhases - 1);
  Nuisance n;
  n.shift_x = shift(rng);
  n.shift_y = shift(rng);
  n.phase = phase(rng);
  return n;
}

std::size_t other_class(std::size_t cls, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, classes - 2);
  const std::size_t k = pick(rng);
  return k >= cls ? k + 1 : k;
}

Dataset generate_split(const SyntheticSpec& spec, std::size_t count, std::uint64_t split_id,
                       bool flip_labels) {
  std::seed_seq seq{spec.seed, split_id, std::uint64_t{0x4d465552}};
  std::mt19937_64 rng(seq);
  const std::size_t plane = spec.height * spec.width;

  std::vector<std::size_t> classes(count);
  if (spec.class_weights.empty()) {
    for (std::size_t i = 0; i < count; ++i) classes[i] = i % spec.classes;
    std::shuffle(classes.begin(), classes.end(), rng);
  } else {
    std::discrete_distribution<std::size_t> dist(spec.class_weights.begin(),
                                                 spec.class_weights.end());
    for (auto& c : classes) c = dist(rng);
  }

  Dataset ds;
  ds.channels = 1;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.num_classes = spec.classes;
  ds.images.reserve(count * plane);
  ds.masks.reserve(count * plane);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> mix_weight(0.55, 0.85);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution carries_mask(spec.mask_fraction);

  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t cls = classes[i];
    std::size_t label = cls;
    std::vector<double> blob;
    std::vector<double> pixels = render_class(spec, cls, draw_nuisance(rng), &blob);
    const double u = unit(rng);
    if (u < spec.ambiguity / 2.0) {
      const std::size_t second = other_class(cls, spec.classes, rng);
      const double w = mix_weight(rng);
      const std::vector<double> other = render_class(spec, second, draw_nuisance(rng));
      for (std::size_t p = 0; p < plane; ++p) pixels[p] = w * pixels[p] + (1.0 - w) * other[p];
    } else if (u < spec.ambiguity && flip_labels) {
      label = other_class(cls, spec.classes, rng);
    }
    for (double& v : pixels) v += spec.noise * noise(rng);
    const bool masked = carries_mask(rng);
    ds.images.insert(ds.images.end(), pixels.begin(), pixels.end());
    for (std::size_t p = 0; p < plane; ++p) {
      ds.masks.push_back(masked && blob[p] >= 0.5 ? 1.0 : 0.0);
    }
    ds.labels.push_back(label);
    ds.has_mask.push_back(masked);
  }
  return ds;
}

}  // namespace

std::vector<double> render_class(const SyntheticSpec& spec, std::size_t cls,
                                 const Nuisance& nuisance, std::vector<double>* blob) {
  if (cls >= spec.classes) {
    throw ContractError(fmt::format("class {} outside [0, {})", cls, spec.classes));
  }
  const double w = static_cast<double>(spec.width), h = static_cast<double>(spec.height);
  const double aspect = class_aspect(spec, cls);
  const double base = std::min(w, h) / 6.0;
  const double sx = base * std::sqrt(aspect), sy = base / std::sqrt(aspect);
  const double cx = w / 2.0 + nuisance.shift_x, cy = h / 2.0 + nuisance.shift_y;
  const double freq = class_frequency(spec, cls);
  const double phase = nuisance.phase * std::numbers::pi / 2.0;
  std::vector<double> out(spec.height * spec.width);
  if (blob) blob->assign(out.size(), 0.0);
  for (std::size_t y = 0; y < spec.height; ++y) {
    for (std::size_t x = 0; x < spec.width; ++x) {
      const double dx = (static_cast<double>(x) - cx) / sx;
      const double dy = (static_cast<double>(y) - cy) / sy;
      const double g = std::exp(-0.5 * (dx * dx + dy * dy));
      const double t = std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(x) / w + phase);
      out[y * spec.width + x] = g * (0.6 + 0.4 * t);
      if (blob) (*blob)[y * spec.width + x] = g;
    }
  }
  return out;
}

SplitSet generate(const SyntheticSpec& spec) {
  spec.validate();
  SplitSet s;
  s.train = generate_split(spec, spec.train, 0, true);
  s.val = generate_split(spec, spec.val, 1, false);
  s.test = generate_split(spec, spec.test, 2, false);
  return s;
}

LikelihoodClassifier::LikelihoodClassifier(const SyntheticSpec& spec) : spec_(spec) {
  spec_.validate();
  if (!(spec_.noise > 0.0)) throw ContractError("likelihood classifier needs spec.noise > 0");
  templates_.resize(spec_.classes);
  for (std::size_t c = 0; c < spec_.classes; ++c) {
    for (int sy = -kMaxShift; sy <= kMaxShift; ++sy) {
      for (int sx = -kMaxShift; sx <= kMaxShift; ++sx) {
        for (int ph = 0; ph < kPhases; ++ph) {
          templates_[c].push_back(render_class(spec_, c, Nuisance{sx, sy, ph}));
        }
      }
    }
  }
}

std::size_t LikelihoodClassifier::classify(const double* image) const {
  const double scale = 1.0 / (2.0 * spec_.noise * spec_.noise);
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<double> logs;
  for (std::size_t c = 0; c < templates_.size(); ++c) {
    logs.clear();
    for (const auto& t : templates_[c]) {
      double d2 = 0.0;
      for (std::size_t p = 0; p < t.size(); ++p) {
        const double d = image[p] - t[p];
        d2 += d * d;
      }
      logs.push_back(-d2 * scale);
    }
    const double m = *std::max_element(logs.begin(), logs.end());
    double acc = 0.0;
    for (double l : logs) acc += std::exp(l - m);
    const double score = m + std::log(acc);
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return best;
}

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(std::string_view bytes, std::size_t offset) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return value;
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32:
      return 4;
    case DType::kF64:
      return 8;
    case DType::kU8:
      return 1;
  }
  return 0;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(fmt::format("cannot write '{}'", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError(fmt::format("short write to '{}'", path.string()));
}

}  // namespace

std::string encode_tensor(const Tensor& tensor, DType dtype) {
  std::string out = "MFTN";
  put_le<std::uint32_t>(out, kTensorFileVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dtype));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + tensor.numel() * dtype_size(dtype));
  for (double v : tensor.values()) {
    switch (dtype) {
      case DType::kF64:
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
        break;
      case DType::kF32:
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        break;
      case DType::kU8:
        out.push_back(static_cast<char>(
            static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
        break;
    }
  }
  return out;
}

Tensor decode_tensor(std::string_view bytes, std::string_view origin) {
  auto need = [&](std::size_t offset, std::size_t len, std::string_view what) {
    if (bytes.size() < offset + len) {
      throw FormatError(fmt::format("{}: truncated {} at offset {} ({} bytes available)",
                                    origin, what, offset, bytes.size()));
    }
  };
  need(0, 16, "header");
  if (bytes.substr(0, 4) != "MFTN") {
    throw FormatError(fmt::format("{}: bad magic at offset 0", origin));
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kTensorFileVersion) {
    throw FormatError(fmt::format("{}: unsupported version {} at offset 4", origin, version));
  }
  const auto code = get_le<std::uint32_t>(bytes, 8);
  if (code < 1 || code > 3) {
    throw FormatError(fmt::format("{}: unknown dtype code {} at offset 8", origin, code));
  }
  const auto dtype = static_cast<DType>(code);
  const auto rank = get_le<std::uint32_t>(bytes, 12);
  need(16, 8 * static_cast<std::size_t>(rank), "dims");
  Shape shape(rank);
  std::size_t offset = 16;
  for (auto& d : shape) {
    d = get_le<std::uint64_t>(bytes, offset);
    offset += 8;
  }
  const std::size_t n = shape_numel(shape);
  const std::size_t expected = n * dtype_size(dtype);
  if (bytes.size() - offset != expected) {
    throw FormatError(fmt::format("{}: payload at offset {} holds {} bytes, expected {}",
                                  origin, offset, bytes.size() - offset, expected));
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (dtype) {
      case DType::kF64:
        values[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset + 8 * i));
        break;
      case DType::kF32:
        values[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset + 4 * i));
        break;
      case DType::kU8:
        values[i] = static_cast<unsigned char>(bytes[offset + i]) / 255.0;
        break;
    }
  }
  return Tensor(std::move(shape), std::move(values));
}

void write_tensor(const Tensor& tensor, const fs::path& path, DType dtype) {
  write_file(path, encode_tensor(tensor, dtype));
}

Tensor read_tensor(const fs::path& path) {
  return decode_tensor(read_file(path), path.string());
}

Tensor read_pgm(const fs::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](std::string_view what) {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) {
      throw FormatError(fmt::format("{}: expected {} at offset {}", path.string(), what, start));
    }
    return std::stoul(bytes.substr(start, pos - start));
  };
  if (bytes.size() < 2 || bytes.compare(0, 2, "P5") != 0) {
    throw FormatError(fmt::format("{}: not a binary PGM (P5) file", path.string()));
  }
  pos = 2;
  const std::size_t w = read_int("width"), h = read_int("height");
  const std::size_t maxval = read_int("maxval");
  if (maxval == 0 || maxval > 255) {
    throw FormatError(fmt::format("{}: only 8-bit PGM supported, maxval {}", path.string(),
                                  maxval));
  }
  ++pos;  // single whitespace before the raster
  if (bytes.size() < pos + w * h) {
    throw FormatError(fmt::format("{}: raster at offset {} holds {} bytes, expected {}",
                                  path.string(), pos, bytes.size() - std::min(pos, bytes.size()),
                                  w * h));
  }
  std::vector<double> values(w * h);
  for (std::size_t i = 0; i < w * h; ++i) {
    values[i] = static_cast<unsigned char>(bytes[pos + i]) / static_cast<double>(maxval);
  }
  return Tensor({h, w}, std::move(values));
}

void write_pgm(const Tensor& image, const fs::path& path) {
  if (image.rank() != 2) {
    throw DimensionError(fmt::format("write_pgm expects [H x W], got {}",
                                     shape_to_string(image.shape())));
  }
  std::string out = fmt::format("P5\n{} {}\n255\n", image.dim(1), image.dim(0));
  for (double v : image.values()) {
    out.push_back(static_cast<char>(
        static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  write_file(path, out);
}

Tensor read_image(const fs::path& path) {
  if (!fs::exists(path)) throw LoadError(fmt::format("missing file '{}'", path.string()));
  Tensor t = path.extension() == ".pgm" ? read_pgm(path) : read_tensor(path);
  if (t.rank() == 2) return reshape(t, {1, t.dim(0), t.dim(1)});
  if (t.rank() == 3) return t;
  if (t.rank() == 4 && t.dim(0) == 1) return reshape(t, {t.dim(1), t.dim(2), t.dim(3)});
  throw LoadError(fmt::format("'{}' has shape {}; expected [H x W] or [C x H x W]",
                              path.string(), shape_to_string(t.shape())));
}

bool LabelRemap::identity() const {
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (original[i] != static_cast<long long>(i)) return false;
  }
  return true;
}

std::string LabelRemap::report() const {
  std::string out;
  for (std::size_t i = 0; i < original.size(); ++i) {
    out += fmt::format("label {} -> class {}\n", original[i], i);
  }
  return out;
}

namespace {

struct ManifestRow {
  fs::path file;
  long long label = 0;
  fs::path mask;
};

std::string trim(std::string s) {
  const auto keep = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), keep));
  s.erase(std::find_if(s.rbegin(), s.rend(), keep).base(), s.end());
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::vector<ManifestRow> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw LoadError(fmt::format("cannot open manifest '{}'", manifest.string()));
  std::string line;
  if (!std::getline(in, line)) {
    throw LoadError(fmt::format("manifest '{}' is empty", manifest.string()));
  }
  const auto header = split_csv(trim(line));
  if (header.size() < 2 || header[0] != "file" || header[1] != "label" ||
      (header.size() == 3 && header[2] != "mask_file") || header.size() > 3) {
    throw LoadError(fmt::format("manifest '{}': header must be file,label[,mask_file]",
                                manifest.string()));
  }
  const fs::path base = manifest.parent_path();
  std::vector<ManifestRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() < 2 || cells.size() > header.size()) {
      throw LoadError(fmt::format("manifest '{}' line {}: expected {} columns",
                                  manifest.string(), line_no, header.size()));
    }
    ManifestRow row;
    row.file = base / cells[0];
    try {
      std::size_t used = 0;
      row.label = std::stoll(cells[1], &used);
      if (used != cells[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw LoadError(fmt::format("manifest '{}' line {}: bad label '{}'", manifest.string(),
                                  line_no, cells[1]));
    }
    if (cells.size() == 3 && !cells[2].empty()) row.mask = base / cells[2];
    rows.push_back(std::move(row));
  }
  return rows;
}

Dataset build_dataset(const std::vector<ManifestRow>& rows,
                      const std::map<long long, std::size_t>& ids, std::size_t classes,
                      const fs::path& manifest) {
  Dataset ds;
  ds.num_classes = classes;
  bool first = true;
  for (const ManifestRow& row : rows) {
    const Tensor img = read_image(row.file);
    if (first) {
      ds.channels = img.dim(0);
      ds.height = img.dim(1);
      ds.width = img.dim(2);
      first = false;
    } else if (img.dim(0) != ds.channels || img.dim(1) != ds.height || img.dim(2) != ds.width) {
      throw LoadError(fmt::format("'{}' is {}x{}x{} but '{}' started with {}x{}x{}",
                                  row.file.string(), img.dim(0), img.dim(1), img.dim(2),
                                  manifest.string(), ds.channels, ds.height, ds.width));
    }
    ds.images.insert(ds.images.end(), img.values().begin(), img.values().end());
    ds.labels.push_back(ids.at(row.label));
    const std::size_t plane = ds.height * ds.width;
    if (row.mask.empty()) {
      ds.masks.insert(ds.masks.end(), plane, 0.0);
      ds.has_mask.push_back(false);
    } else {
      const Tensor m = read_image(row.mask);
      if (m.dim(0) != 1) {
        throw LoadError(fmt::format("mask '{}' must have one channel", row.mask.string()));
      }
      const std::vector<double> planes(m.values().begin(), m.values().end());
      std::vector<double> resized =
          resample_nearest(planes, 1, m.dim(1), m.dim(2), ds.height, ds.width);
      for (double& v : resized) v = v >= 0.5 ? 1.0 : 0.0;
      ds.masks.insert(ds.masks.end(), resized.begin(), resized.end());
      ds.has_mask.push_back(true);
    }
  }
  return ds;
}

std::map<long long, std::size_t> contiguous_ids(
    const std::vector<const std::vector<ManifestRow>*>& groups, LabelRemap* remap) {
  std::map<long long, std::size_t> ids;
  for (const auto* rows : groups) {
    for (const auto& r : *rows) ids.emplace(r.label, 0);
  }
  std::size_t next = 0;
  LabelRemap local;
  for (auto& [label, id] : ids) {
    id = next++;
    local.original.push_back(label);
  }
  if (remap) *remap = local;
  return ids;
}

}  // namespace

Dataset load_image_dir(const fs::path& manifest, LabelRemap* remap) {
  const auto rows = read_manifest(manifest);
  if (rows.empty()) throw LoadError(fmt::format("manifest '{}' lists no samples",
                                                manifest.string()));
  const auto ids = contiguous_ids({&rows}, remap);
  return build_dataset(rows, ids, ids.size(), manifest);
}

SplitSet load_splits(const fs::path& dir, LabelRemap* remap) {
  const auto train = read_manifest(dir / "train.csv");
  const auto val = read_manifest(dir / "val.csv");
  const auto test = read_manifest(dir / "test.csv");
  if (train.empty()) throw LoadError(fmt::format("'{}' has an empty training split",
                                                 dir.string()));
  const auto ids = contiguous_ids({&train, &val, &test}, remap);
  if (ids.size() < 2) throw LoadError("datasets need at least two classes");
  SplitSet s;
  s.train = build_dataset(train, ids, ids.size(), dir / "train.csv");
  s.val = build_dataset(val, ids, ids.size(), dir / "val.csv");
  s.test = build_dataset(test, ids, ids.size(), dir / "test.csv");
  const auto same = [&](const Dataset& d) {
    return d.size() == 0 || (d.channels == s.train.channels && d.height == s.train.height &&
                             d.width == s.train.width);
  };
  if (!same(s.val) || !same(s.test)) {
    throw LoadError(fmt::format("splits under '{}' have different image sizes", dir.string()));
  }
  for (Dataset* d : {&s.val, &s.test}) {
    if (d->size() == 0) {
      d->channels = s.train.channels;
      d->height = s.train.height;
      d->width = s.train.width;
    }
  }
  return s;
}

void save_splits(const SplitSet& splits, const fs::path& dir) {
  const std::pair<const char*, const Dataset*> named[] = {
      {"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}};
  for (const auto& [name, ds] : named) {
    ds->validate();
    std::string manifest = "file,label,mask_file\n";
    const std::size_t per = ds->image_numel(), plane = ds->height * ds->width;
    for (std::size_t i = 0; i < ds->size(); ++i) {
      const std::string stem = fmt::format("{}_{:05}.mftn", name, i);
      Tensor img({ds->channels, ds->height, ds->width},
                 std::vector<double>(ds->images.begin() + i * per,
                                     ds->images.begin() + (i + 1) * per));
      write_tensor(img, dir / "images" / stem);
      std::string mask_cell;
      if (ds->has_mask[i]) {
        Tensor m({ds->height, ds->width},
                 std::vector<double>(ds->masks.begin() + i * plane,
                                     ds->masks.begin() + (i + 1) * plane));
        write_tensor(m, dir / "masks" / stem, DType::kU8);
        mask_cell = "masks/" + stem;
      }
      manifest += fmt::format("images/{},{},{}\n", stem, ds->labels[i], mask_cell);
    }
    write_file(dir / fmt::format("{}.csv", name), manifest);
  }
}

}  // namespace mfur
