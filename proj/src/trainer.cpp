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

#include "mfur/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "mfur/errors.hpp"
#include "mfur/ops.hpp"

namespace mfur {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (epochs == 0) throw ContractError("train.epochs must be positive");
  if (batch_size == 0) throw ContractError("train.batch_size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ContractError(fmt::format("train.lr must be finite and >= 0, got {}", lr));
  }
  if (patience < 1) throw ContractError("train.patience must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ContractError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ContractError("Adam epsilon must be positive");
  weights.validate();
}

Optimizer::Optimizer(const TrainConfig& config, ParamList params)
    : config_(config), params_(std::move(params)) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Optimizer::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

void Optimizer::step() {
  ++steps_;
  const double lr = config_.lr;
  const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    if (!p.has_grad()) {
      if (config_.optimizer == OptimizerKind::kSgd) continue;
    }
    const auto g = p.has_grad() ? p.grad() : std::span<const double>();
    auto w = p.mutable_values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      if (config_.optimizer == OptimizerKind::kSgd) {
        w[j] -= lr * gj;
      } else {
        m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * gj;
        v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * gj * gj;
        const double mhat = m_[i][j] / c1;
        const double vhat = v_[i][j] / c2;
        w[j] -= lr * mhat / (std::sqrt(vhat) + config_.adam_eps);
      }
    }
  }
}

void Optimizer::export_state(std::vector<NamedArray>& out) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, p] = params_[i];
    out.push_back({"opt.m." + name, p.shape(), m_[i]});
    out.push_back({"opt.v." + name, p.shape(), v_[i]});
  }
  out.push_back({"opt.steps", {1}, {static_cast<double>(steps_)}});
}

namespace {

const NamedArray& require(const std::vector<NamedArray>& table, const std::string& name,
                          const Shape& shape) {
  const auto it = std::find_if(table.begin(), table.end(),
                               [&](const NamedArray& a) { return a.name == name; });
  if (it == table.end()) throw LoadError(fmt::format("checkpoint lacks '{}'", name));
  if (it->shape != shape) {
    throw LoadError(fmt::format("checkpoint entry '{}' has shape {}, model expects {}", name,
                                shape_to_string(it->shape), shape_to_string(shape)));
  }
  return *it;
}

}  // namespace

void Optimizer::import_state(const std::vector<NamedArray>& in) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, p] = params_[i];
    m_[i] = require(in, "opt.m." + name, p.shape()).values;
    v_[i] = require(in, "opt.v." + name, p.shape()).values;
  }
  steps_ = static_cast<std::uint64_t>(require(in, "opt.steps", {1}).values[0]);
}

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
}

void put_string(std::string& out, std::string_view s) {
  put_le<std::uint64_t>(out, s.size());
  out.append(s);
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string_view origin) : bytes_(bytes), origin_(origin) {}

  template <typename T>
  T get(std::string_view what) {
    need(sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n, std::string_view what) {
    need(n, what);
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::string string(std::string_view what) {
    const auto n = get<std::uint64_t>(what);
    return std::string(take(n, what));
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, std::string_view what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(fmt::format("{}: truncated {} at offset {} (need {} bytes, have {})",
                                    origin_, what, pos_, n, bytes_.size() - pos_));
    }
  }

  std::string_view bytes_;
  std::string_view origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string Checkpoint::encode() const {
  std::string out = "MFUR";
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, config);
  put_le<std::uint64_t>(out, epoch);
  put_string(out, rng_state);
  put_le<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    put_string(out, t.name);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) put_le<std::uint64_t>(out, d);
    for (double v : t.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint Checkpoint::decode(std::string_view bytes, std::string_view origin) {
  Reader r(bytes, origin);
  if (r.take(4, "magic") != "MFUR") {
    throw FormatError(fmt::format("{}: bad checkpoint magic at offset 0", origin));
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError(fmt::format("{}: unsupported checkpoint version {} at offset 4", origin,
                                  version));
  }
  Checkpoint c;
  c.config = r.string("config");
  c.epoch = r.get<std::uint64_t>("epoch");
  c.rng_state = r.string("rng state");
  const auto count = r.get<std::uint64_t>("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.string("tensor name");
    const auto rank = r.get<std::uint32_t>("rank");
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(r.get<std::uint64_t>("dims"));
    a.values.resize(shape_numel(a.shape));
    for (double& v : a.values) v = std::bit_cast<double>(r.get<std::uint64_t>("payload"));
    c.tensors.push_back(std::move(a));
  }
  if (!r.done()) {
    throw FormatError(fmt::format("{}: trailing bytes at offset {}", origin, r.pos()));
  }
  return c;
}

void Checkpoint::save(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(fmt::format("cannot write checkpoint '{}'", path.string()));
  const std::string bytes = encode();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError(fmt::format("short write to '{}'", path.string()));
}

Checkpoint Checkpoint::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode(ss.str(), path.string());
}

void apply_checkpoint(const Checkpoint& checkpoint, const Model& model) {
  for (auto& [name, p] : model.parameters()) {
    const NamedArray& a = require(checkpoint.tensors, "param." + name, p.shape());
    Tensor handle = p;
    std::copy(a.values.begin(), a.values.end(), handle.mutable_values().begin());
  }
}

std::string HistoryRow::csv_header() {
  return "epoch,train_total,train_ce,train_routing,train_cluster,train_diversity,"
         "val_loss,val_accuracy,val_macro_f1,val_auroc";
}

std::string HistoryRow::to_csv() const {
  return fmt::format("{},{},{},{},{},{},{},{},{},{}", epoch, train_total, train_ce,
                     train_routing, train_cluster, train_diversity, val_loss, val_accuracy,
                     val_macro_f1, val_auroc);
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::string out = HistoryRow::csv_header() + "\n";
  for (const auto& r : rows) out += r.to_csv() + "\n";
  return out;
}

EvalResult evaluate(const Model& model, const Dataset& data, Mode mode,
                    const std::optional<McConfig>& mc, std::optional<double> beta_override,
                    const std::string& run_id, std::size_t bins) {
  if (data.channels != model.config().backbone.in_channels ||
      data.height != model.config().image_height || data.width != model.config().image_width) {
    throw LoadError(fmt::format("data {}x{}x{} does not match the model input {}x{}x{}",
                                data.channels, data.height, data.width,
                                model.config().backbone.in_channels,
                                model.config().image_height, model.config().image_width));
  }
  if (data.num_classes > model.config().num_classes) {
    throw LoadError(fmt::format("data has {} classes, model {}", data.num_classes,
                                model.config().num_classes));
  }
  InferenceOptions io;
  io.mode = mode;
  io.beta_override = beta_override;
  EvalResult out;
  const Tensor images = data.image_tensor();
  out.preds = mc ? mc_predict(model, images, data.labels, *mc, io).mean
                 : predict(model, images, data.labels, io);
  double beta = beta_override.value_or(0.0);
  if (!beta_override) {
    const auto& schedule = model.config().backbone.beta_schedule;
    if (!schedule.empty()) beta = schedule.back();
  }
  out.row = metric_row(run_id, beta, out.preds, bins);
  return out;
}

namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{seed, stream, std::uint64_t{0x7472}};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> chunk(const std::vector<std::size_t>& order, std::size_t start,
                               std::size_t size) {
  const auto end = std::min(order.size(), start + size);
  return {order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(end)};
}

}  // namespace

Trainer::Trainer(const ModelConfig& model_config, const TrainConfig& config,
                 const Dataset& train, const Dataset& val, std::string config_snapshot)
    : model_config_(model_config),
      config_(config),
      train_(train),
      val_(val),
      snapshot_(std::move(config_snapshot)),
      init_rng_(seeded(config.seed, 0)),
      model_(model_config, init_rng_),
      optimizer_(config, model_.parameters()),
      rng_(seeded(config.seed, 1)) {
  config_.validate();
  if (train_.size() == 0) throw ContractError("training set is empty");
  if (val_.size() == 0) throw ContractError("validation set is empty");
  for (const Dataset* d : {&train_, &val_}) {
    if (d->channels != model_config_.backbone.in_channels ||
        d->height != model_config_.image_height || d->width != model_config_.image_width) {
      throw ContractError(fmt::format(
          "data {}x{}x{} does not match the model input {}x{}x{}", d->channels, d->height,
          d->width, model_config_.backbone.in_channels, model_config_.image_height,
          model_config_.image_width));
    }
    if (d->num_classes > model_config_.num_classes) {
      throw ContractError(fmt::format("data has {} classes, model {}", d->num_classes,
                                      model_config_.num_classes));
    }
  }
}

LossBreakdown Trainer::dataset_loss(const Dataset& data) const {
  NoGradGuard guard;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  LossBreakdown acc;
  const double n = static_cast<double>(data.size());
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    const Batch b = data.batch(chunk(order, start, config_.batch_size));
    BackboneForwardOptions fo;
    fo.mode = config_.mode;
    const TissueMasks* tissue = b.has_tissue ? &b.tissue : nullptr;
    const ModelOutput out = model_.forward(b.images, fo, tissue);
    const LossBreakdown part =
        total_loss(loss_parts(model_, out, b.labels, tissue), config_.weights);
    const double w = static_cast<double>(b.labels.size()) / n;
    acc.total_value += w * part.total_value;
    acc.ce += w * part.ce;
    acc.routing += w * part.routing;
    acc.cluster += w * part.cluster;
    acc.diversity += w * part.diversity;
  }
  return acc;
}

std::optional<HistoryRow> Trainer::run_epoch() {
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng_);
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    const Batch b = train_.batch(chunk(order, start, config_.batch_size));
    BackboneForwardOptions fo;
    fo.mode = config_.mode;
    fo.rng = &rng_;
    const TissueMasks* tissue = b.has_tissue ? &b.tissue : nullptr;
    const ModelOutput out = model_.forward(b.images, fo, tissue);
    const LossBreakdown loss =
        total_loss(loss_parts(model_, out, b.labels, tissue), config_.weights);
    if (!std::isfinite(loss.total_value)) return std::nullopt;
    optimizer_.zero_grad();
    backward(loss.total);
    optimizer_.step();
  }
  ++epoch_;

  HistoryRow row;
  row.epoch = epoch_;
  const LossBreakdown train_loss = dataset_loss(train_);
  row.train_total = train_loss.total_value;
  row.train_ce = train_loss.ce;
  row.train_routing = train_loss.routing;
  row.train_cluster = train_loss.cluster;
  row.train_diversity = train_loss.diversity;
  const EvalResult val = evaluate(model_, val_, config_.mode, std::nullopt, std::nullopt, "val");
  row.val_loss = nll(val.preds);
  row.val_accuracy = val.row.accuracy;
  row.val_macro_f1 = val.row.macro_f1;
  row.val_auroc = val.row.auroc;
  if (!std::isfinite(row.train_total) || !std::isfinite(row.val_loss)) return std::nullopt;
  history_.push_back(row);
  return row;
}

double Trainer::monitor_value(const HistoryRow& row) const {
  switch (config_.monitor) {
    case Monitor::kValLoss:
      return row.val_loss;
    case Monitor::kValAccuracy:
      return row.val_accuracy;
    case Monitor::kValAuroc:
      return row.val_auroc;
  }
  return row.val_loss;
}

bool Trainer::improved(double value) const {
  if (!has_best_) return true;
  if (std::isnan(value)) return false;
  return config_.monitor == Monitor::kValLoss ? value < best_value_ : value > best_value_;
}

TrainResult Trainer::train() {
  TrainResult result;
  result.last = checkpoint();
  result.best = result.last;
  result.best_epoch = epoch_;
  while (epoch_ < config_.epochs) {
    const std::optional<HistoryRow> row = run_epoch();
    if (!row) {
      result.diverged = true;
      result.message = fmt::format("non-finite loss during epoch {}; kept the checkpoint of epoch {}",
                                   epoch_ + 1, result.last.epoch);
      break;
    }
    const double value = monitor_value(*row);
    if (improved(value)) {
      best_value_ = value;
      has_best_ = true;
      bad_epochs_ = 0;
    } else {
      ++bad_epochs_;
    }
    result.last = checkpoint();
    if (bad_epochs_ == 0) {
      result.best = result.last;
      result.best_epoch = epoch_;
    }
    if (bad_epochs_ >= config_.patience) {
      result.message = fmt::format("early stop after epoch {}", epoch_);
      break;
    }
  }
  result.history = history_;
  return result;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = snapshot_;
  c.epoch = epoch_;
  std::ostringstream rng_text;
  rng_text << rng_;
  c.rng_state = rng_text.str();
  for (const auto& [name, p] : model_.parameters()) {
    c.tensors.push_back({"param." + name, p.shape(),
                         std::vector<double>(p.values().begin(), p.values().end())});
  }
  optimizer_.export_state(c.tensors);
  c.tensors.push_back({"trainer.best_value", {1}, {best_value_}});
  c.tensors.push_back({"trainer.has_best", {1}, {has_best_ ? 1.0 : 0.0}});
  c.tensors.push_back({"trainer.bad_epochs", {1}, {static_cast<double>(bad_epochs_)}});
  std::vector<double> hist;
  for (const auto& r : history_) {
    hist.insert(hist.end(), {static_cast<double>(r.epoch), r.train_total, r.train_ce,
                             r.train_routing, r.train_cluster, r.train_diversity, r.val_loss,
                             r.val_accuracy, r.val_macro_f1, r.val_auroc});
  }
  c.tensors.push_back({"trainer.history", {history_.size(), 10}, std::move(hist)});
  return c;
}

void Trainer::restore(const Checkpoint& checkpoint) {
  apply_checkpoint(checkpoint, model_);
  optimizer_.import_state(checkpoint.tensors);
  epoch_ = checkpoint.epoch;
  std::istringstream rng_text(checkpoint.rng_state);
  rng_text >> rng_;
  if (!rng_text) throw LoadError("checkpoint RNG state is unreadable");
  best_value_ = require(checkpoint.tensors, "trainer.best_value", {1}).values[0];
  has_best_ = require(checkpoint.tensors, "trainer.has_best", {1}).values[0] != 0.0;
  bad_epochs_ =
      static_cast<std::size_t>(require(checkpoint.tensors, "trainer.bad_epochs", {1}).values[0]);
  const NamedArray* hist = checkpoint.find("trainer.history");
  if (!hist || hist->shape.size() != 2 || hist->shape[1] != 10) {
    throw LoadError("checkpoint lacks a readable training history");
  }
  history_.clear();
  for (std::size_t i = 0; i < hist->shape[0]; ++i) {
    const double* v = hist->values.data() + i * 10;
    history_.push_back({static_cast<std::size_t>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6],
                        v[7], v[8], v[9]});
  }
}

}  // namespace mfur
