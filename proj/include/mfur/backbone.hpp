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

#ifndef MFUR_BACKBONE_HPP_
#define MFUR_BACKBONE_HPP_

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mfur/evidential.hpp"
#include "mfur/layers.hpp"
#include "mfur/routing.hpp"
#include "mfur/tensor.hpp"

namespace mfur {

enum class AttentionKind { kFull, kTopKSparse };

// kBaseline runs plain attention blocks; kUg2rlpr inserts evidential heads
// and uncertainty-gated refinement from `ugtr_from_stage` onward.
enum class Mode { kBaseline, kUg2rlpr };

struct StageConfig {
  std::size_t depth = 1;
  std::size_t dim = 16;
  std::size_t heads = 2;
  bool downsample = false;
};

struct BackboneConfig {
  std::vector<StageConfig> stages;
  std::size_t in_channels = 1;
  std::size_t stem_channels = 8;
  AttentionKind attention_kind = AttentionKind::kFull;
  double topk_ratio = 1.0;
  std::size_t ugtr_from_stage = 1;
  std::vector<double> beta_schedule;  // one per stage
  double dropout = 0.1;
  std::size_t mlp_ratio = 2;
  bool norm_affine = true;

  // Throws ContractError naming the offending field.
  void validate() const;
  std::size_t final_dim() const { return stages.back().dim; }
  // Input pixels per final-grid cell along each axis.
  std::size_t total_stride() const;

  // 2 stages, dims 16/32, depth 1/1.
  static BackboneConfig toy();
  // 4 stages, dims 32/64/128/256, depth 2 each, top-k sparse attention.
  static BackboneConfig paper4stage();
  static BackboneConfig preset(std::string_view name);
};

// Channels-last feature map [B x H x W x D].
struct TokenGrid {
  Tensor features;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t batch() const { return features.dim(0); }
  std::size_t tokens_per_image() const { return height * width; }
  // [B x N x D] view.
  Tensor flatten() const;
  static TokenGrid unflatten(const Tensor& tokens, std::size_t height, std::size_t width);
};

struct AttentionParams {
  LinearLayer query;
  LinearLayer key;
  LinearLayer value;
  LinearLayer proj;
  std::size_t heads = 1;

  static AttentionParams create(std::size_t dim, std::size_t heads, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Multi-head attention over normalized tokens [B x N x D]. With kTopKSparse
// each query attends only to the ceil(ratio * N) keys with the highest
// scores (ties to the lower token index). `weights_out`, when given,
// receives the attention weights [B*heads x N x N].
Tensor attention_branch(const Tensor& tokens_norm, const AttentionParams& params,
                        AttentionKind kind, double topk_ratio,
                        Tensor* weights_out = nullptr);

// Pre-norm attention with residual: x + Attn(LN(x)).
TokenGrid attention_block(const TokenGrid& grid, const LayerNormLayer& norm,
                          const AttentionParams& params, AttentionKind kind,
                          double topk_ratio, Tensor* weights_out = nullptr);

// Mean over spatial positions of LN(F); norm == nullptr skips normalization.
Tensor global_average_pool(const TokenGrid& grid, const LayerNormLayer* norm);

// Two 3x3 stride-2 convolutions with GELU between them.
struct Stem {
  LinearLayer conv1;
  LinearLayer conv2;

  static Stem create(std::size_t in_channels, std::size_t stem_channels, std::size_t dim,
                     std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// image [B x C x H0 x W0] -> grid [B x H0/4 x W0/4 x D].
TokenGrid patch_embed(const Tensor& image, const Stem& stem);

struct TransformerBlock {
  LayerNormLayer norm1;
  AttentionParams attention;
  LayerNormLayer norm2;
  LinearLayer fc1;
  LinearLayer fc2;
  // Present only in stages with refinement enabled.
  std::optional<EvidentialHead> evidential;
  std::optional<RoutingBlockParams> routing;

  void collect(const std::string& prefix, ParamList& out) const;
};

struct StageParams {
  // 2x2 stride-2 patch merge, or a per-token projection when the width
  // changes without downsampling.
  std::optional<LinearLayer> entry;
  bool downsample = false;
  std::vector<TransformerBlock> blocks;
};

// Full-resolution tissue masks [B x H0 x W0]; present[b] == false marks a
// sample without supervision.
struct TissueMasks {
  Tensor masks;
  std::vector<bool> present;
};

struct BackboneForwardOptions {
  Mode mode = Mode::kUg2rlpr;
  // Dropout is active only when an engine is supplied.
  std::mt19937_64* rng = nullptr;
  std::optional<double> dropout_rate;  // defaults to the configured rate
  std::optional<double> beta_override;
  bool detach_uncertainty = true;
  // Test and visualization hooks.
  bool force_zero_evidence = false;
  const std::vector<Tensor>* evidence_override = nullptr;  // one per routed block
  bool keep_attention = false;
};

// Per-block auxiliary outputs of a refinement-enabled block.
struct BlockTrace {
  std::size_t stage = 0;
  std::size_t block = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  DirichletState state;
  RoutingOutputs routing;
  Tensor tissue;  // [B x N] at this resolution, undefined without masks
  Tensor attention_weights;
};

struct BackboneOutput {
  Tensor pooled;  // f, [B x D]
  Tensor tokens;  // final normalized tokens [B x N x D]
  std::vector<TokenGrid> stages;
  std::vector<BlockTrace> blocks;
  std::vector<Tensor> attention_weights;  // per block, when requested
};

class Backbone {
 public:
  Backbone(const BackboneConfig& config, std::size_t num_classes, std::mt19937_64& rng);

  BackboneOutput forward(const Tensor& image, const BackboneForwardOptions& options,
                         const TissueMasks* tissue = nullptr) const;

  const BackboneConfig& config() const { return config_; }
  std::size_t routed_block_count() const;
  void collect(ParamList& out) const;

  const Stem& stem() const { return stem_; }
  const std::vector<StageParams>& stages() const { return stages_; }
  const LayerNormLayer& final_norm() const { return final_norm_; }
  bool stage_routed(std::size_t stage) const { return stage >= config_.ugtr_from_stage; }

 private:
  BackboneConfig config_;
  std::size_t num_classes_;
  Stem stem_;
  std::vector<StageParams> stages_;
  LayerNormLayer final_norm_;
};

}  // namespace mfur

#endif  // MFUR_BACKBONE_HPP_
