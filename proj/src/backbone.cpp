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

#include "mfur/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "mfur/errors.hpp"
#include "mfur/ops.hpp"

namespace mfur {

void BackboneConfig::validate() const {
  if (stages.empty()) throw ContractError("backbone needs at least one stage");
  if (in_channels == 0 || stem_channels == 0) {
    throw ContractError("in_channels and stem_channels must be positive");
  }
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const StageConfig& st = stages[s];
    if (st.depth == 0 || st.dim == 0 || st.heads == 0) {
      throw ContractError(fmt::format("stage {}: depth, dim and heads must be positive", s));
    }
    if (st.dim % st.heads != 0) {
      throw ContractError(fmt::format("stage {}: dim {} not divisible by {} heads", s,
                                      st.dim, st.heads));
    }
  }
  if (!(topk_ratio > 0.0 && topk_ratio <= 1.0)) {
    throw ContractError(fmt::format("topk_ratio must lie in (0, 1], got {}", topk_ratio));
  }
  if (ugtr_from_stage < 1) {
    throw ContractError("ugtr_from_stage must be >= 1");
  }
  if (beta_schedule.size() != stages.size()) {
    throw ContractError(fmt::format("beta_schedule has {} entries for {} stages",
                                    beta_schedule.size(), stages.size()));
  }
  for (double b : beta_schedule) {
    if (!(b >= 0.0 && b <= 1.0)) {
      throw ContractError(fmt::format("beta {} outside [0, 1]", b));
    }
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ContractError(fmt::format("dropout must lie in [0, 1), got {}", dropout));
  }
  if (mlp_ratio == 0) throw ContractError("mlp_ratio must be positive");
}

std::size_t BackboneConfig::total_stride() const {
  std::size_t stride = 4;
  for (const StageConfig& st : stages) {
    if (st.downsample) stride *= 2;
  }
  return stride;
}

BackboneConfig BackboneConfig::toy() {
  BackboneConfig c;
  c.stages = {{1, 16, 2, false}, {1, 32, 4, true}};
  c.beta_schedule = {0.0, 0.8};
  return c;
}

BackboneConfig BackboneConfig::paper4stage() {
  BackboneConfig c;
  c.stages = {{2, 32, 1, false}, {2, 64, 2, true}, {2, 128, 4, true}, {2, 256, 8, true}};
  c.stem_channels = 16;
  c.attention_kind = AttentionKind::kTopKSparse;
  c.topk_ratio = 0.5;
  c.beta_schedule = {0.0, 0.4, 0.6, 0.8};
  return c;
}

BackboneConfig BackboneConfig::preset(std::string_view name) {
  if (name == "toy") return toy();
  if (name == "paper4stage") return paper4stage();
  throw UsageError(fmt::format("unknown backbone preset '{}' (expected toy or paper4stage)",
                               name));
}

Tensor TokenGrid::flatten() const {
  return reshape(features, {batch(), height * width, channels});
}

TokenGrid TokenGrid::unflatten(const Tensor& tokens, std::size_t height, std::size_t width) {
  if (tokens.rank() != 3 || tokens.dim(1) != height * width) {
    throw DimensionError(fmt::format("cannot view tokens {} as a {}x{} grid",
                                     shape_to_string(tokens.shape()), height, width));
  }
  TokenGrid g;
  g.height = height;
  g.width = width;
  g.channels = tokens.dim(2);
  g.features = reshape(tokens, {tokens.dim(0), height, width, g.channels});
  return g;
}

AttentionParams AttentionParams::create(std::size_t dim, std::size_t heads,
                                        std::mt19937_64& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ContractError(fmt::format("attention width {} not divisible by {} heads", dim, heads));
  }
  AttentionParams p;
  p.query = LinearLayer::create(dim, dim, rng);
  p.key = LinearLayer::create(dim, dim, rng);
  p.value = LinearLayer::create(dim, dim, rng);
  p.proj = LinearLayer::create(dim, dim, rng);
  p.heads = heads;
  return p;
}

void AttentionParams::collect(const std::string& prefix, ParamList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  proj.collect(prefix + ".proj", out);
}

namespace {

// [B x N x D] -> [B*heads x N x D/heads]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2), dh = d / heads;
  return reshape(permute(reshape(x, {b, n, heads, dh}), {0, 2, 1, 3}), {b * heads, n, dh});
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  const std::size_t n = x.dim(1), dh = x.dim(2);
  return reshape(permute(reshape(x, {batch, heads, n, dh}), {0, 2, 1, 3}),
                 {batch, n, heads * dh});
}

// Additive mask keeping the top `keep` scores per row, -inf elsewhere.
Tensor topk_mask(const Tensor& scores, std::size_t keep) {
  const std::size_t n = scores.dim(-1);
  const std::size_t rows = scores.numel() / n;
  const auto sv = scores.values();
  std::vector<double> mask(scores.numel(), -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> order(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = sv.data() + r * n;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    for (std::size_t j = 0; j < keep; ++j) mask[r * n + order[j]] = 0.0;
  }
  return Tensor(scores.shape(), std::move(mask));
}

}  // namespace

Tensor attention_branch(const Tensor& tokens_norm, const AttentionParams& params,
                        AttentionKind kind, double topk_ratio, Tensor* weights_out) {
  if (tokens_norm.rank() != 3 || tokens_norm.dim(2) != params.query.in_features()) {
    throw DimensionError(fmt::format("attention expects [B x N x {}], got {}",
                                     params.query.in_features(),
                                     shape_to_string(tokens_norm.shape())));
  }
  const std::size_t b = tokens_norm.dim(0), n = tokens_norm.dim(1);
  const std::size_t dh = tokens_norm.dim(2) / params.heads;
  const Tensor q = split_heads(params.query(tokens_norm), params.heads);
  const Tensor k = split_heads(params.key(tokens_norm), params.heads);
  const Tensor v = split_heads(params.value(tokens_norm), params.heads);
  Tensor scores = mul_scalar(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  if (kind == AttentionKind::kTopKSparse) {
    const double want = std::ceil(topk_ratio * static_cast<double>(n) - 1e-9);
    const std::size_t keep = std::clamp<std::size_t>(static_cast<std::size_t>(want), 1, n);
    if (keep < n) scores = add(scores, topk_mask(scores, keep));
  }
  const Tensor weights = softmax(scores);
  if (weights_out) *weights_out = weights;
  return params.proj(merge_heads(bmm(weights, v), b, params.heads));
}

TokenGrid attention_block(const TokenGrid& grid, const LayerNormLayer& norm,
                          const AttentionParams& params, AttentionKind kind,
                          double topk_ratio, Tensor* weights_out) {
  const Tensor x = grid.flatten();
  const Tensor a = attention_branch(norm(x), params, kind, topk_ratio, weights_out);
  return TokenGrid::unflatten(add(x, a), grid.height, grid.width);
}

Tensor global_average_pool(const TokenGrid& grid, const LayerNormLayer* norm) {
  if (grid.height * grid.width == 0) throw DomainError("pooling an empty grid");
  Tensor x = grid.flatten();
  if (norm) x = (*norm)(x);
  return reduce(ReduceOp::kMean, x, 1);
}

Stem Stem::create(std::size_t in_channels, std::size_t stem_channels, std::size_t dim,
                  std::mt19937_64& rng) {
  return Stem{LinearLayer::create(9 * in_channels, stem_channels, rng),
              LinearLayer::create(9 * stem_channels, dim, rng)};
}

void Stem::collect(const std::string& prefix, ParamList& out) const {
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
}

TokenGrid patch_embed(const Tensor& image, const Stem& stem) {
  if (image.rank() != 4) {
    throw DimensionError(fmt::format("image must be [B x C x H x W], got {}",
                                     shape_to_string(image.shape())));
  }
  const std::size_t h = image.dim(2), w = image.dim(3);
  if (h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0) {
    throw DimensionError(fmt::format("image size {}x{} not divisible by the stem stride 4",
                                     h, w));
  }
  if (image.dim(1) * 9 != stem.conv1.in_features()) {
    throw DimensionError(fmt::format("image has {} channels, stem expects {}", image.dim(1),
                                     stem.conv1.in_features() / 9));
  }
  const Tensor nhwc = permute(image, {0, 2, 3, 1});
  const Tensor hidden = gelu(stem.conv1(unfold2d(nhwc, 3, 2, 1)));
  const Tensor out = stem.conv2(unfold2d(hidden, 3, 2, 1));
  TokenGrid g;
  g.features = out;
  g.height = h / 4;
  g.width = w / 4;
  g.channels = out.dim(3);
  return g;
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out) const {
  norm1.collect(prefix + ".norm1", out);
  attention.collect(prefix + ".attn", out);
  norm2.collect(prefix + ".norm2", out);
  fc1.collect(prefix + ".mlp.fc1", out);
  fc2.collect(prefix + ".mlp.fc2", out);
  if (evidential) evidential->collect(prefix + ".evidential", out);
  if (routing) routing->collect(prefix + ".routing", out);
}

Backbone::Backbone(const BackboneConfig& config, std::size_t num_classes,
                   std::mt19937_64& rng)
    : config_(config), num_classes_(num_classes) {
  config_.validate();
  if (num_classes < 2) throw ContractError("need at least two classes");
  stem_ = Stem::create(config_.in_channels, config_.stem_channels, config_.stages[0].dim, rng);
  std::size_t prev = config_.stages[0].dim;
  for (std::size_t s = 0; s < config_.stages.size(); ++s) {
    const StageConfig& sc = config_.stages[s];
    StageParams stage;
    stage.downsample = sc.downsample;
    if (sc.downsample) {
      stage.entry = LinearLayer::create(4 * prev, sc.dim, rng);
    } else if (sc.dim != prev) {
      stage.entry = LinearLayer::create(prev, sc.dim, rng);
    }
    for (std::size_t d = 0; d < sc.depth; ++d) {
      TransformerBlock block;
      block.norm1 = LayerNormLayer::create(sc.dim, config_.norm_affine);
      block.attention = AttentionParams::create(sc.dim, sc.heads, rng);
      block.norm2 = LayerNormLayer::create(sc.dim, config_.norm_affine);
      block.fc1 = LinearLayer::create(sc.dim, config_.mlp_ratio * sc.dim, rng);
      block.fc2 = LinearLayer::create(config_.mlp_ratio * sc.dim, sc.dim, rng);
      if (stage_routed(s)) {
        block.evidential = EvidentialHead::create(sc.dim, num_classes, rng);
        block.routing = RoutingBlockParams::create(sc.dim, config_.beta_schedule[s], rng);
      }
      stage.blocks.push_back(std::move(block));
    }
    stages_.push_back(std::move(stage));
    prev = sc.dim;
  }
  final_norm_ = LayerNormLayer::create(prev, config_.norm_affine);
}

std::size_t Backbone::routed_block_count() const {
  std::size_t n = 0;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (stage_routed(s)) n += stages_[s].blocks.size();
  }
  return n;
}

void Backbone::collect(ParamList& out) const {
  stem_.collect("stem", out);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const std::string prefix = fmt::format("stage{}", s);
    if (stages_[s].entry) stages_[s].entry->collect(prefix + ".entry", out);
    for (std::size_t b = 0; b < stages_[s].blocks.size(); ++b) {
      stages_[s].blocks[b].collect(fmt::format("{}.block{}", prefix, b), out);
    }
  }
  final_norm_.collect("final_norm", out);
}

BackboneOutput Backbone::forward(const Tensor& image, const BackboneForwardOptions& options,
                                 const TissueMasks* tissue) const {
  const double rate = options.dropout_rate.value_or(config_.dropout);
  std::mt19937_64* rng = options.rng;
  const bool routed_mode = options.mode == Mode::kUg2rlpr;
  if (options.evidence_override &&
      options.evidence_override->size() != routed_block_count()) {
    throw ContractError(fmt::format("evidence override has {} tensors for {} routed blocks",
                                    options.evidence_override->size(),
                                    routed_block_count()));
  }
  if (tissue && (tissue->masks.rank() != 3 || tissue->masks.dim(0) != image.dim(0) ||
                 tissue->present.size() != image.dim(0))) {
    throw DimensionError("tissue masks do not match the image batch");
  }

  BackboneOutput out;
  TokenGrid grid = patch_embed(image, stem_);
  const std::size_t batch = grid.batch();
  std::size_t routed_index = 0;

  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const StageParams& stage = stages_[s];
    if (stage.downsample) {
      if (grid.height % 2 != 0 || grid.width % 2 != 0) {
        throw DimensionError(fmt::format("stage {}: cannot downsample a {}x{} grid", s,
                                         grid.height, grid.width));
      }
      const Tensor merged = (*stage.entry)(unfold2d(grid.features, 2, 2, 0));
      grid.height /= 2;
      grid.width /= 2;
      grid.channels = merged.dim(3);
      grid.features = merged;
    } else if (stage.entry) {
      grid.features = (*stage.entry)(grid.features);
      grid.channels = grid.features.dim(3);
    }
    const std::size_t n = grid.tokens_per_image();

    // Stage-resolution tissue mask; unsupervised samples read as all ones.
    Tensor stage_tissue;
    if (routed_mode && stage_routed(s) && tissue) {
      const auto& full = tissue->masks;
      std::vector<double> planes(full.values().begin(), full.values().end());
      std::vector<double> small =
          resample_nearest(planes, batch, full.dim(1), full.dim(2), grid.height, grid.width);
      for (std::size_t b = 0; b < batch; ++b) {
        if (!tissue->present[b]) std::fill_n(small.begin() + b * n, n, 1.0);
      }
      stage_tissue = Tensor({batch, n}, std::move(small));
    }

    Tensor x = grid.flatten();
    for (std::size_t bi = 0; bi < stage.blocks.size(); ++bi) {
      const TransformerBlock& block = stage.blocks[bi];
      const Tensor h = block.norm1(x);
      Tensor weights;
      Tensor a = attention_branch(h, block.attention, config_.attention_kind,
                                  config_.topk_ratio,
                                  options.keep_attention ? &weights : nullptr);
      if (options.keep_attention) out.attention_weights.push_back(weights);

      if (routed_mode && block.evidential) {
        BlockTrace trace;
        trace.stage = s;
        trace.block = bi;
        trace.height = grid.height;
        trace.width = grid.width;
        trace.attention_weights = weights;
        Tensor evidence;
        if (options.evidence_override) {
          evidence = (*options.evidence_override)[routed_index];
        } else if (options.force_zero_evidence) {
          evidence = Tensor({batch, n, num_classes_}, 0.0);
        } else {
          evidence = compute_evidence(h, *block.evidential);
        }
        ++routed_index;
        trace.state = dirichlet_state(evidence);
        Tensor token_sigma = trace.state.token_uncertainty;
        Tensor global_sigma = trace.state.global_uncertainty;
        if (options.detach_uncertainty) {
          token_sigma = token_sigma.detach();
          global_sigma = global_sigma.detach();
        }
        const RoutingBlockParams& rp = *block.routing;
        const RoutingMask rm = routing_mask(h, rp.predictor);
        trace.tissue = stage_tissue;
        const Tensor effective = effective_mask(rm.mask, stage_tissue, token_sigma);
        const Tensor r = refinement_branch(h, rp);
        const double beta = options.beta_override.value_or(rp.beta);
        const RefineResult refined = refine(a, r, effective, rp.lambda_ref, beta, global_sigma);
        trace.routing = RoutingOutputs{rm.logits,      rm.mask,           effective,
                                       refined.delta, refined.delta_gated, refined.routed};
        a = refined.routed;
        out.blocks.push_back(std::move(trace));
      }

      x = add(x, dropout(a, rate, rng));
      const Tensor hidden = dropout(gelu(block.fc1(block.norm2(x))), rate, rng);
      x = add(x, block.fc2(hidden));
    }
    grid = TokenGrid::unflatten(x, grid.height, grid.width);
    out.stages.push_back(grid);
  }

  out.tokens = final_norm_(grid.flatten());
  out.pooled = reduce(ReduceOp::kMean, out.tokens, 1);
  return out;
}

}  // namespace mfur
