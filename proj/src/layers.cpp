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

#include "mfur/layers.hpp"

#include <algorithm>
#include <cmath>

#include "mfur/errors.hpp"
#include "mfur/ops.hpp"

namespace mfur {

Tensor init_weight(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = normal(rng);
  return Tensor({fan_in, fan_out}, std::move(w), /*requires_grad=*/true);
}

LinearLayer LinearLayer::create(std::size_t in, std::size_t out, std::mt19937_64& rng,
                                bool with_bias) {
  LinearLayer layer;
  layer.weight = init_weight(in, out, rng);
  if (with_bias) layer.bias = Tensor({out}, 0.0, /*requires_grad=*/true);
  return layer;
}

Tensor LinearLayer::operator()(const Tensor& x) const { return linear(x, weight, bias); }

void LinearLayer::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

LayerNormLayer LayerNormLayer::create(std::size_t dim, bool affine) {
  LayerNormLayer layer;
  if (affine) {
    layer.gamma = Tensor({dim}, 1.0, /*requires_grad=*/true);
    layer.beta = Tensor({dim}, 0.0, /*requires_grad=*/true);
  }
  return layer;
}

Tensor LayerNormLayer::operator()(const Tensor& x) const {
  return layer_norm(x, gamma, beta, eps);
}

void LayerNormLayer::collect(const std::string& prefix, ParamList& out) const {
  if (gamma.defined()) out.emplace_back(prefix + ".gamma", gamma);
  if (beta.defined()) out.emplace_back(prefix + ".beta", beta);
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64* rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ContractError("dropout rate must lie in [0, 1)");
  }
  if (rng == nullptr || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = keep(*rng) ? scale : 0.0;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

std::vector<double> resample_nearest(const std::vector<double>& planes, std::size_t n,
                                     std::size_t h, std::size_t w, std::size_t out_h,
                                     std::size_t out_w) {
  if (planes.size() != n * h * w) {
    throw DimensionError("resample_nearest: plane buffer does not match its size");
  }
  std::vector<double> out(n * out_h * out_w);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const std::size_t sy = std::min(h - 1, (2 * y + 1) * h / (2 * out_h));
      for (std::size_t x = 0; x < out_w; ++x) {
        const std::size_t sx = std::min(w - 1, (2 * x + 1) * w / (2 * out_w));
        out[(i * out_h + y) * out_w + x] = planes[(i * h + sy) * w + sx];
      }
    }
  }
  return out;
}

}  // namespace mfur
