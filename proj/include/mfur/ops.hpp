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

#ifndef MFUR_OPS_HPP_
#define MFUR_OPS_HPP_

#include <cstddef>
#include <vector>

#include "mfur/tensor.hpp"

// Differentiable tensor operations. Every function records a backward rule
// on the graph when gradient mode is on and at least one input requires a
// gradient.
//
// Broadcasting is deliberately narrow: binary elementwise ops accept equal
// shapes or a one-element operand. Other broadcasts go through the explicit
// expand_leading / expand_trailing ops.
namespace mfur {

enum class UnaryOp {
  kNeg,
  kExp,
  kLog,
  kSqrt,
  kAbs,
  kSquare,
  kSoftplus,
  kSigmoid,
  kGelu,
  kRelu,
};

enum class BinaryOp { kAdd, kSub, kMul, kDiv };

enum class ReduceOp { kSum, kMean, kMax, kLogSumExp };

Tensor elementwise(UnaryOp op, const Tensor& x);
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

inline Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(BinaryOp::kAdd, a, b);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise(BinaryOp::kSub, a, b);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(BinaryOp::kMul, a, b);
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return elementwise(BinaryOp::kDiv, a, b);
}
inline Tensor neg(const Tensor& x) { return elementwise(UnaryOp::kNeg, x); }
inline Tensor exp(const Tensor& x) { return elementwise(UnaryOp::kExp, x); }
// Throws DomainError on non-positive input.
inline Tensor log(const Tensor& x) { return elementwise(UnaryOp::kLog, x); }
inline Tensor sqrt(const Tensor& x) { return elementwise(UnaryOp::kSqrt, x); }
inline Tensor abs(const Tensor& x) { return elementwise(UnaryOp::kAbs, x); }
inline Tensor square(const Tensor& x) {
  return elementwise(UnaryOp::kSquare, x);
}
// ln(1 + e^x), evaluated as max(x, 0) + log1p(e^-|x|).
inline Tensor softplus(const Tensor& x) {
  return elementwise(UnaryOp::kSoftplus, x);
}
inline Tensor sigmoid(const Tensor& x) {
  return elementwise(UnaryOp::kSigmoid, x);
}
// Exact erf form.
inline Tensor gelu(const Tensor& x) { return elementwise(UnaryOp::kGelu, x); }
inline Tensor relu(const Tensor& x) { return elementwise(UnaryOp::kRelu, x); }

Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
// |x|^p for p >= 1.
Tensor abs_pow(const Tensor& x, double p);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }

// [m x k] . [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched: [g x m x k] . [g x k x n]
Tensor bmm(const Tensor& a, const Tensor& b);
// x[..., in] . weight[in x out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
// Swaps the last two axes.
Tensor transpose_last2(const Tensor& x);

// Repeats x along new leading axes: target = prefix ++ x.shape.
Tensor expand_leading(const Tensor& x, const Shape& target);
// Repeats x along new trailing axes: target = x.shape ++ suffix.
Tensor expand_trailing(const Tensor& x, const Shape& target);

// Removes `axis`. logsumexp is max-shifted. Max routes the gradient to the
// first maximal element.
Tensor reduce(ReduceOp op, const Tensor& x, int axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
inline Tensor logsumexp(const Tensor& x, int axis) {
  return reduce(ReduceOp::kLogSumExp, x, axis);
}

// Along the last axis, max-shifted.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

// Normalizes over the last axis; gamma/beta may be undefined (no affine).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
// x / max(||x||, min_norm) along the last axis.
Tensor l2_normalize(const Tensor& x, double min_norm = 1e-12);

// Extracts kernel x kernel patches from a channels-last image
// [B x H x W x C] into [B x Ho x Wo x (kernel*kernel*C)], patch layout
// (ky, kx, c), zero padding.
Tensor unfold2d(const Tensor& x, std::size_t kernel, std::size_t stride,
                std::size_t pad);

// out[b] = x[b, index[b]] for x of shape [B x C].
Tensor pick(const Tensor& x, const std::vector<std::size_t>& index);

// Elementwise max(l, 0) - l*t + log1p(e^-|l|).
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

}  // namespace mfur

#endif  // MFUR_OPS_HPP_
