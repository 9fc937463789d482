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

#include "mfur/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "mfur/errors.hpp"

namespace mfur {

namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

Tensor make_result(Shape shape, std::vector<double> value,
                   std::initializer_list<Tensor> inputs, const char* op,
                   BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || (t.defined() && t.requires_grad());
    if (any) {
      node->is_leaf = false;
      node->requires_grad = true;
      for (const Tensor& t : inputs) node->parents.push_back(t.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor::from_node(std::move(node));
}

// Parent i's gradient buffer, or nullptr when it takes no gradient.
std::vector<double>* grad_of(Node& self, std::size_t i) {
  if (i >= self.parents.size() || !self.parents[i]) return nullptr;
  Node& p = *self.parents[i];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const std::vector<double>& value_of(const Node& self, std::size_t i) {
  return self.parents[i]->value;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) {
    throw ContractError(fmt::format("{}: undefined tensor operand", op));
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double softplus_value(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Splits a shape around `axis` into (outer, n, inner).
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
  std::size_t axis = 0;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  const int r = static_cast<int>(shape.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(
        fmt::format("axis {} invalid for shape {}", axis, shape_to_string(shape)));
  }
  AxisSplit s;
  s.axis = static_cast<std::size_t>(a);
  for (int i = 0; i < a; ++i) s.outer *= shape[i];
  s.n = shape[a];
  for (int i = a + 1; i < r; ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor elementwise(UnaryOp op, const Tensor& x) {
  require_defined(x, "elementwise");
  const auto& xv = x.node()->value;
  std::vector<double> y(xv.size());
  const char* name = "unary";
  switch (op) {
    case UnaryOp::kNeg:
      name = "neg";
      for (std::size_t i = 0; i < xv.size(); ++i) y[i] = -xv[i];
      break;
    case UnaryOp::kExp:
      name = "exp";
      for (std::size_t i = 0; i < xv.size(); ++i) y[i] = std::exp(xv[i]);
      break;
    case UnaryOp::kLog:
      name = "log";
      for (std::size_t i = 0; i < xv.size(); ++i) {
        if (!(xv[i] > 0.0)) {
          throw DomainError(fmt::format("log of non-positive value {} at index {}",
                                        xv[i], i));
        }
        y[i] = std::log(xv[i]);
      }
      break;
    case UnaryOp::kSqrt:
      name = "sqrt";
      for (std::size_t i = 0; i < xv.size(); ++i) {
        if (xv[i] < 0.0) {
          throw DomainError(fmt::format("sqrt of negative value {}", xv[i]));
        }
        y[i] = std::sqrt(xv[i]);
      }
      break;
    case UnaryOp::kAbs:
      name = "abs";
      for (std::size_t i = 0; i < xv.size(); ++i) y[i] = std::abs(xv[i]);
      break;
    case UnaryOp::kSquare:
      name = "square";
      for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] * xv[i];
      break;
    case UnaryOp::kSoftplus:
      name = "softplus";
      for (std::size_t i = 0; i < xv.size(); ++i) y[i] = softplus_value(xv[i]);
      break;
    case UnaryOp::kSigmoid:
      name = "sigmoid";
      for (std::size_t i = 0; i < xv.size(); ++i) y[i] = sigmoid_value(xv[i]);
      break;
    case UnaryOp::kGelu:
      name = "gelu";
      for (std::size_t i = 0; i < xv.size(); ++i) {
        y[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
      }
      break;
    case UnaryOp::kRelu:
      name = "relu";
      for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
      break;
  }
  return make_result(x.shape(), std::move(y), {x}, name, [op](Node& self) {
    std::vector<double>* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xv = value_of(self, 0);
    const auto& yv = self.value;
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double d = 0.0;
      switch (op) {
        case UnaryOp::kNeg: d = -1.0; break;
        case UnaryOp::kExp: d = yv[i]; break;
        case UnaryOp::kLog: d = 1.0 / xv[i]; break;
        case UnaryOp::kSqrt: d = yv[i] > 0.0 ? 0.5 / yv[i] : 0.0; break;
        case UnaryOp::kAbs: d = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0); break;
        case UnaryOp::kSquare: d = 2.0 * xv[i]; break;
        case UnaryOp::kSoftplus: d = sigmoid_value(xv[i]); break;
        case UnaryOp::kSigmoid: d = yv[i] * (1.0 - yv[i]); break;
        case UnaryOp::kGelu: {
          const double cdf = 0.5 * (1.0 + std::erf(xv[i] * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv[i] * xv[i]);
          d = cdf + xv[i] * pdf;
          break;
        }
        case UnaryOp::kRelu: d = xv[i] > 0.0 ? 1.0 : 0.0; break;
      }
      (*gx)[i] += g[i] * d;
    }
  });
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  require_defined(a, "binary op");
  require_defined(b, "binary op");
  const bool same = a.shape() == b.shape();
  const bool a_scalar = !same && a.numel() == 1;
  const bool b_scalar = !same && b.numel() == 1;
  if (!same && !a_scalar && !b_scalar) {
    throw DimensionError(fmt::format("incompatible shapes {} and {}",
                                     shape_to_string(a.shape()),
                                     shape_to_string(b.shape())));
  }
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  const std::size_t sa = a_scalar ? 0 : 1;
  const std::size_t sb = b_scalar ? 0 : 1;
  std::vector<double> y(n);
  const char* name = "binary";
  switch (op) {
    case BinaryOp::kAdd:
      name = "add";
      for (std::size_t i = 0; i < n; ++i) y[i] = av[i * sa] + bv[i * sb];
      break;
    case BinaryOp::kSub:
      name = "sub";
      for (std::size_t i = 0; i < n; ++i) y[i] = av[i * sa] - bv[i * sb];
      break;
    case BinaryOp::kMul:
      name = "mul";
      for (std::size_t i = 0; i < n; ++i) y[i] = av[i * sa] * bv[i * sb];
      break;
    case BinaryOp::kDiv:
      name = "div";
      for (std::size_t i = 0; i < n; ++i) y[i] = av[i * sa] / bv[i * sb];
      break;
  }
  return make_result(out_shape, std::move(y), {a, b}, name,
                     [op, sa, sb](Node& self) {
    std::vector<double>* ga = grad_of(self, 0);
    std::vector<double>* gb = grad_of(self, 1);
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av[i * sa];
      const double z = bv[i * sb];
      double da = 0.0, db = 0.0;
      switch (op) {
        case BinaryOp::kAdd: da = 1.0; db = 1.0; break;
        case BinaryOp::kSub: da = 1.0; db = -1.0; break;
        case BinaryOp::kMul: da = z; db = x; break;
        case BinaryOp::kDiv: da = 1.0 / z; db = -x / (z * z); break;
      }
      if (ga) (*ga)[i * sa] += g[i] * da;
      if (gb) (*gb)[i * sb] += g[i] * db;
    }
  });
}

Tensor add_scalar(const Tensor& x, double c) {
  require_defined(x, "add_scalar");
  std::vector<double> y(x.values().begin(), x.values().end());
  for (double& v : y) v += c;
  return make_result(x.shape(), std::move(y), {x}, "add_scalar", [](Node& self) {
    if (auto* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
    }
  });
}

Tensor mul_scalar(const Tensor& x, double c) {
  require_defined(x, "mul_scalar");
  std::vector<double> y(x.values().begin(), x.values().end());
  for (double& v : y) v *= c;
  return make_result(x.shape(), std::move(y), {x}, "mul_scalar", [c](Node& self) {
    if (auto* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        (*gx)[i] += self.grad[i] * c;
      }
    }
  });
}

Tensor abs_pow(const Tensor& x, double p) {
  require_defined(x, "abs_pow");
  if (p < 1.0) throw ContractError(fmt::format("abs_pow needs p >= 1, got {}", p));
  const auto& xv = x.node()->value;
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = std::pow(std::abs(xv[i]), p);
  return make_result(x.shape(), std::move(y), {x}, "abs_pow", [p](Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xv = value_of(self, 0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double sign = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
      const double d = p == 1.0 ? sign : p * std::pow(std::abs(xv[i]), p - 1.0) * sign;
      (*gx)[i] += self.grad[i] * d;
    }
  });
}

namespace {

// c[m x n] += a[m x k] . b[k x n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// da[m x k] += g[m x n] . b^T
void gemm_acc_bt(const double* g, const double* b, double* da, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* dai = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      dai[p] += s;
    }
  }
}

// db[k x n] += a^T . g
void gemm_acc_at(const double* a, const double* g, double* db, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* dbp = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbp[j] += aip * gi[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError(fmt::format("matmul: cannot multiply {} by {}",
                                     shape_to_string(a.shape()),
                                     shape_to_string(b.shape())));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  gemm_acc(a.values().data(), b.values().data(), c.data(), m, k, n);
  return make_result({m, n}, std::move(c), {a, b}, "matmul", [m, k, n](Node& self) {
    if (auto* ga = grad_of(self, 0)) {
      gemm_acc_bt(self.grad.data(), value_of(self, 1).data(), ga->data(), m, k, n);
    }
    if (auto* gb = grad_of(self, 1)) {
      gemm_acc_at(value_of(self, 0).data(), self.grad.data(), gb->data(), m, k, n);
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_defined(a, "bmm");
  require_defined(b, "bmm");
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(1)) {
    throw DimensionError(fmt::format("bmm: cannot multiply {} by {}",
                                     shape_to_string(a.shape()),
                                     shape_to_string(b.shape())));
  }
  const std::size_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> c(g * m * n, 0.0);
  for (std::size_t i = 0; i < g; ++i) {
    gemm_acc(a.values().data() + i * m * k, b.values().data() + i * k * n,
             c.data() + i * m * n, m, k, n);
  }
  return make_result({g, m, n}, std::move(c), {a, b}, "bmm",
                     [g, m, k, n](Node& self) {
    auto* ga = grad_of(self, 0);
    auto* gb = grad_of(self, 1);
    const auto& av = value_of(self, 0);
    const auto& bv = value_of(self, 1);
    for (std::size_t i = 0; i < g; ++i) {
      const double* gi = self.grad.data() + i * m * n;
      if (ga) gemm_acc_bt(gi, bv.data() + i * k * n, ga->data() + i * m * k, m, k, n);
      if (gb) gemm_acc_at(av.data() + i * m * k, gi, gb->data() + i * k * n, m, k, n);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_defined(x, "linear");
  require_defined(weight, "linear");
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(0)) {
    throw DimensionError(fmt::format("linear: input {} does not match weight {}",
                                     shape_to_string(x.shape()),
                                     shape_to_string(weight.shape())));
  }
  const std::size_t in = weight.dim(0), out = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out)) {
    throw DimensionError(fmt::format("linear: bias {} does not match {} outputs",
                                     shape_to_string(bias.shape()), out));
  }
  const std::size_t rows = x.numel() / in;
  std::vector<double> y(rows * out, 0.0);
  if (bias.defined()) {
    const auto& bv = bias.values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(bv.begin(), bv.end(), y.begin() + r * out);
    }
  }
  gemm_acc(x.values().data(), weight.values().data(), y.data(), rows, in, out);
  Shape shape = x.shape();
  shape.back() = out;
  const bool has_bias = bias.defined();
  return make_result(std::move(shape), std::move(y), {x, weight, bias}, "linear",
                     [rows, in, out, has_bias](Node& self) {
    if (auto* gx = grad_of(self, 0)) {
      gemm_acc_bt(self.grad.data(), value_of(self, 1).data(), gx->data(), rows, in, out);
    }
    if (auto* gw = grad_of(self, 1)) {
      gemm_acc_at(value_of(self, 0).data(), self.grad.data(), gw->data(), rows, in, out);
    }
    if (has_bias) {
      if (auto* gb = grad_of(self, 2)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < out; ++j) (*gb)[j] += self.grad[r * out + j];
        }
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError(fmt::format("reshape {} -> {} changes element count",
                                     shape_to_string(x.shape()),
                                     shape_to_string(shape)));
  }
  std::vector<double> y(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(y), {x}, "reshape", [](Node& self) {
    if (auto* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
    }
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  require_defined(x, "permute");
  const std::size_t r = x.rank();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) {
    throw DimensionError(fmt::format("permute: {} axes for rank {}", axes.size(), r));
  }
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: axes are not a permutation");
    seen[a] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];

  // source[i] = flat input index of output element i
  const std::size_t n = x.numel();
  auto source = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < r; ++d) off += idx[d] * in_strides[axes[d]];
    (*source)[i] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<double> y(n);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i) y[i] = xv[(*source)[i]];
  return make_result(std::move(out_shape), std::move(y), {x}, "permute",
                     [source](Node& self) {
    if (auto* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        (*gx)[(*source)[i]] += self.grad[i];
      }
    }
  });
}

Tensor transpose_last2(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  if (axes.size() < 2) throw DimensionError("transpose_last2 needs rank >= 2");
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

Tensor expand_leading(const Tensor& x, const Shape& target) {
  require_defined(x, "expand_leading");
  const Shape& s = x.shape();
  if (target.size() < s.size() ||
      !std::equal(s.begin(), s.end(), target.end() - s.size())) {
    throw DimensionError(fmt::format("expand_leading: {} is not a suffix of {}",
                                     shape_to_string(s), shape_to_string(target)));
  }
  const std::size_t n = x.numel();
  const std::size_t total = shape_numel(target);
  std::vector<double> y(total);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < total; ++i) y[i] = xv[i % n];
  return make_result(target, std::move(y), {x}, "expand_leading", [n](Node& self) {
    if (auto* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i % n] += self.grad[i];
    }
  });
}

Tensor expand_trailing(const Tensor& x, const Shape& target) {
  require_defined(x, "expand_trailing");
  const Shape& s = x.shape();
  if (target.size() < s.size() || !std::equal(s.begin(), s.end(), target.begin())) {
    throw DimensionError(fmt::format("expand_trailing: {} is not a prefix of {}",
                                     shape_to_string(s), shape_to_string(target)));
  }
  const std::size_t total = shape_numel(target);
  const std::size_t inner = x.numel() == 0 ? 0 : total / x.numel();
  std::vector<double> y(total);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < total; ++i) y[i] = xv[i / inner];
  return make_result(target, std::move(y), {x}, "expand_trailing", [inner](Node& self) {
    if (auto* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i / inner] += self.grad[i];
    }
  });
}

Tensor reduce(ReduceOp op, const Tensor& x, int axis) {
  require_defined(x, "reduce");
  const AxisSplit s = split_axis(x.shape(), axis);
  if (s.n == 0) throw DomainError("reduction over an empty axis");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(s.axis));
  const auto& xv = x.values();
  std::vector<double> y(s.outer * s.inner);
  // For max: the winning index along the axis per output element.
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (op == ReduceOp::kMax) argmax->resize(y.size());
  const char* name = "reduce";
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      const std::size_t out = o * s.inner + in;
      switch (op) {
        case ReduceOp::kSum:
        case ReduceOp::kMean: {
          double acc = 0.0;
          for (std::size_t j = 0; j < s.n; ++j) acc += xv[base + j * s.inner];
          y[out] = op == ReduceOp::kSum ? acc : acc / static_cast<double>(s.n);
          name = op == ReduceOp::kSum ? "sum" : "mean";
          break;
        }
        case ReduceOp::kMax: {
          std::size_t best = 0;
          for (std::size_t j = 1; j < s.n; ++j) {
            if (xv[base + j * s.inner] > xv[base + best * s.inner]) best = j;
          }
          (*argmax)[out] = best;
          y[out] = xv[base + best * s.inner];
          name = "max";
          break;
        }
        case ReduceOp::kLogSumExp: {
          double m = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < s.n; ++j) m = std::max(m, xv[base + j * s.inner]);
          if (std::isinf(m)) {
            y[out] = m;
          } else {
            double acc = 0.0;
            for (std::size_t j = 0; j < s.n; ++j) acc += std::exp(xv[base + j * s.inner] - m);
            y[out] = m + std::log(acc);
          }
          name = "logsumexp";
          break;
        }
      }
    }
  }
  return make_result(std::move(out_shape), std::move(y), {x}, name,
                     [op, s, argmax](Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xv = value_of(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        const std::size_t out = o * s.inner + in;
        const double g = self.grad[out];
        switch (op) {
          case ReduceOp::kSum:
            for (std::size_t j = 0; j < s.n; ++j) (*gx)[base + j * s.inner] += g;
            break;
          case ReduceOp::kMean: {
            const double gm = g / static_cast<double>(s.n);
            for (std::size_t j = 0; j < s.n; ++j) (*gx)[base + j * s.inner] += gm;
            break;
          }
          case ReduceOp::kMax:
            (*gx)[base + (*argmax)[out] * s.inner] += g;
            break;
          case ReduceOp::kLogSumExp: {
            const double y = self.value[out];
            if (std::isinf(y)) break;
            for (std::size_t j = 0; j < s.n; ++j) {
              (*gx)[base + j * s.inner] += g * std::exp(xv[base + j * s.inner] - y);
            }
            break;
          }
        }
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_result(Shape{}, {acc}, {x}, "sum_all", [](Node& self) {
    if (auto* gx = grad_of(self, 0)) {
      for (double& g : *gx) g += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.numel() == 0) throw DomainError("mean of an empty tensor");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const double n = static_cast<double>(x.numel());
  return make_result(Shape{}, {acc / n}, {x}, "mean_all", [n](Node& self) {
    if (auto* gx = grad_of(self, 0)) {
      for (double& g : *gx) g += self.grad[0] / n;
    }
  });
}

Tensor softmax(const Tensor& x) {
  require_defined(x, "softmax");
  if (x.rank() == 0) throw DimensionError("softmax needs rank >= 1");
  const std::size_t n = x.dim(-1);
  if (n == 0) throw DomainError("softmax over an empty axis");
  const std::size_t rows = x.numel() / n;
  const auto& xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double* yr = y.data() + r * n;
    const double m = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - m);
      z += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  return make_result(x.shape(), std::move(y), {x}, "softmax", [rows, n](Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = self.value.data() + r * n;
      const double* gr = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < n; ++j) (*gx)[r * n + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  require_defined(x, "log_softmax");
  if (x.rank() == 0) throw DimensionError("log_softmax needs rank >= 1");
  const std::size_t n = x.dim(-1);
  if (n == 0) throw DomainError("log_softmax over an empty axis");
  const std::size_t rows = x.numel() / n;
  const auto& xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    const double m = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = xr[j] - lse;
  }
  return make_result(x.shape(), std::move(y), {x}, "log_softmax", [rows, n](Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = self.value.data() + r * n;
      const double* gr = self.grad.data() + r * n;
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += gr[j];
      for (std::size_t j = 0; j < n; ++j) {
        (*gx)[r * n + j] += gr[j] - std::exp(yr[j]) * gsum;
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require_defined(x, "layer_norm");
  if (x.rank() == 0) throw DimensionError("layer_norm needs rank >= 1");
  const std::size_t d = x.dim(-1);
  for (const Tensor* p : {&gamma, &beta}) {
    if (p->defined() && (p->rank() != 1 || p->dim(0) != d)) {
      throw DimensionError(fmt::format("layer_norm: affine parameter {} for width {}",
                                       shape_to_string(p->shape()), d));
    }
  }
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.values();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> y(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      double v = h;
      if (gamma.defined()) v *= gamma.values()[j];
      if (beta.defined()) v += beta.values()[j];
      y[r * d + j] = v;
    }
  }
  const bool has_gamma = gamma.defined(), has_beta = beta.defined();
  return make_result(x.shape(), std::move(y), {x, gamma, beta}, "layer_norm",
                     [rows, d, xhat, inv_std, has_gamma, has_beta](Node& self) {
    auto* gx = grad_of(self, 0);
    auto* gg = has_gamma ? grad_of(self, 1) : nullptr;
    auto* gb = has_beta ? grad_of(self, 2) : nullptr;
    const std::vector<double>* gamma_v = has_gamma ? &value_of(self, 1) : nullptr;
    std::vector<double> dh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = self.grad.data() + r * d;
      const double* hr = xhat->data() + r * d;
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        dh[j] = gr[j] * (gamma_v ? (*gamma_v)[j] : 1.0);
        mean_dh += dh[j];
        mean_dh_h += dh[j] * hr[j];
        if (gg) (*gg)[j] += gr[j] * hr[j];
        if (gb) (*gb)[j] += gr[j];
      }
      mean_dh /= static_cast<double>(d);
      mean_dh_h /= static_cast<double>(d);
      if (gx) {
        const double is = (*inv_std)[r];
        for (std::size_t j = 0; j < d; ++j) {
          (*gx)[r * d + j] += is * (dh[j] - mean_dh - hr[j] * mean_dh_h);
        }
      }
    }
  });
}

Tensor l2_normalize(const Tensor& x, double min_norm) {
  require_defined(x, "l2_normalize");
  if (x.rank() == 0) throw DimensionError("l2_normalize needs rank >= 1");
  const std::size_t d = x.dim(-1);
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  const auto& xv = x.values();
  auto norms = std::make_shared<std::vector<double>>(rows);
  std::vector<double> y(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xv[r * d + j] * xv[r * d + j];
    const double n = std::max(std::sqrt(ss), min_norm);
    (*norms)[r] = std::sqrt(ss) > min_norm ? n : -n;  // negative marks clamped
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = xv[r * d + j] / n;
  }
  return make_result(x.shape(), std::move(y), {x}, "l2_normalize",
                     [rows, d, norms](Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = self.grad.data() + r * d;
      const double* yr = self.value.data() + r * d;
      const double n = std::abs((*norms)[r]);
      if ((*norms)[r] < 0.0) {
        for (std::size_t j = 0; j < d; ++j) (*gx)[r * d + j] += gr[j] / n;
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < d; ++j) (*gx)[r * d + j] += (gr[j] - yr[j] * dot) / n;
    }
  });
}

Tensor unfold2d(const Tensor& x, std::size_t kernel, std::size_t stride,
                std::size_t pad) {
  require_defined(x, "unfold2d");
  if (x.rank() != 4) {
    throw DimensionError(fmt::format("unfold2d expects [B x H x W x C], got {}",
                                     shape_to_string(x.shape())));
  }
  if (kernel == 0 || stride == 0) throw ContractError("unfold2d: zero kernel or stride");
  const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h + 2 * pad < kernel || w + 2 * pad < kernel) {
    throw DimensionError("unfold2d: kernel larger than padded input");
  }
  const std::size_t ho = (h + 2 * pad - kernel) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kernel) / stride + 1;
  const std::size_t patch = kernel * kernel * c;
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  auto source = std::make_shared<std::vector<std::size_t>>(b * ho * wo * patch, kNone);
  std::size_t o = 0;
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                      static_cast<std::ptrdiff_t>(pad);
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                ix < static_cast<std::ptrdiff_t>(w);
            for (std::size_t ch = 0; ch < c; ++ch, ++o) {
              if (inside) {
                (*source)[o] = ((n * h + static_cast<std::size_t>(iy)) * w +
                                static_cast<std::size_t>(ix)) * c + ch;
              }
            }
          }
        }
      }
    }
  }
  std::vector<double> y(source->size(), 0.0);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if ((*source)[i] != kNone) y[i] = xv[(*source)[i]];
  }
  return make_result({b, ho, wo, patch}, std::move(y), {x}, "unfold2d",
                     [source](Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if ((*source)[i] != kNone) (*gx)[(*source)[i]] += self.grad[i];
    }
  });
}

Tensor pick(const Tensor& x, const std::vector<std::size_t>& index) {
  require_defined(x, "pick");
  if (x.rank() != 2 || x.dim(0) != index.size()) {
    throw DimensionError(fmt::format("pick: {} indices for tensor {}", index.size(),
                                     shape_to_string(x.shape())));
  }
  const std::size_t c = x.dim(1);
  std::vector<double> y(index.size());
  for (std::size_t b = 0; b < index.size(); ++b) {
    if (index[b] >= c) {
      throw ContractError(fmt::format("pick: index {} out of range [0, {}) at row {}",
                                      index[b], c, b));
    }
    y[b] = x.values()[b * c + index[b]];
  }
  return make_result({index.size()}, std::move(y), {x}, "pick", [index, c](Node& self) {
    if (auto* gx = grad_of(self, 0)) {
      for (std::size_t b = 0; b < index.size(); ++b) (*gx)[b * c + index[b]] += self.grad[b];
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_defined(logits, "bce_with_logits");
  require_defined(targets, "bce_with_logits");
  if (logits.shape() != targets.shape()) {
    throw DimensionError(fmt::format("bce_with_logits: logits {} vs targets {}",
                                     shape_to_string(logits.shape()),
                                     shape_to_string(targets.shape())));
  }
  const auto& lv = logits.values();
  const auto& tv = targets.values();
  std::vector<double> y(lv.size());
  for (std::size_t i = 0; i < lv.size(); ++i) {
    y[i] = std::max(lv[i], 0.0) - lv[i] * tv[i] + std::log1p(std::exp(-std::abs(lv[i])));
  }
  return make_result(logits.shape(), std::move(y), {logits, targets}, "bce_with_logits",
                     [](Node& self) {
    const auto& lv = value_of(self, 0);
    const auto& tv = value_of(self, 1);
    if (auto* gl = grad_of(self, 0)) {
      for (std::size_t i = 0; i < lv.size(); ++i) {
        (*gl)[i] += self.grad[i] * (sigmoid_value(lv[i]) - tv[i]);
      }
    }
    if (auto* gt = grad_of(self, 1)) {
      for (std::size_t i = 0; i < lv.size(); ++i) (*gt)[i] -= self.grad[i] * lv[i];
    }
  });
}

}  // namespace mfur
