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

#include "mfur/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include <fmt/format.h>

#include "mfur/errors.hpp"

namespace mfur {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, "x"));
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError(fmt::format("shape {} needs {} values, got {}",
                                     shape_to_string(shape),
                                     shape_numel(shape), values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(
        fmt::format("axis {} out of range for rank {}", axis, r));
  }
  return node_->shape[a];
}

std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::mutable_values() {
  if (!node_->is_leaf) {
    throw ContractError("only leaf tensors can be written in place");
  }
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError(fmt::format("item() on tensor of shape {}",
                                     shape_to_string(shape())));
  }
  return node_->value[0];
}

double Tensor::operator[](std::size_t flat_index) const {
  return node_->value.at(flat_index);
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->is_leaf) {
    throw ContractError("requires_grad can only be toggled on leaves");
  }
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return node_->is_leaf; }

const char* Tensor::op_name() const { return node_->op; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
  Tensor out;
  out.node_ = std::make_shared<detail::Node>();
  out.node_->shape = node_->shape;
  out.node_->value = node_->value;
  return out;
}

Tensor Tensor::clone() const {
  Tensor out = detach();
  out.node_->requires_grad = node_->is_leaf && node_->requires_grad;
  return out;
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  tape.root_ = root.node();
  if (!root.requires_grad()) return tape;

  // Iterative post-order DFS; recursion depth would follow graph depth.
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next_parent] = stack.back();
    if (next_parent < node->parents.size()) {
      detail::Node* parent = node->parents[next_parent++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::replay() const {
  if (order_.empty()) return;
  for (detail::Node* node : order_) {
    if (!node->is_leaf) node->grad.assign(node->value.size(), 0.0);
  }
  std::vector<double>& seed = root_->grad_buffer();
  for (double& g : seed) g += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->is_leaf && node->backward_fn) node->backward_fn(*node);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError(fmt::format(
        "backward() needs a scalar loss, got shape {}",
        loss.defined() ? shape_to_string(loss.shape()) : "<undefined>"));
  }
  if (!loss.requires_grad()) {
    throw ContractError("loss is not connected to any parameter");
  }
  Tape::record(loss).replay();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace mfur
