// Copyright 2026 The softembed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "softembed/tensor.hpp"

#include <cmath>
#include <sstream>

#include "softembed/errors.hpp"

namespace softembed {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
  }
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw ShapeError("expected a matrix, got " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar " + shape_string(shape_));
  return data_[0];
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

Tensor Tape::watch(const Tensor& value) {
  Tensor t = value.detach();
  t.tape_ = this;
  t.node_ = nodes_.size();
  nodes_.push_back(Node{t.shape_, nullptr, {}});
  return t;
}

Tensor Tape::record(Tensor value, Backward backward) {
  value.tape_ = this;
  value.node_ = nodes_.size();
  nodes_.push_back(Node{value.shape_, std::move(backward), {}});
  return value;
}

void Tape::backward(const Tensor& loss) {
  if (backward_done_) throw TapeError("backward already ran on this tape; call reset() first");
  if (loss.tape() != this) throw TapeError("loss is not tracked on this tape");
  if (loss.numel() != 1 || loss.rank() != 0) {
    throw TapeError("backward requires a scalar loss, got " + shape_string(loss.shape()));
  }
  backward_done_ = true;
  grad_buffer(loss.node())[0] += 1.0;
  for (std::size_t i = loss.node() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(n.grad, *this);
  }
}

Tensor Tape::grad(const Tensor& t) const {
  if (t.tape() != this) throw TapeError("tensor is not tracked on this tape");
  const Node& n = nodes_[t.node()];
  if (n.grad.empty()) return Tensor(n.shape);
  return Tensor(n.shape, n.grad);
}

void Tape::accumulate(std::size_t node, std::span<const double> g) {
  auto buf = grad_buffer(node);
  if (buf.size() != g.size()) throw ShapeError("gradient size mismatch during backward");
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

std::span<double> Tape::grad_buffer(std::size_t node) {
  Node& n = nodes_.at(node);
  if (n.grad.empty()) n.grad.assign(shape_numel(n.shape), 0.0);
  return n.grad;
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t || !t->tracked()) continue;
    if (tape && tape != t->tape()) throw TapeError("operands are tracked on different tapes");
    tape = t->tape();
  }
  return tape;
}

}  // namespace softembed
