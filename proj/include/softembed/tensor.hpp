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

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace softembed {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tape;

/// Dense row-major array of doubles. A tensor produced by (or watched on) a
/// Tape carries a handle to its node; every op on a tracked input yields a
/// tracked output on the same tape. The tape must outlive its tensors.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor full(Shape shape, double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;
  /// Leading extent of a 2-D tensor.
  std::size_t rows() const;
  /// Extent of the last axis.
  std::size_t cols() const;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> mutable_data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double item() const;
  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const;

  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t node() const noexcept { return node_; }

  /// Untracked copy of the values.
  Tensor detach() const;

 private:
  friend class Tape;
  Shape shape_;
  std::vector<double> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so a
/// reverse sweep visits every node after all of its consumers.
class Tape {
 public:
  /// Called during the reverse sweep with the node's accumulated output
  /// gradient; must accumulate into its parents through `accumulate`.
  using Backward = std::function<void(std::span<const double> out_grad, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf whose gradient is wanted.
  Tensor watch(const Tensor& value);

  /// Appends an interior node. Used by op implementations.
  Tensor record(Tensor value, Backward backward);

  void backward(const Tensor& loss);

  /// Gradient of a tracked tensor; zeros if nothing flowed into it.
  Tensor grad(const Tensor& t) const;

  /// Adds `g` into the gradient buffer of node `node`.
  void accumulate(std::size_t node, std::span<const double> g);
  /// Mutable gradient buffer for node `node` (allocated on first use).
  std::span<double> grad_buffer(std::size_t node);

  void reset();
  std::size_t size() const noexcept { return nodes_.size(); }
  bool backward_done() const noexcept { return backward_done_; }

 private:
  struct Node {
    Shape shape;
    Backward backward;
    std::vector<double> grad;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

/// Returns the tape shared by the tracked inputs, or nullptr if none is
/// tracked. Throws TapeError if tracked inputs live on different tapes.
Tape* common_tape(std::initializer_list<const Tensor*> inputs);

}  // namespace softembed
