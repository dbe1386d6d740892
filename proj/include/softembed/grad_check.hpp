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
#include <stdexcept>
#include <vector>

#include "softembed/tensor.hpp"

namespace softembed {

/// f(x) was not finite at a perturbed coordinate.
class GradCheckError : public std::runtime_error {
 public:
  GradCheckError(const std::string& what, std::size_t tensor, std::size_t coordinate)
      : std::runtime_error(what), tensor_(tensor), coordinate_(coordinate) {}
  std::size_t tensor() const noexcept { return tensor_; }
  std::size_t coordinate() const noexcept { return coordinate_; }

 private:
  std::size_t tensor_;
  std::size_t coordinate_;
};

using ScalarFn = std::function<Tensor(const Tensor&)>;
using ScalarFnMany = std::function<Tensor(std::span<const Tensor>)>;

/// Compares the tape gradient of scalar `f` at `x` with central differences
/// of step `h`. Returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-6);

/// Same, over several input tensors at once. If `coordinates` is non-empty,
/// only those flat (tensor, index) pairs are perturbed.
struct Coordinate {
  std::size_t tensor = 0;
  std::size_t index = 0;
};
double grad_check(const ScalarFnMany& f, std::span<const Tensor> xs, double h = 1e-6,
                  std::span<const Coordinate> coordinates = {});

}  // namespace softembed
