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

#include "softembed/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "softembed/errors.hpp"

namespace softembed {

double grad_check(const ScalarFn& f, const Tensor& x, double h) {
  const Tensor xs[] = {x};
  return grad_check([&f](std::span<const Tensor> in) { return f(in[0]); }, xs, h);
}

double grad_check(const ScalarFnMany& f, std::span<const Tensor> xs, double h,
                  std::span<const Coordinate> coordinates) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Tensor> watched;
    watched.reserve(xs.size());
    for (const auto& x : xs) watched.push_back(tape.watch(x));
    Tensor y = f(watched);
    if (!y.tracked() || y.numel() != 1) throw TapeError("grad_check: f must return a tracked scalar");
    tape.backward(y);
    for (const auto& w : watched) analytic.push_back(tape.grad(w));
  }

  std::vector<Coordinate> coords(coordinates.begin(), coordinates.end());
  if (coords.empty()) {
    for (std::size_t t = 0; t < xs.size(); ++t)
      for (std::size_t i = 0; i < xs[t].numel(); ++i) coords.push_back({t, i});
  }

  std::vector<Tensor> probe;
  probe.reserve(xs.size());
  for (const auto& x : xs) probe.push_back(x.detach());

  auto eval = [&](const Coordinate& c) {
    const double v = f(probe).item();
    if (!std::isfinite(v)) {
      throw GradCheckError("grad_check: non-finite f at tensor " + std::to_string(c.tensor) +
                               " coordinate " + std::to_string(c.index),
                           c.tensor, c.index);
    }
    return v;
  };

  double worst = 0.0;
  for (const auto& c : coords) {
    double& slot = probe[c.tensor].mutable_data()[c.index];
    const double orig = slot;
    slot = orig + h;
    const double fp = eval(c);
    slot = orig - h;
    const double fm = eval(c);
    slot = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[c.tensor][c.index] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace softembed
