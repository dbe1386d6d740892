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

#include "softembed/optimizer.hpp"

#include <cmath>

#include "softembed/errors.hpp"

namespace softembed {

void AdamW::step(ParameterMap& params, const std::map<std::string, std::vector<double>>& grads, double lr,
                 long step) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("AdamW: gradient for unknown parameter '" + name + "'");
    if (g.size() != it->second.numel()) throw ShapeError("AdamW: gradient size mismatch for '" + name + "'");
    for (double x : g)
      if (!std::isfinite(x)) throw NumericalError("non-finite gradient for '" + name + "'", step);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    auto p = params.at(name).mutable_data();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1, vh = v[i] / bc2;
      p[i] -= lr * (mh / (std::sqrt(vh) + config_.eps) + config_.weight_decay * p[i]);
    }
  }
}

void AdamW::restore(long steps_taken, std::map<std::string, std::vector<double>> m,
                    std::map<std::string, std::vector<double>> v) {
  t_ = steps_taken;
  m_ = std::move(m);
  v_ = std::move(v);
}

double gradient_norm(const std::map<std::string, std::vector<double>>& grads) {
  double ss = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g) ss += x * x;
  return std::sqrt(ss);
}

}  // namespace softembed
