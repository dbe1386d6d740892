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

#include <map>
#include <string>
#include <vector>

#include "softembed/encoder.hpp"

namespace softembed {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay and bias-corrected moments.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig config) : config_(config) {}

  /// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p).
  /// Every gradient is checked before any parameter moves; a non-finite
  /// entry throws NumericalError carrying `step`.
  void step(ParameterMap& params, const std::map<std::string, std::vector<double>>& grads, double lr,
            long step = -1);

  const AdamWConfig& config() const noexcept { return config_; }
  long steps_taken() const noexcept { return t_; }

  /// Moment buffers by parameter name; empty before the first step.
  const std::map<std::string, std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::map<std::string, std::vector<double>>& second_moments() const noexcept { return v_; }
  void restore(long steps_taken, std::map<std::string, std::vector<double>> m,
               std::map<std::string, std::vector<double>> v);

 private:
  AdamWConfig config_;
  long t_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

/// Global L2 norm of all gradients.
double gradient_norm(const std::map<std::string, std::vector<double>>& grads);

}  // namespace softembed
