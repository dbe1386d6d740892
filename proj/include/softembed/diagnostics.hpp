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
#include <cstdint>
#include <string>
#include <vector>

namespace softembed {

struct GradCheckSummary {
  std::string name;
  std::size_t cases = 0;
  /// Largest relative error over all cases.
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_error < tolerance; }
};

/// Seeded finite-difference checks of every loss and of a full encoder step
/// (2 layers, grouped-query attention, soft mask, mean pooling, InfoNCE).
/// Tolerances: 1e-4 relative for losses, 1e-3 for the encoder.
std::vector<GradCheckSummary> run_grad_checks(std::uint64_t seed, std::size_t cases);

}  // namespace softembed
