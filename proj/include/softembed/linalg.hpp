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
#include <vector>

namespace softembed::linalg {

/// Thin result of a one-sided Jacobi SVD of a row-major m x n matrix.
/// `values` are sorted descending; column c of `right` (n x n, row-major) is
/// the right singular vector for values[c].
struct Svd {
  std::vector<double> values;
  std::vector<double> right;
};

Svd jacobi_svd(const std::vector<double>& a, std::size_t m, std::size_t n,
               int max_sweeps = 60, double tol = 1e-15);

}  // namespace softembed::linalg
