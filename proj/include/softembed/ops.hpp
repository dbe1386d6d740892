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
#include <span>
#include <vector>

#include "softembed/tensor.hpp"

namespace softembed {

/// A contiguous run of rows inside a packed [tokens x features] matrix.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Matrix products (2-D operands).
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * transpose(b).
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Elementwise arithmetic. `b` may equal `a`'s shape or a trailing suffix of
// it (e.g. a [N] bias against an [M x N] matrix); nothing else broadcasts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor exp(const Tensor& a);
/// Throws DomainError on non-positive entries.
Tensor log(const Tensor& a);
/// tanh-approximated GELU.
Tensor gelu(const Tensor& a);

// Row-wise (last axis) operations.
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
/// Throws DomainError if any row has zero norm.
Tensor l2_normalize_rows(const Tensor& a);
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-6);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// log(sum(exp(a))) over every entry.
Tensor logsumexp(const Tensor& a);

/// Cosine similarity of two equal-shape vectors.
Tensor cosine(const Tensor& u, const Tensor& v);

// Selection.
/// Gathers rows of a matrix (embedding lookup).
Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows);
/// out[r] = a[r, cols[r]].
Tensor pick(const Tensor& a, std::span<const std::size_t> cols);
/// Gathers entries of a flattened tensor into a vector.
Tensor gather(const Tensor& a, std::span<const std::size_t> indices);
/// Elementwise product with a constant (untracked) mask of equal shape.
Tensor mask_apply(const Tensor& a, std::span<const double> mask);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Concatenates vectors/scalars into one vector.
Tensor concat(std::span<const Tensor> parts);
/// out[i, k] = dot(a[i], b[i*K + k]) for a [B x d], b [B*K x d].
Tensor row_dots(const Tensor& a, const Tensor& b, std::size_t per_row);

// Packed-sequence operations.
Tensor segment_mean(const Tensor& x, std::span<const Segment> segments);
Tensor segment_last(const Tensor& x, std::span<const Segment> segments);

/// Grouped-query attention over packed sequences.
///
/// q is [T x heads*head_dim]; k and v are [T x kv_heads*head_dim]. Query head
/// h reads key/value group h / (heads / kv_heads). `mask_weights[s]` holds the
/// row-major L x L multiplicative weights of segment s (entries in [0,1]);
/// attention probabilities are softmax(q.k / sqrt(head_dim) + log w), so zero
/// weights exclude a position exactly and fractional weights rescale it before
/// renormalization.
Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         std::span<const Segment> segments,
                         std::span<const std::span<const double>> mask_weights,
                         std::size_t heads, std::size_t kv_heads);

}  // namespace softembed
