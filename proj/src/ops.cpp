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

#include "softembed/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "softembed/errors.hpp"

namespace softembed {
namespace {

struct Parent {
  bool tracked = false;
  std::size_t node = 0;
};

Parent parent_of(const Tensor& t) { return {t.tracked(), t.node()}; }

Tensor finish(Tensor value, std::initializer_list<const Tensor*> inputs, Tape::Backward fn) {
  Tape* tape = common_tape(inputs);
  if (!tape) return value;
  return tape->record(std::move(value), std::move(fn));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw DomainError(std::string(op) + ": non-finite input");
  }
}

// Number of times `b` repeats across `a` under trailing-suffix broadcasting.
std::size_t broadcast_repeats(const Tensor& a, const Tensor& b, const char* op) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  bool ok = bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin());
  if (!ok) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(as) + " and " + shape_string(bs) +
                     " are not compatible");
  }
  return a.numel() / b.numel();
}

template <typename Fwd, typename Dfdx>
Tensor unary(const Tensor& a, Fwd fwd, Dfdx dfdx) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a[i]);
  if (!a.tracked()) return Tensor(a.shape(), std::move(out));
  const Parent pa = parent_of(a);
  Tensor value(a.shape(), out);
  return finish(std::move(value), {&a},
                [pa, x = a.values(), y = std::move(out), dfdx](std::span<const double> g, Tape& tape) {
                  auto ga = tape.grad_buffer(pa.node);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
                });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* c = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += aip * brow[j];
    }
  }
  const Parent pa = parent_of(a), pb = parent_of(b);
  Tape::Backward fn;
  if (common_tape({&a, &b})) {
    std::vector<double> av = pb.tracked ? a.values() : std::vector<double>{};
    std::vector<double> bv = pa.tracked ? b.values() : std::vector<double>{};
    fn = [pa, pb, av = std::move(av), bv = std::move(bv), m, k, n](std::span<const double> g,
                                                                   Tape& tape) {
      if (pa.tracked) {
        auto ga = tape.grad_buffer(pa.node);
        for (std::size_t i = 0; i < m; ++i) {
          const double* gi = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double* bp = bv.data() + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
            ga[i * k + p] += s;
          }
        }
      }
      if (pb.tracked) {
        auto gb = tape.grad_buffer(pb.node);
        for (std::size_t i = 0; i < m; ++i) {
          const double* gi = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            double* gbp = gb.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) gbp[j] += aip * gi[j];
          }
        }
      }
    };
  }
  return finish(Tensor(Shape{m, n}, std::move(out)), {&a, &b}, std::move(fn));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner dimensions differ for " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
      out[i * n + j] = s;
    }
  }
  const Parent pa = parent_of(a), pb = parent_of(b);
  Tape::Backward fn;
  if (common_tape({&a, &b})) {
    fn = [pa, pb, av = a.values(), bv = b.values(), m, k, n](std::span<const double> g, Tape& tape) {
      if (pa.tracked) {
        auto ga = tape.grad_buffer(pa.node);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[j * k + p];
          }
      }
      if (pb.tracked) {
        auto gb = tape.grad_buffer(pb.node);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * av[i * k + p];
          }
      }
    };
  }
  return finish(Tensor(Shape{m, n}, std::move(out)), {&a, &b}, std::move(fn));
}

namespace {

enum class Arith { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, Arith kind, const char* name) {
  broadcast_repeats(a, b, name);
  const std::size_t nb = b.numel();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a[i], y = b[i % nb];
    out[i] = kind == Arith::kAdd ? x + y : kind == Arith::kSub ? x - y : x * y;
  }
  const Parent pa = parent_of(a), pb = parent_of(b);
  Tape::Backward fn;
  if (common_tape({&a, &b})) {
    std::vector<double> av, bv;
    if (kind == Arith::kMul) {
      av = a.values();
      bv = b.values();
    }
    fn = [pa, pb, kind, nb, av = std::move(av), bv = std::move(bv)](std::span<const double> g,
                                                                    Tape& tape) {
      if (pa.tracked) {
        auto ga = tape.grad_buffer(pa.node);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += kind == Arith::kMul ? g[i] * bv[i % nb] : g[i];
      }
      if (pb.tracked) {
        auto gb = tape.grad_buffer(pb.node);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double d = kind == Arith::kAdd ? g[i] : kind == Arith::kSub ? -g[i] : g[i] * av[i];
          gb[i % nb] += d;
        }
      }
    };
  }
  return finish(Tensor(a.shape(), std::move(out)), {&a, &b}, std::move(fn));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Arith::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Arith::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Arith::kMul, "mul"); }

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double x : a.data()) {
    if (!(x > 0.0)) throw DomainError("log: non-positive input " + std::to_string(x));
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(c * (x + k * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
      });
}

Tensor softmax_rows(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax_rows: scalar input");
  require_finite(a.data(), "softmax_rows");
  const std::size_t n = a.cols(), m = a.numel() / n;
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = a.data().data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  const Parent pa = parent_of(a);
  std::vector<double> y = out;
  return finish(Tensor(a.shape(), std::move(out)), {&a},
                [pa, y = std::move(y), n, m](std::span<const double> g, Tape& tape) {
                  auto ga = tape.grad_buffer(pa.node);
                  for (std::size_t r = 0; r < m; ++r) {
                    const double* yr = y.data() + r * n;
                    const double* gr = g.data() + r * n;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                    for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += yr[j] * (gr[j] - dot);
                  }
                });
}

Tensor log_softmax_rows(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("log_softmax_rows: scalar input");
  require_finite(a.data(), "log_softmax_rows");
  const std::size_t n = a.cols(), m = a.numel() / n;
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = a.data().data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lz;
  }
  const Parent pa = parent_of(a);
  std::vector<double> y = out;
  return finish(Tensor(a.shape(), std::move(out)), {&a},
                [pa, y = std::move(y), n, m](std::span<const double> g, Tape& tape) {
                  auto ga = tape.grad_buffer(pa.node);
                  for (std::size_t r = 0; r < m; ++r) {
                    double gs = 0.0;
                    for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
                    for (std::size_t j = 0; j < n; ++j)
                      ga[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * gs;
                  }
                });
}

Tensor l2_normalize_rows(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("l2_normalize_rows: scalar input");
  require_finite(a.data(), "l2_normalize_rows");
  const std::size_t n = a.cols(), m = a.numel() / n;
  std::vector<double> out(a.numel()), norms(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = a.data().data() + r * n;
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += x[j] * x[j];
    const double nrm = std::sqrt(ss);
    if (!(nrm > 0.0)) throw DomainError("l2_normalize_rows: zero-norm row " + std::to_string(r));
    norms[r] = nrm;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[j] / nrm;
  }
  const Parent pa = parent_of(a);
  std::vector<double> y = out;
  return finish(Tensor(a.shape(), std::move(out)), {&a},
                [pa, y = std::move(y), norms = std::move(norms), n, m](std::span<const double> g,
                                                                       Tape& tape) {
                  auto ga = tape.grad_buffer(pa.node);
                  for (std::size_t r = 0; r < m; ++r) {
                    const double* yr = y.data() + r * n;
                    const double* gr = g.data() + r * n;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                    for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += (gr[j] - yr[j] * dot) / norms[r];
                  }
                });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  const std::size_t n = x.cols();
  if (gain.rank() != 1 || gain.numel() != n) {
    throw ShapeError("rms_norm: gain " + shape_string(gain.shape()) + " does not match input " +
                     shape_string(x.shape()));
  }
  const std::size_t m = x.numel() / n;
  std::vector<double> out(x.numel()), inv(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = x.data().data() + r * n;
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += xr[j] * xr[j];
    inv[r] = 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xr[j] * inv[r] * gain[j];
  }
  const Parent px = parent_of(x), pg = parent_of(gain);
  Tape::Backward fn;
  if (common_tape({&x, &gain})) {
    fn = [px, pg, xv = x.values(), gv = gain.values(), inv = std::move(inv), n, m](
             std::span<const double> g, Tape& tape) {
      if (px.tracked) {
        auto gx = tape.grad_buffer(px.node);
        for (std::size_t r = 0; r < m; ++r) {
          const double* xr = xv.data() + r * n;
          const double* gr = g.data() + r * n;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += gr[j] * gv[j] * xr[j];
          const double c = inv[r] * inv[r] * inv[r] * dot / static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += inv[r] * gv[j] * gr[j] - c * xr[j];
        }
      }
      if (pg.tracked) {
        auto gg = tape.grad_buffer(pg.node);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xv[r * n + j] * inv[r];
      }
    };
  }
  return finish(Tensor(x.shape(), std::move(out)), {&x, &gain}, std::move(fn));
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  const Parent pa = parent_of(a);
  return finish(Tensor::scalar(s), {&a}, [pa](std::span<const double> g, Tape& tape) {
    auto ga = tape.grad_buffer(pa.node);
    for (auto& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor logsumexp(const Tensor& a) {
  require_finite(a.data(), "logsumexp");
  const double mx = *std::max_element(a.data().begin(), a.data().end());
  double z = 0.0;
  for (double x : a.data()) z += std::exp(x - mx);
  const double lse = mx + std::log(z);
  const Parent pa = parent_of(a);
  return finish(Tensor::scalar(lse), {&a},
                [pa, xv = a.values(), lse](std::span<const double> g, Tape& tape) {
                  auto ga = tape.grad_buffer(pa.node);
                  for (std::size_t i = 0; i < xv.size(); ++i) ga[i] += g[0] * std::exp(xv[i] - lse);
                });
}

Tensor cosine(const Tensor& u, const Tensor& v) {
  if (u.shape() != v.shape()) {
    throw ShapeError("cosine: shapes " + shape_string(u.shape()) + " and " + shape_string(v.shape()) +
                     " differ");
  }
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t i = 0; i < u.numel(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  if (!(uu > 0.0) || !(vv > 0.0)) throw DomainError("cosine: zero vector");
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  const double c = uv / (nu * nv);
  const Parent pu = parent_of(u), pv = parent_of(v);
  Tape::Backward fn;
  if (common_tape({&u, &v})) {
    fn = [pu, pv, uvals = u.values(), vvals = v.values(), nu, nv, c](std::span<const double> g,
                                                                     Tape& tape) {
      // d cos / du = v/(|u||v|) - cos * u/|u|^2
      if (pu.tracked) {
        auto gu = tape.grad_buffer(pu.node);
        for (std::size_t i = 0; i < uvals.size(); ++i)
          gu[i] += g[0] * (vvals[i] / (nu * nv) - c * uvals[i] / (nu * nu));
      }
      if (pv.tracked) {
        auto gv = tape.grad_buffer(pv.node);
        for (std::size_t i = 0; i < vvals.size(); ++i)
          gv[i] += g[0] * (uvals[i] / (nu * nv) - c * vvals[i] / (nv * nv));
      }
    };
  }
  return finish(Tensor::scalar(c), {&u, &v}, std::move(fn));
}

Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_matrix(a, "select_rows");
  if (rows.empty()) throw ShapeError("select_rows: empty row list");
  const std::size_t n = a.cols();
  std::vector<double> out(rows.size() * n);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= a.rows()) {
      throw ShapeError("select_rows: row " + std::to_string(rows[r]) + " out of range for " +
                       shape_string(a.shape()));
    }
    std::copy_n(a.data().begin() + rows[r] * n, n, out.begin() + r * n);
  }
  const Parent pa = parent_of(a);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return finish(Tensor(Shape{rows.size(), n}, std::move(out)), {&a},
                [pa, idx = std::move(idx), n](std::span<const double> g, Tape& tape) {
                  auto ga = tape.grad_buffer(pa.node);
                  for (std::size_t r = 0; r < idx.size(); ++r)
                    for (std::size_t j = 0; j < n; ++j) ga[idx[r] * n + j] += g[r * n + j];
                });
}

Tensor pick(const Tensor& a, std::span<const std::size_t> cols) {
  require_matrix(a, "pick");
  const std::size_t m = a.rows(), n = a.cols();
  if (cols.size() != m) {
    throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for " + shape_string(a.shape()));
  }
  std::vector<std::size_t> flat(m);
  for (std::size_t r = 0; r < m; ++r) {
    if (cols[r] >= n) throw ShapeError("pick: column " + std::to_string(cols[r]) + " out of range");
    flat[r] = r * n + cols[r];
  }
  return gather(a, flat);
}

Tensor gather(const Tensor& a, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("gather: empty index list");
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a.numel()) throw ShapeError("gather: index out of range");
    out[i] = a[indices[i]];
  }
  const Parent pa = parent_of(a);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return finish(Tensor::vector(std::move(out)), {&a},
                [pa, idx = std::move(idx)](std::span<const double> g, Tape& tape) {
                  auto ga = tape.grad_buffer(pa.node);
                  for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
                });
}

Tensor mask_apply(const Tensor& a, std::span<const double> mask) {
  if (mask.size() != a.numel()) {
    throw ShapeError("mask_apply: mask of " + std::to_string(mask.size()) + " entries for " +
                     shape_string(a.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * mask[i];
  const Parent pa = parent_of(a);
  std::vector<double> mv(mask.begin(), mask.end());
  return finish(Tensor(a.shape(), std::move(out)), {&a},
                [pa, mv = std::move(mv)](std::span<const double> g, Tape& tape) {
                  auto ga = tape.grad_buffer(pa.node);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mv[i];
                });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (count == 0 || begin + count > n) {
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + shape_string(a.shape()));
  }
  std::vector<double> out(m * count);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(a.data().begin() + r * n + begin, count, out.begin() + r * count);
  const Parent pa = parent_of(a);
  return finish(Tensor(Shape{m, count}, std::move(out)), {&a},
                [pa, m, n, begin, count](std::span<const double> g, Tape& tape) {
                  auto ga = tape.grad_buffer(pa.node);
                  for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t j = 0; j < count; ++j) ga[r * n + begin + j] += g[r * count + j];
                });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row counts differ for " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols(), n = na + nb;
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(a.data().begin() + r * na, na, out.begin() + r * n);
    std::copy_n(b.data().begin() + r * nb, nb, out.begin() + r * n + na);
  }
  const Parent pa = parent_of(a), pb = parent_of(b);
  return finish(Tensor(Shape{m, n}, std::move(out)), {&a, &b},
                [pa, pb, m, na, nb, n](std::span<const double> g, Tape& tape) {
                  if (pa.tracked) {
                    auto ga = tape.grad_buffer(pa.node);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < na; ++j) ga[r * na + j] += g[r * n + j];
                  }
                  if (pb.tracked) {
                    auto gb = tape.grad_buffer(pb.node);
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < nb; ++j) gb[r * nb + j] += g[r * n + na + j];
                  }
                });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  std::vector<double> out;
  std::vector<Parent> parents;
  std::vector<std::size_t> sizes;
  Tape* tape = nullptr;
  for (const Tensor& p : parts) {
    if (p.rank() > 1) throw ShapeError("concat: expected vectors, got " + shape_string(p.shape()));
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(parent_of(p));
    sizes.push_back(p.numel());
    if (p.tracked()) {
      if (tape && tape != p.tape()) throw TapeError("operands are tracked on different tapes");
      tape = p.tape();
    }
  }
  Tensor value = Tensor::vector(std::move(out));
  if (!tape) return value;
  return tape->record(std::move(value), [parents = std::move(parents), sizes = std::move(sizes)](
                                            std::span<const double> g, Tape& tp) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (parents[i].tracked) tp.accumulate(parents[i].node, g.subspan(off, sizes[i]));
      off += sizes[i];
    }
  });
}

Tensor row_dots(const Tensor& a, const Tensor& b, std::size_t per_row) {
  require_matrix(a, "row_dots");
  require_matrix(b, "row_dots");
  const std::size_t m = a.rows(), d = a.cols();
  if (per_row == 0 || b.cols() != d || b.rows() != m * per_row) {
    throw ShapeError("row_dots: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                     " incompatible with " + std::to_string(per_row) + " rows per query");
  }
  std::vector<double> out(m * per_row);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < per_row; ++k) {
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) s += a.at(i, p) * b.at(i * per_row + k, p);
      out[i * per_row + k] = s;
    }
  const Parent pa = parent_of(a), pb = parent_of(b);
  Tape::Backward fn;
  if (common_tape({&a, &b})) {
    fn = [pa, pb, av = a.values(), bv = b.values(), m, d, per_row](std::span<const double> g,
                                                                   Tape& tape) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < per_row; ++k) {
          const double gik = g[i * per_row + k];
          const std::size_t br = (i * per_row + k) * d;
          if (pa.tracked) {
            auto ga = tape.grad_buffer(pa.node);
            for (std::size_t p = 0; p < d; ++p) ga[i * d + p] += gik * bv[br + p];
          }
          if (pb.tracked) {
            auto gb = tape.grad_buffer(pb.node);
            for (std::size_t p = 0; p < d; ++p) gb[br + p] += gik * av[i * d + p];
          }
        }
    };
  }
  return finish(Tensor(Shape{m, per_row}, std::move(out)), {&a, &b}, std::move(fn));
}

namespace {

void check_segments(const Tensor& x, std::span<const Segment> segments, const char* op) {
  require_matrix(x, op);
  if (segments.empty()) throw ShapeError(std::string(op) + ": no segments");
  for (const auto& s : segments) {
    if (s.length == 0 || s.offset + s.length > x.rows()) {
      throw ShapeError(std::string(op) + ": segment out of range for " + shape_string(x.shape()));
    }
  }
}

}  // namespace

Tensor segment_mean(const Tensor& x, std::span<const Segment> segments) {
  check_segments(x, segments, "segment_mean");
  const std::size_t n = x.cols(), b = segments.size();
  std::vector<double> out(b * n, 0.0);
  for (std::size_t s = 0; s < b; ++s) {
    const auto& seg = segments[s];
    for (std::size_t r = seg.offset; r < seg.offset + seg.length; ++r)
      for (std::size_t j = 0; j < n; ++j) out[s * n + j] += x.at(r, j);
    for (std::size_t j = 0; j < n; ++j) out[s * n + j] /= static_cast<double>(seg.length);
  }
  const Parent px = parent_of(x);
  std::vector<Segment> segs(segments.begin(), segments.end());
  return finish(Tensor(Shape{b, n}, std::move(out)), {&x},
                [px, segs = std::move(segs), n](std::span<const double> g, Tape& tape) {
                  auto gx = tape.grad_buffer(px.node);
                  for (std::size_t s = 0; s < segs.size(); ++s) {
                    const double w = 1.0 / static_cast<double>(segs[s].length);
                    for (std::size_t r = segs[s].offset; r < segs[s].offset + segs[s].length; ++r)
                      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[s * n + j] * w;
                  }
                });
}

Tensor segment_last(const Tensor& x, std::span<const Segment> segments) {
  check_segments(x, segments, "segment_last");
  std::vector<std::size_t> rows;
  rows.reserve(segments.size());
  for (const auto& s : segments) rows.push_back(s.offset + s.length - 1);
  return select_rows(x, rows);
}

Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                         std::span<const Segment> segments,
                         std::span<const std::span<const double>> mask_weights,
                         std::size_t heads, std::size_t kv_heads) {
  require_matrix(q, "grouped_attention");
  require_matrix(k, "grouped_attention");
  require_matrix(v, "grouped_attention");
  if (heads == 0 || kv_heads == 0 || heads % kv_heads != 0) {
    throw ShapeError("grouped_attention: heads " + std::to_string(heads) +
                     " not divisible by kv_heads " + std::to_string(kv_heads));
  }
  const std::size_t t = q.rows();
  if (q.cols() % heads != 0) throw ShapeError("grouped_attention: query width not divisible by heads");
  const std::size_t hd = q.cols() / heads;
  if (k.rows() != t || v.rows() != t || k.cols() != kv_heads * hd || v.cols() != kv_heads * hd) {
    throw ShapeError("grouped_attention: key/value shapes " + shape_string(k.shape()) + ", " +
                     shape_string(v.shape()) + " do not match query " + shape_string(q.shape()));
  }
  check_segments(q, segments, "grouped_attention");
  if (mask_weights.size() != segments.size()) {
    throw ShapeError("grouped_attention: one mask per segment required");
  }
  const std::size_t group = heads / kv_heads;
  const std::size_t qw = heads * hd, kw = kv_heads * hd;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  const double* Q = q.data().data();
  const double* K = k.data().data();
  const double* V = v.data().data();

  std::vector<double> out(t * qw, 0.0);
  // probs[s] holds heads * L * L probabilities for segment s.
  std::vector<std::vector<double>> probs(segments.size());
  std::vector<double> scores;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const std::size_t off = segments[s].offset, len = segments[s].length;
    const auto w = mask_weights[s];
    if (w.size() != len * len) throw ShapeError("grouped_attention: mask size does not match segment");
    auto& P = probs[s];
    P.assign(heads * len * len, 0.0);
    scores.assign(len, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t g = h / group;
      for (std::size_t i = 0; i < len; ++i) {
        const double* qi = Q + (off + i) * qw + h * hd;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
          const double wij = w[i * len + j];
          if (!(wij > 0.0)) continue;
          const double* kj = K + (off + j) * kw + g * hd;
          double d = 0.0;
          for (std::size_t p = 0; p < hd; ++p) d += qi[p] * kj[p];
          scores[j] = d * sc + std::log(wij);
          mx = std::max(mx, scores[j]);
        }
        if (!std::isfinite(mx)) throw DomainError("grouped_attention: fully masked row");
        double* pi = P.data() + (h * len + i) * len;
        double z = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          if (!(w[i * len + j] > 0.0)) continue;
          z += (pi[j] = std::exp(scores[j] - mx));
        }
        double* oi = out.data() + (off + i) * qw + h * hd;
        for (std::size_t j = 0; j < len; ++j) {
          if (!(w[i * len + j] > 0.0)) continue;
          pi[j] /= z;
          const double* vj = V + (off + j) * kw + g * hd;
          for (std::size_t p = 0; p < hd; ++p) oi[p] += pi[j] * vj[p];
        }
      }
    }
  }

  const Parent pq = parent_of(q), pk = parent_of(k), pv = parent_of(v);
  Tape::Backward fn;
  if (common_tape({&q, &k, &v})) {
    std::vector<Segment> segs(segments.begin(), segments.end());
    fn = [pq, pk, pv, segs = std::move(segs), probs = std::move(probs), qv = q.values(),
          kvals = k.values(), vv = v.values(), heads, group, hd, qw, kw,
          sc](std::span<const double> gout, Tape& tape) {
      std::span<double> gq, gk, gv;
      if (pq.tracked) gq = tape.grad_buffer(pq.node);
      if (pk.tracked) gk = tape.grad_buffer(pk.node);
      if (pv.tracked) gv = tape.grad_buffer(pv.node);
      std::vector<double> dp;
      for (std::size_t s = 0; s < segs.size(); ++s) {
        const std::size_t off = segs[s].offset, len = segs[s].length;
        const auto& P = probs[s];
        dp.assign(len, 0.0);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t g = h / group;
          for (std::size_t i = 0; i < len; ++i) {
            const double* pi = P.data() + (h * len + i) * len;
            const double* go = gout.data() + (off + i) * qw + h * hd;
            double dot = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
              if (pi[j] == 0.0) {
                dp[j] = 0.0;
                continue;
              }
              const double* vj = vv.data() + (off + j) * kw + g * hd;
              double d = 0.0;
              for (std::size_t p = 0; p < hd; ++p) d += go[p] * vj[p];
              dp[j] = d;
              dot += pi[j] * d;
              if (pv.tracked) {
                double* gvj = gv.data() + (off + j) * kw + g * hd;
                for (std::size_t p = 0; p < hd; ++p) gvj[p] += pi[j] * go[p];
              }
            }
            const double* qi = qv.data() + (off + i) * qw + h * hd;
            for (std::size_t j = 0; j < len; ++j) {
              if (pi[j] == 0.0) continue;
              const double ds = pi[j] * (dp[j] - dot) * sc;
              const double* kj = kvals.data() + (off + j) * kw + g * hd;
              if (pq.tracked) {
                double* gqi = gq.data() + (off + i) * qw + h * hd;
                for (std::size_t p = 0; p < hd; ++p) gqi[p] += ds * kj[p];
              }
              if (pk.tracked) {
                double* gkj = gk.data() + (off + j) * kw + g * hd;
                for (std::size_t p = 0; p < hd; ++p) gkj[p] += ds * qi[p];
              }
            }
          }
        }
      }
    };
  }
  return finish(Tensor(Shape{t, qw}, std::move(out)), {&q, &k, &v}, std::move(fn));
}

}  // namespace softembed
