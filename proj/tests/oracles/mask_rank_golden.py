# Copyright 2026 The softembed Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Reference ranks of the soft attention mask, computed with numpy's SVD.

Independent of the C++ Jacobi SVD; the printed sequences are frozen into
tests/test_mask_schedule.cpp.
"""
import numpy as np


def alpha(kind, t, tau):
    x = t / tau
    if kind == "linear":
        return x
    if kind == "accelerating":
        return x * x
    return 1.0 - (1.0 - x) ** 2


def soft_mask(n, l, a):
    m = np.ones((n, n))
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            m[i - 1, j - 1] = min(a * l / i, 1.0)
    return m


def rank(m, eps=1e-8):
    s = np.linalg.svd(m, compute_uv=False)
    return int((s > eps * s[0]).sum())


if __name__ == "__main__":
    for kind in ("linear", "accelerating", "decelerating"):
        seq = [rank(soft_mask(16, 16, alpha(kind, t, 8))) for t in range(9)]
        print(kind, seq)
    for n in (4, 16, 64):
        print(n, rank(soft_mask(n, n, 0.0)), rank(soft_mask(n, n, 1.0)))
