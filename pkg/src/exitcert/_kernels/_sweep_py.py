"""Pure-Python sweep kernels, semantically identical to the Cython build.

gs_sweep mutates the value table in place and returns the largest
decrease of the sweep; updates are clamped to be non-increasing so the
iteration descends monotonically from its optimistic initialization.
"""

from __future__ import annotations

import numpy as np


def gs_sweep(values, fixed, base, wts, offsets, stage, reverse):
    """One Gauss-Seidel sweep over the flattened node set.

    For each non-fixed node take the best one-step value
    min_k stage[i, k] + sum_c wts[i, k, c] * values[base[i, k] + offsets[c]]
    over controls whose interpolation foot lies in the box (base >= 0),
    and assign it if it improves on the current value.
    """
    n, n_ctrl = base.shape
    n_corner = len(offsets)
    max_change = 0.0
    order = range(n - 1, -1, -1) if reverse else range(n)
    for i in order:
        if fixed[i]:
            continue
        best = values[i]
        for k in range(n_ctrl):
            b = base[i, k]
            if b < 0:
                continue
            acc = stage[i, k]
            for c in range(n_corner):
                acc += wts[i, k, c] * values[b + offsets[c]]
            if acc < best:
                best = acc
        change = values[i] - best
        if change > max_change:
            max_change = change
        values[i] = best
    return max_change


def jacobi_step(values, fixed, base, wts, offsets, stage):
    """One synchronous update; returns (new_values, max_change).

    Same operator as gs_sweep but evaluated against a frozen copy of
    the table, which makes it order-independent and fully vectorizable.
    """
    n, n_ctrl = base.shape
    best = np.full(n, np.inf)
    for k in range(n_ctrl):
        b = base[:, k]
        ok = b >= 0
        idx = np.where(ok, b, 0)[:, None] + offsets[None, :]
        cand = stage[:, k] + np.einsum("nc,nc->n", wts[:, k, :], values[idx])
        best = np.minimum(best, np.where(ok, cand, np.inf))
    new = np.where(fixed.astype(bool), values, np.minimum(values, best))
    return new, float(np.max(values - new))
