#!/usr/bin/env python3
"""Time the compiled sweep kernel against the pure-Python fallback.

Both backends run the same alternating-direction min-update sweeps on
the same stencil (the planar spiral on a square grid); the script
checks that they produce identical value tables before reporting the
timing ratio.
"""

import argparse
import time

import numpy as np

from exitcert._kernels import BACKEND, _sweep_py
from exitcert.certificates import GridSpec
from exitcert.library import get_example
from exitcert.oracle import BIG, build_stencils

try:
    from exitcert._kernels import _sweep as _compiled
except ImportError:
    _compiled = None


def run_sweeps(sweep_fn, values, fixed, base, wts, offsets, stage, n_sweeps):
    v = values.copy()
    t0 = time.perf_counter()
    for k in range(n_sweeps):
        sweep_fn(v, fixed, base, wts, offsets, stage, bool(k % 2))
    return time.perf_counter() - t0, v


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--spacing", type=float, default=0.1,
                    help="grid spacing; halving it quadruples the node count")
    ap.add_argument("--sweeps", type=int, default=8, help="sweeps per backend")
    args = ap.parse_args()

    ex = get_example("spiral", epsilon=0.01)
    grid = GridSpec(lower=(-4.2, -4.2), upper=(4.2, 4.2), spacing=args.spacing)
    X = grid.points()
    D = np.array([ex.target.d(x) for x in X])
    fixed = (D <= grid.spacing / 2.0).astype(np.uint8)
    values = np.full(X.shape[0], BIG, dtype=np.float64)
    values[fixed.astype(bool)] = 0.0
    base, wts, offsets, stage = build_stencils(ex.system, grid, args.spacing)

    n = X.shape[0]
    k = stage.shape[1]
    print(f"stencil: {n} nodes x {k} controls, {args.sweeps} sweeps each")
    print(f"active backend at import: {BACKEND}")

    t_py, v_py = run_sweeps(
        _sweep_py.gs_sweep, values, fixed, base, wts, offsets, stage, args.sweeps
    )
    print(f"python fallback : {t_py:8.4f} s  ({t_py / args.sweeps * 1e3:7.2f} ms/sweep)")

    if _compiled is None:
        print("compiled kernel : unavailable (install built without the extension)")
        return

    t_c, v_c = run_sweeps(
        _compiled.gs_sweep, values, fixed, base, wts, offsets, stage, args.sweeps
    )
    print(f"compiled kernel : {t_c:8.4f} s  ({t_c / args.sweeps * 1e3:7.2f} ms/sweep)")

    if not np.array_equal(v_py, v_c):
        worst = float(np.max(np.abs(v_py - v_c)))
        raise SystemExit(f"BACKENDS DISAGREE: max |diff| = {worst:g}")
    print(f"tables identical; speedup x{t_py / t_c:.1f}")


if __name__ == "__main__":
    main()
