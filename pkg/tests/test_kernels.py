"""Compiled sweep kernel against its pure-Python twin."""

import os
import subprocess
import sys

import numpy as np
import pytest

from exitcert._kernels import BACKEND, _sweep_py, gs_sweep, jacobi_step
from exitcert.certificates import GridSpec
from exitcert.library import spiral
from exitcert.oracle import BIG, build_stencils

try:
    from exitcert._kernels import _sweep as _compiled
except ImportError:
    _compiled = None


def _spiral_problem():
    ex = spiral(epsilon=0.01)
    grid = GridSpec(np.array([-4.2, -4.2]), np.array([4.2, 4.2]), 0.2)
    X = grid.points()
    D = np.array([ex.target.d(x) for x in X])
    fixed = (D <= grid.spacing / 2.0).astype(np.uint8)
    values = np.full(len(X), BIG)
    values[fixed.astype(bool)] = 0.0
    base, wts, offsets, stage = build_stencils(ex.system, grid, 0.2)
    return values, fixed, base, wts, offsets, stage


@pytest.mark.skipif(_compiled is None, reason="compiled kernel not built")
def test_compiled_sweep_matches_python_bitwise():
    v_py, fixed, base, wts, offsets, stage = _spiral_problem()
    v_c = v_py.copy()
    for sweep in range(12):
        ch_py = _sweep_py.gs_sweep(v_py, fixed, base, wts, offsets, stage, bool(sweep % 2))
        ch_c = _compiled.gs_sweep(v_c, fixed, base, wts, offsets, stage, bool(sweep % 2))
        assert ch_py == ch_c
        assert np.array_equal(v_py, v_c)  # bit-identical, not just close


def test_sweeps_descend_monotonically():
    values, fixed, base, wts, offsets, stage = _spiral_problem()
    prev = values.copy()
    for sweep in range(8):
        change = gs_sweep(values, fixed, base, wts, offsets, stage, bool(sweep % 2))
        assert change >= 0.0
        assert np.all(values <= prev + 1e-15)
        prev = values.copy()


def test_fixed_nodes_never_move():
    values, fixed, base, wts, offsets, stage = _spiral_problem()
    pinned_before = values[fixed.astype(bool)].copy()
    for sweep in range(6):
        gs_sweep(values, fixed, base, wts, offsets, stage, bool(sweep % 2))
    np.testing.assert_array_equal(values[fixed.astype(bool)], pinned_before)


def test_jacobi_reaches_an_exact_fixed_point():
    # 1-d minimum time with h equal to the spacing: feet land on nodes,
    # so the iteration terminates at the exact table in finitely many steps
    from exitcert.library import minimum_time_1d

    ex = minimum_time_1d()
    grid = GridSpec(np.array([-2.0]), np.array([2.0]), 0.01)
    X = grid.points()
    D = np.array([ex.target.d(x) for x in X])
    fixed = (D <= grid.spacing / 2.0).astype(np.uint8)
    values = np.full(len(X), BIG)
    values[fixed.astype(bool)] = 0.0
    base, wts, offsets, stage = build_stencils(ex.system, grid, 0.01)

    change = np.inf
    for _ in range(500):
        values, change = jacobi_step(values, fixed, base, wts, offsets, stage)
        if change == 0.0:
            break
    assert change == 0.0
    again, change2 = jacobi_step(values, fixed, base, wts, offsets, stage)
    assert change2 == 0.0
    assert np.array_equal(again, values)
    np.testing.assert_allclose(values, np.abs(X[:, 0]), atol=1e-12)


def _backend_probe(env_value):
    env = dict(os.environ)
    env["EXITCERT_BACKEND"] = env_value
    return subprocess.run(
        [sys.executable, "-c", "from exitcert._kernels import BACKEND; print(BACKEND)"],
        capture_output=True, text=True, env=env,
    )


def test_backend_dispatch():
    out_py = _backend_probe("py")
    assert out_py.returncode == 0
    assert out_py.stdout.strip() == "py"

    out_bad = _backend_probe("fortran")
    assert out_bad.returncode != 0
    assert "EXITCERT_BACKEND" in out_bad.stderr


@pytest.mark.skipif(_compiled is None, reason="compiled kernel not built")
def test_backend_dispatch_compiled():
    out_c = _backend_probe("c")
    assert out_c.returncode == 0
    assert out_c.stdout.strip() == "c"
    if os.environ.get("EXITCERT_BACKEND", "auto") in ("auto", "c"):
        assert BACKEND == "c"
