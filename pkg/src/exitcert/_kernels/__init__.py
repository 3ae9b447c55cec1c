"""Backend dispatch for the value-iteration sweep kernels.

The Gauss-Seidel sweep is the hot loop of the dynamic-programming
oracle; a Cython build of it is used when available, with a
pure-Python twin as fallback.  Set EXITCERT_BACKEND=py to force the
fallback or EXITCERT_BACKEND=c to require the compiled kernel.
The Jacobi step is vectorized numpy either way.
"""

from __future__ import annotations

import logging
import os

from . import _sweep_py
from ._sweep_py import jacobi_step  # noqa: F401

log = logging.getLogger(__name__)

_requested = os.environ.get("EXITCERT_BACKEND", "auto").lower()
if _requested not in ("auto", "c", "py"):
    raise ImportError(f"EXITCERT_BACKEND must be auto, c or py, not {_requested!r}")

_compiled = None
if _requested in ("auto", "c"):
    try:
        from . import _sweep as _compiled  # type: ignore[attr-defined]
    except ImportError as exc:
        if _requested == "c":
            raise ImportError(
                "EXITCERT_BACKEND=c but the compiled sweep kernel is not importable"
            ) from exc
        log.debug("compiled sweep kernel unavailable, using the Python fallback: %s", exc)

if _compiled is not None:
    gs_sweep = _compiled.gs_sweep
    BACKEND = "c"
else:
    gs_sweep = _sweep_py.gs_sweep
    BACKEND = "py"

__all__ = ["gs_sweep", "jacobi_step", "BACKEND"]
