"""Monotone piecewise-linear functions on knot tables.

These are the workhorses behind the decrease modulus, the distance
envelopes and the composed decay certificate: everything downstream is
either a knot table or a composition of knot tables.  Inverting a
strictly increasing piecewise-linear function is exact (swap the knot
columns), so the decay certificate never needs iterative root finding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "MonotonePL",
    "pwl_min",
    "lift_strict",
    "lower_strict",
    "bisect_root",
]


@dataclass(frozen=True)
class MonotonePL:
    """Non-decreasing piecewise-linear function given by knots (xs, ys).

    xs must be strictly increasing.  Between knots the value is linear;
    outside the knot range behaviour is controlled by ``extrapolate``:

    * ``"linear"`` - continue with the first/last segment slope,
    * ``"clamp"``  - hold the end values constant.
    """

    xs: np.ndarray
    ys: np.ndarray
    extrapolate: str = "linear"

    def __post_init__(self) -> None:
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        if xs.ndim != 1 or xs.shape != ys.shape:
            raise ValueError("knot arrays must be one-dimensional and equal length")
        if xs.size < 2:
            raise ValueError("need at least two knots")
        if not np.all(np.isfinite(xs)) or not np.all(np.isfinite(ys)):
            raise ValueError("knots must be finite")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("knot abscissae must be strictly increasing")
        if np.any(np.diff(ys) < 0):
            raise ValueError("knot values must be non-decreasing")
        if self.extrapolate not in ("linear", "clamp"):
            raise ValueError(f"unknown extrapolation mode {self.extrapolate!r}")

    # ------------------------------------------------------------------
    # evaluation

    def __call__(self, r):
        r_arr = np.asarray(r, dtype=float)
        out = np.interp(r_arr, self.xs, self.ys)
        if self.extrapolate == "linear":
            xs, ys = self.xs, self.ys
            lo_slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
            hi_slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
            out = np.where(r_arr < xs[0], ys[0] + lo_slope * (r_arr - xs[0]), out)
            out = np.where(r_arr > xs[-1], ys[-1] + hi_slope * (r_arr - xs[-1]), out)
        if np.isscalar(r) or getattr(r, "ndim", 0) == 0:
            return float(out)
        return out

    # ------------------------------------------------------------------
    # structure

    @property
    def min_slope(self) -> float:
        return float(np.min(np.diff(self.ys) / np.diff(self.xs)))

    @property
    def is_strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.ys) > 0))

    def inverse(self) -> "MonotonePL":
        """Exact inverse, obtained by swapping the knot columns.

        Requires strictly increasing values; otherwise the function is
        not injective and there is nothing to invert.
        """
        if not self.is_strictly_increasing:
            raise ValueError("cannot invert: function has a flat segment")
        return MonotonePL(self.ys.copy(), self.xs.copy(), extrapolate=self.extrapolate)

    def shift_values(self, delta: float) -> "MonotonePL":
        return MonotonePL(self.xs.copy(), self.ys + delta, extrapolate=self.extrapolate)

    @classmethod
    def identity(cls, xs: Sequence[float]) -> "MonotonePL":
        arr = np.asarray(xs, dtype=float)
        return cls(arr, arr.copy())


# ----------------------------------------------------------------------
# pointwise minimum of two monotone PL functions


def pwl_min(f: MonotonePL, g: MonotonePL) -> MonotonePL:
    """Exact pointwise minimum of two non-decreasing PL functions.

    The result is represented on the union of both knot sets plus every
    crossing point, so min(f, g) is itself piecewise linear and exact on
    the merged knot range.  Outside that range it extrapolates its own
    end segments, which may differ from the true minimum if the inputs
    cross again out there; callers keep their arguments in range.
    """
    xs = np.union1d(f.xs, g.xs)
    fv = np.asarray(f(xs), dtype=float)
    gv = np.asarray(g(xs), dtype=float)
    diff = fv - gv

    knots_x = [xs[0]]
    knots_y = [min(fv[0], gv[0])]
    for i in range(len(xs) - 1):
        a, b = xs[i], xs[i + 1]
        da, db = diff[i], diff[i + 1]
        if (da > 0 and db < 0) or (da < 0 and db > 0):
            # both functions are linear on [a, b], so the crossing is exact
            xc = a + (b - a) * da / (da - db)
            if a < xc < b:
                knots_x.append(xc)
                knots_y.append(float(f(xc)))
        knots_x.append(b)
        knots_y.append(min(fv[i + 1], gv[i + 1]))

    kx = np.asarray(knots_x)
    ky = np.asarray(knots_y)
    # drop duplicate abscissae that can appear when a crossing lands on a knot
    keep = np.concatenate(([True], np.diff(kx) > 0))
    return MonotonePL(kx[keep], ky[keep], extrapolate=f.extrapolate)


# ----------------------------------------------------------------------
# strictification passes


def lift_strict(xs: np.ndarray, ys: np.ndarray, min_slope: float) -> np.ndarray:
    """Raise values left to right until every segment slope is >= min_slope.

    Only ever increases entries, so an upper envelope stays an upper
    envelope.
    """
    if min_slope <= 0:
        raise ValueError("min_slope must be positive")
    out = np.asarray(ys, dtype=float).copy()
    xs = np.asarray(xs, dtype=float)
    for i in range(1, len(out)):
        floor = out[i - 1] + min_slope * (xs[i] - xs[i - 1])
        if out[i] < floor:
            out[i] = floor
    return out


def lower_strict(xs: np.ndarray, ys: np.ndarray, min_slope: float) -> np.ndarray:
    """Lower values right to left until every segment slope is >= min_slope.

    Only ever decreases entries, so a lower envelope stays a lower
    envelope.  The requested slope is shrunk automatically when honouring
    it would push a positive value to zero or below: the effective slope
    is capped at half the smallest chord y_i / x_i over knots with
    x_i > 0, which keeps every lowered value positive.
    """
    out = np.asarray(ys, dtype=float).copy()
    xs = np.asarray(xs, dtype=float)
    pos = xs > 0
    if not np.any(pos):
        raise ValueError("need at least one knot with positive abscissa")
    chords = out[pos] / xs[pos]
    if np.any(chords <= 0):
        raise ValueError("cannot strictify: zero value at positive abscissa")
    eff = min(min_slope, 0.5 * float(np.min(chords)))
    if eff <= 0:
        raise ValueError("min_slope must be positive")
    for i in range(len(out) - 2, -1, -1):
        cap = out[i + 1] - eff * (xs[i + 1] - xs[i])
        if out[i] > cap:
            out[i] = cap
    return out


# ----------------------------------------------------------------------
# scalar bisection


def bisect_root(
    fn: Callable[[float], float],
    lo: float,
    hi: float,
    *,
    xtol: float = 1e-12,
    ftol: float = 0.0,
    max_iter: int = 200,
) -> float:
    """Find a root of fn on [lo, hi] by bisection.

    fn(lo) and fn(hi) must bracket zero (opposite signs, or one of them
    already a root).  Returns the midpoint of the final bracket.
    """
    flo = fn(lo)
    if flo == 0.0 or abs(flo) <= ftol:
        return lo
    fhi = fn(hi)
    if fhi == 0.0 or abs(fhi) <= ftol:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise ValueError(f"no sign change on [{lo}, {hi}]: f={flo}, {fhi}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = fn(mid)
        if abs(fmid) <= ftol or (hi - lo) <= xtol:
            return mid
        if np.sign(fmid) == np.sign(flo):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)
