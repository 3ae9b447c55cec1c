"""Candidate restraint functions and their sampled certificates.

A candidate is a scalar function U together with its smooth pieces; the
limiting gradient set at a point is the set of gradients of the pieces
active there.  Verification samples a band {delta <= U <= sigma} on a
grid and checks the strict Hamiltonian decrease H(x, p0_bar, p) < 0 for
every limiting gradient, then turns the sampled margins into a decrease
modulus m with a safety factor.  All checks are sampled: the certificate
records the resolution it was computed at and makes no claim beyond it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .pwl import MonotonePL
from .systems import (
    ConfigError,
    ControlSystem,
    NegativeLagrangian,
    SingularDynamics,
    TargetSet,
    hamiltonian,
)

log = logging.getLogger(__name__)

__all__ = [
    "GridSpec",
    "SmoothPiece",
    "CandidateMrf",
    "DecreaseModulus",
    "Violation",
    "PositiveDefinitenessViolation",
    "BandCertificate",
    "verify_mrf_band",
    "build_decrease_modulus",
    "SupersolutionReport",
    "check_supersolution",
    "IntegrabilityError",
    "PetrovReport",
    "check_weak_petrov",
]


# ----------------------------------------------------------------------
# sampling grids


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid over an axis-aligned box with common spacing."""

    lower: np.ndarray
    upper: np.ndarray
    spacing: float

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError("grid bounds must be 1-d arrays of equal length")
        if np.any(hi <= lo):
            raise ConfigError("grid upper bounds must exceed lower bounds")
        if not (self.spacing > 0):
            raise ConfigError("grid spacing must be positive")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def axes(self) -> list[np.ndarray]:
        out = []
        for lo, hi in zip(self.lower, self.upper):
            n = int(np.floor((hi - lo) / self.spacing + 1e-9)) + 1
            out.append(lo + self.spacing * np.arange(n))
        return out

    def points(self) -> np.ndarray:
        axes = self.axes()
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @property
    def n_points(self) -> int:
        return int(np.prod([len(ax) for ax in self.axes()]))


# ----------------------------------------------------------------------
# candidate functions


@dataclass(frozen=True)
class SmoothPiece:
    """One smooth branch of a candidate: value, gradient, active region.

    The region predicate should be generous on closures (adjacent pieces
    both active on their shared boundary); activity is then confirmed by
    agreement of the piece value with the candidate value.
    """

    name: str
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    region: Callable[[np.ndarray], bool]
    batch_value: Optional[Callable[[np.ndarray], np.ndarray]] = None
    batch_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    batch_region: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def batchable(self) -> bool:
        return (
            self.batch_value is not None
            and self.batch_gradient is not None
            and self.batch_region is not None
        )


@dataclass
class CandidateMrf:
    """Scalar candidate U with limiting gradients from its smooth pieces.

    p0_bar is the cost multiplier the candidate claims to work with.
    band_constants may carry externally known bounds (gradient bound L,
    semiconcavity constant rho, anchor radius R); verification fills in
    sampled estimates for missing entries.
    """

    name: str
    value: Callable[[np.ndarray], float]
    p0_bar: float
    smooth_pieces: tuple = ()
    limiting_gradients_fn: Optional[Callable[[np.ndarray], list]] = None
    batch_value: Optional[Callable[[np.ndarray], np.ndarray]] = None
    act_tol: float = 1e-9
    band_constants: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.p0_bar <= 1.0:
            raise ConfigError(f"p0_bar must lie in [0, 1], got {self.p0_bar}")
        if not self.smooth_pieces and self.limiting_gradients_fn is None:
            raise ConfigError("candidate needs smooth pieces or a gradient callable")

    def u(self, x: np.ndarray) -> float:
        return float(self.value(np.asarray(x, dtype=float)))

    def u_batch(self, X: np.ndarray) -> np.ndarray:
        if self.batch_value is not None:
            return np.asarray(self.batch_value(X), dtype=float)
        return np.array([self.u(x) for x in X], dtype=float)

    def active_pieces(self, x: np.ndarray) -> list:
        x = np.asarray(x, dtype=float)
        u0 = self.u(x)
        out = []
        for piece in self.smooth_pieces:
            if piece.region(x) and abs(float(piece.value(x)) - u0) <= self.act_tol:
                out.append(piece)
        return out

    def limiting_gradients(self, x: np.ndarray) -> list:
        """Gradients of all pieces active at x (singleton on smooth points)."""
        x = np.asarray(x, dtype=float)
        if self.limiting_gradients_fn is not None:
            return [np.asarray(p, dtype=float) for p in self.limiting_gradients_fn(x)]
        grads = [np.asarray(p.gradient(x), dtype=float) for p in self.active_pieces(x)]
        if not grads:
            raise ConfigError(
                f"no smooth piece active at x={x.tolist()} (U={self.u(x)}); "
                "check piece regions and act_tol"
            )
        return grads

    @property
    def batchable(self) -> bool:
        return bool(self.smooth_pieces) and all(p.batchable for p in self.smooth_pieces)


# ----------------------------------------------------------------------
# decrease modulus


@dataclass(frozen=True)
class DecreaseModulus:
    """Continuous strictly increasing m with m(0) = 0 and m <= sampled margins.

    Wraps a piecewise-linear table; evaluation clamps at zero so that a
    slightly negative query (numerical noise near the target) cannot
    make the reparameterization denominator lose its positivity.
    """

    pl: MonotonePL
    eta: float
    samples: tuple
    slope_floor: float

    def __call__(self, u):
        val = self.pl(u)
        if np.isscalar(val):
            return max(val, 0.0)
        return np.maximum(val, 0.0)

    @property
    def top_level(self) -> float:
        return float(self.pl.xs[-1])


def build_decrease_modulus(m_hat_samples: Sequence, eta: float = 0.1) -> DecreaseModulus:
    """Turn sampled band margins into a strictly increasing modulus.

    m_hat_samples is a sequence of (level, margin) pairs with positive,
    non-decreasing margins.  The construction lags the margins by one
    sample and scales them by a strictly increasing factor that reaches
    1 at the top sample:

        w_i = (1 - eta) * m_hat_{i-1} * (1 + (i+1)/n) / 2      (0-based)

    with w_0 built from m_hat_0.  Lagging keeps m below (1 - eta) times
    the step-constant margin everywhere between samples, not just at
    them, and the scale keeps the knot values strictly increasing even
    where the sampled margins are flat.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    pairs = sorted((float(a), float(b)) for a, b in m_hat_samples)
    if not pairs:
        raise ValueError("need at least one margin sample")
    levels = np.array([p[0] for p in pairs])
    margins = np.array([p[1] for p in pairs])
    if np.any(levels <= 0):
        raise ValueError("margin sample levels must be positive")
    if np.any(np.diff(levels) <= 0):
        raise ValueError("margin sample levels must be distinct")
    if np.any(margins <= 0):
        raise ValueError("cannot build a modulus from non-positive margins")
    if np.any(np.diff(margins) < -1e-12 * np.maximum(margins[:-1], 1.0)):
        raise ValueError("margin samples must be non-decreasing in the level")

    n = len(pairs)
    lagged = np.concatenate(([margins[0]], margins[:-1]))
    scale = (1.0 + np.arange(1, n + 1) / n) / 2.0
    w = (1.0 - eta) * lagged * scale

    xs = np.concatenate(([0.0], levels))
    ys = np.concatenate(([0.0], w))
    pl = MonotonePL(xs, ys, extrapolate="linear")
    if not pl.is_strictly_increasing:
        raise ValueError("modulus construction produced a flat segment")
    return DecreaseModulus(pl=pl, eta=eta, samples=tuple(pairs), slope_floor=pl.min_slope)


# ----------------------------------------------------------------------
# verification records


def _pt(x) -> tuple:
    return tuple(float(v) for v in np.atleast_1d(x))


@dataclass(frozen=True)
class Violation:
    kind: str
    x: tuple
    value: float
    p: Optional[tuple] = None
    detail: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", _pt(self.x))
        object.__setattr__(self, "value", float(self.value))
        if self.p is not None:
            object.__setattr__(self, "p", _pt(self.p))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "x": list(self.x), "value": self.value}
        if self.p is not None:
            out["p"] = list(self.p)
        if self.detail:
            out["detail"] = self.detail
        return out


class PositiveDefinitenessViolation(ValueError):
    """The candidate fails positivity off the target or does not vanish on it."""

    def __init__(self, violations: list, total: int):
        self.violations = violations
        self.total = total
        first = violations[0]
        super().__init__(
            f"{total} positive-definiteness violations, worst at x={list(first.x)} "
            f"({first.kind}: {first.value})"
        )


@dataclass
class BandCertificate:
    """Outcome of a sampled band verification."""

    certified: bool
    delta: float
    sigma: float
    margin: float
    worst_h: float
    m_hat_samples: list
    violations: list
    n_band: int
    n_grid: int
    grid: dict
    control_set: list
    constants: dict
    posdef: dict
    notes: list

    def to_dict(self) -> dict:
        return {
            "certified": self.certified,
            "delta": self.delta,
            "sigma": self.sigma,
            "margin": self.margin,
            "worst_h": self.worst_h,
            "m_hat_samples": [[a, b] for a, b in self.m_hat_samples],
            "violations": [v.to_dict() for v in self.violations],
            "n_band": self.n_band,
            "n_grid": self.n_grid,
            "grid": self.grid,
            "control_set": self.control_set,
            "constants": self.constants,
            "posdef": self.posdef,
            "notes": list(self.notes),
        }


# ----------------------------------------------------------------------
# batch helpers


def _batch_dist(target: TargetSet, X: np.ndarray) -> np.ndarray:
    if target.batch_distance is not None:
        return np.asarray(target.batch_distance(X), dtype=float)
    return np.array([target.d(x) for x in X], dtype=float)


def _batch_h_for_gradients(
    system: ControlSystem, X: np.ndarray, P: np.ndarray, p0: float
) -> np.ndarray:
    """Minimized Hamiltonian at each (x, p) row pair, vectorized over controls."""
    H = np.full(len(X), np.inf)
    for a in system.control_set:
        if system.batch_dynamics is not None and system.batch_lagrangian is not None:
            F = np.asarray(system.batch_dynamics(X, a), dtype=float)
            L = np.asarray(system.batch_lagrangian(X, a), dtype=float)
        else:
            F = np.array([system.dynamics(x, a) for x in X], dtype=float)
            L = np.array([system.lagrangian(x, a) for x in X], dtype=float)
        if np.any(~np.isfinite(F)) or np.any(~np.isfinite(L)):
            bad = np.where(~np.isfinite(F).all(axis=1) | ~np.isfinite(L))[0][0]
            raise SingularDynamics(X[bad], "batch dynamics evaluation")
        if np.any(L < 0):
            bad = int(np.argmin(L))
            raise NegativeLagrangian(X[bad], -1, float(L[bad]))
        np.minimum(H, p0 * L + np.einsum("ij,ij->i", P, F), out=H)
    return H


def _band_hamiltonians(
    system: ControlSystem, mrf: CandidateMrf, Xb: np.ndarray, Ub: np.ndarray
) -> tuple[np.ndarray, float]:
    """Worst (largest) H over limiting gradients at every band point.

    Returns the per-point worst H and the largest sampled gradient norm.
    """
    n = len(Xb)
    worst = np.full(n, -np.inf)
    max_p = 0.0
    if mrf.batchable:
        for piece in mrf.smooth_pieces:
            act = np.asarray(piece.batch_region(Xb), dtype=bool)
            if not np.any(act):
                continue
            pv = np.asarray(piece.batch_value(Xb[act]), dtype=float)
            agree = np.abs(pv - Ub[act]) <= mrf.act_tol
            idx = np.where(act)[0][agree]
            if idx.size == 0:
                continue
            P = np.asarray(piece.batch_gradient(Xb[idx]), dtype=float)
            max_p = max(max_p, float(np.max(np.linalg.norm(P, axis=1))))
            Hp = _batch_h_for_gradients(system, Xb[idx], P, mrf.p0_bar)
            np.maximum.at(worst, idx, Hp)
    else:
        for i, x in enumerate(Xb):
            for p in mrf.limiting_gradients(x):
                max_p = max(max_p, float(np.linalg.norm(p)))
                worst[i] = max(worst[i], hamiltonian(system, x, mrf.p0_bar, p))
    uncovered = ~np.isfinite(worst)
    if np.any(uncovered):
        bad = Xb[np.where(uncovered)[0][0]]
        raise ConfigError(
            f"no active smooth piece at band point x={bad.tolist()}; "
            "check piece regions and act_tol"
        )
    return worst, max_p


def _estimate_semiconcavity(
    mrf: CandidateMrf, Xb: np.ndarray, spacing: float, max_probes: int = 256
) -> float:
    """Sampled upper-quadratic constant: positive part of second differences."""
    stride = max(1, len(Xb) // max_probes)
    h = 0.5 * spacing
    worst = 0.0
    for x in Xb[::stride]:
        pieces = mrf.active_pieces(x) if mrf.smooth_pieces else []
        if len(pieces) != 1:
            continue
        p = np.asarray(pieces[0].gradient(x), dtype=float)
        u0 = mrf.u(x)
        for ax in range(len(x)):
            step = np.zeros_like(x)
            step[ax] = h
            q = (mrf.u(x + step) - u0 - float(np.dot(p, step))) / h**2
            if np.isfinite(q):
                worst = max(worst, q)
    return worst


# ----------------------------------------------------------------------
# band verification


def verify_mrf_band(
    system: ControlSystem,
    target: TargetSet,
    mrf: CandidateMrf,
    delta: float,
    sigma: float,
    grid: GridSpec,
    *,
    margin: float = 0.0,
    d_tol: float = 1e-3,
    u_tol: float = 0.05,
    n_levels: int = 9,
    d_floor: float = 1e-12,
    check_properness: bool = True,
    estimate_constants: bool = True,
    max_violation_records: int = 32,
) -> BandCertificate:
    """Sample the band {delta <= U <= sigma} and certify strict H-decrease.

    Checks, in order: positive definiteness of U off the target and
    smallness of U on a collar around it (raises
    PositiveDefinitenessViolation on failure, since nothing downstream
    is meaningful then); an escape-to-boundary proxy for properness;
    H(x, p0_bar, p) < -margin for every limiting gradient at every band
    sample.  The sampled margins are aggregated into the level table
    m_hat(level) = -max{H : U >= level}, non-decreasing by construction.

    Band membership requires d(x) > d_floor: a grid point landing within
    rounding error of the target boundary is a target point as far as
    floats can tell, and the sign of H there is noise.
    """
    if not 0 < delta < sigma:
        raise ConfigError(f"need 0 < delta < sigma, got delta={delta}, sigma={sigma}")
    if grid.dim != system.state_dim:
        raise ConfigError("grid dimension does not match the system")
    if n_levels < 1:
        raise ConfigError("n_levels must be at least 1")

    notes: list[str] = []
    X = grid.points()
    U = mrf.u_batch(X)
    D = _batch_dist(target, X)
    if np.any(~np.isfinite(U)):
        bad = X[np.where(~np.isfinite(U))[0][0]]
        raise SingularDynamics(bad, "candidate value non-finite")

    # --- positive definiteness -------------------------------------------
    off = D > d_tol
    bad = off & (U <= 0.0)
    if np.any(bad):
        idx = np.where(bad)[0]
        order = idx[np.argsort(U[idx])]
        records = [
            Violation("positive_definiteness", tuple(X[i]), float(U[i]), detail=f"d={D[i]}")
            for i in order[:max_violation_records]
        ]
        raise PositiveDefinitenessViolation(records, int(bad.sum()))

    collar = D <= d_tol + 2.0 * grid.spacing
    posdef: dict = {"d_tol": d_tol, "u_tol": u_tol, "min_u_off_target": float(np.min(U[off])) if np.any(off) else None}
    if np.any(collar):
        touch = float(np.min(np.maximum(U[collar], 0.0)))
        posdef["collar_touch"] = touch
        posdef["n_collar"] = int(collar.sum())
        if touch > u_tol:
            i = int(np.where(collar)[0][np.argmin(np.maximum(U[collar], 0.0))])
            rec = Violation(
                "zero_level_gap",
                tuple(X[i]),
                touch,
                detail=f"U does not come within {u_tol} of 0 near the target",
            )
            raise PositiveDefinitenessViolation([rec], 1)
    else:
        posdef["collar_touch"] = None
        notes.append("no grid samples in the target collar; zero-level check skipped")

    violations: list[Violation] = []

    # --- properness proxy -------------------------------------------------
    if check_properness:
        half = 0.5 * grid.spacing
        face = np.zeros(len(X), dtype=bool)
        for ax in range(grid.dim):
            face |= X[:, ax] <= grid.lower[ax] + half
            face |= X[:, ax] >= grid.upper[ax] - half
        escaped = face & (D > d_tol) & (U > 0.0) & (U <= sigma)
        if np.any(escaped):
            idx = np.where(escaped)[0]
            order = idx[np.argsort(U[idx])]
            for i in order[:max_violation_records]:
                violations.append(
                    Violation(
                        "properness",
                        tuple(X[i]),
                        float(U[i]),
                        detail="sub-level set reaches the sampling box boundary",
                    )
                )

    # --- Hamiltonian decrease on the band ----------------------------------
    band = (U >= delta) & (U <= sigma) & (D > d_floor)
    n_band = int(band.sum())
    if n_band == 0:
        raise ConfigError(
            f"no grid samples in the band [{delta}, {sigma}]; refine the grid or widen the band"
        )
    Xb, Ub = X[band], U[band]
    H, max_p = _band_hamiltonians(system, mrf, Xb, Ub)

    worst_h = float(np.max(H))
    hot = H >= -margin
    if np.any(hot):
        idx = np.where(hot)[0]
        order = idx[np.argsort(-H[idx])]
        for i in order[:max_violation_records]:
            x = Xb[i]
            # recompute pointwise so the record carries the offending gradient
            rec_p, rec_h = None, -np.inf
            for p in mrf.limiting_gradients(x):
                hval = hamiltonian(system, x, mrf.p0_bar, p)
                if hval > rec_h:
                    rec_h, rec_p = hval, tuple(float(v) for v in p)
            violations.append(Violation("hamiltonian", tuple(x), float(H[i]), p=rec_p))
        if len(idx) > max_violation_records:
            notes.append(f"{int(hot.sum())} hamiltonian violations, first {max_violation_records} recorded")

    # --- margin table -------------------------------------------------------
    order = np.argsort(Ub, kind="stable")
    U_sorted = Ub[order]
    H_sorted = H[order]
    suffix_max = np.maximum.accumulate(H_sorted[::-1])[::-1]
    levels = np.linspace(delta, sigma, n_levels)
    m_hat_samples: list[tuple[float, float]] = []
    for lev in levels:
        j = int(np.searchsorted(U_sorted, lev, side="left"))
        if j >= len(U_sorted):
            notes.append(f"no band samples at or above level {lev}; level skipped")
            continue
        m_hat_samples.append((float(lev), float(-suffix_max[j])))

    # --- constants ------------------------------------------------------------
    constants = dict(mrf.band_constants)
    if estimate_constants:
        constants.setdefault("L", 1.5 * max_p if max_p > 0 else 1.0)
        if mrf.smooth_pieces:
            rho_hat = _estimate_semiconcavity(mrf, Xb, grid.spacing)
            constants.setdefault("rho", 1.5 * rho_hat if rho_hat > 0 else 0.0)

    certified = (
        not violations
        and bool(m_hat_samples)
        and all(m > margin for _, m in m_hat_samples)
    )
    cert = BandCertificate(
        certified=certified,
        delta=delta,
        sigma=sigma,
        margin=margin,
        worst_h=worst_h,
        m_hat_samples=m_hat_samples,
        violations=violations,
        n_band=n_band,
        n_grid=len(X),
        grid={
            "lower": grid.lower.tolist(),
            "upper": grid.upper.tolist(),
            "spacing": grid.spacing,
            "n_points": len(X),
        },
        control_set=[list(map(float, a)) for a in system.control_set],
        constants=constants,
        posdef=posdef,
        notes=notes,
    )
    log.info(
        "band verification of %s on [%g, %g]: %s (worst H %.3g over %d samples)",
        mrf.name,
        delta,
        sigma,
        "certified" if certified else "NOT certified",
        worst_h,
        n_band,
    )
    return cert


# ----------------------------------------------------------------------
# supersolution check


@dataclass
class SupersolutionReport:
    passed: bool
    n_points: int
    n_checked: int
    n_skipped: int
    worst_margin: float
    failures: list

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "n_points": self.n_points,
            "n_checked": self.n_checked,
            "n_skipped": self.n_skipped,
            "worst_margin": self.worst_margin,
            "failures": [v.to_dict() for v in self.failures],
        }


def check_supersolution(
    system: ControlSystem,
    mrf: CandidateMrf,
    modulus: DecreaseModulus,
    points: np.ndarray,
    *,
    band: Optional[tuple] = None,
    target: Optional[TargetSet] = None,
    d_floor: float = 1e-12,
    tol: float = 0.0,
    max_records: int = 32,
) -> SupersolutionReport:
    """Check H(x, p0_bar, grad U(x)) <= -m(U(x)) at differentiability points.

    Points where several pieces are active (or none) are skipped and
    counted; the inequality there is the band certificate's job.  When a
    target is supplied, points within d_floor of it are dropped (the
    dynamics may be singular on the target boundary).
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    U = mrf.u_batch(X)
    keep = np.isfinite(U)
    if band is not None:
        lo, hi = band
        keep &= (U >= lo) & (U <= hi)
    if target is not None:
        keep &= _batch_dist(target, X) > d_floor
    X, U = X[keep], U[keep]

    n_checked = 0
    n_skipped = 0
    worst = -np.inf
    failures: list[Violation] = []

    if mrf.batchable:
        acts = np.zeros(len(X), dtype=int)
        piece_masks = []
        for piece in mrf.smooth_pieces:
            act = np.asarray(piece.batch_region(X), dtype=bool).copy()
            sel = np.where(act)[0]
            if sel.size:
                pv = np.asarray(piece.batch_value(X[sel]), dtype=float)
                act[sel[np.abs(pv - U[sel]) > mrf.act_tol]] = False
            piece_masks.append(act)
            acts += act.astype(int)
        unique = acts == 1
        n_skipped = int(np.sum(~unique))
        for piece, act in zip(mrf.smooth_pieces, piece_masks):
            sel = act & unique
            if not np.any(sel):
                continue
            P = np.asarray(piece.batch_gradient(X[sel]), dtype=float)
            H = _batch_h_for_gradients(system, X[sel], P, mrf.p0_bar)
            marg = H + modulus(U[sel])
            n_checked += int(sel.sum())
            if marg.size:
                worst = max(worst, float(np.max(marg)))
                for i in np.where(marg > tol)[0][:max_records]:
                    xi = X[sel][i]
                    failures.append(
                        Violation("supersolution", tuple(xi), float(marg[i]), p=tuple(P[i]))
                    )
    else:
        for x, u0 in zip(X, U):
            pieces = mrf.active_pieces(x)
            if len(pieces) != 1:
                n_skipped += 1
                continue
            p = np.asarray(pieces[0].gradient(x), dtype=float)
            marg = hamiltonian(system, x, mrf.p0_bar, p) + modulus(u0)
            n_checked += 1
            worst = max(worst, float(marg))
            if marg > tol and len(failures) < max_records:
                failures.append(Violation("supersolution", tuple(x), float(marg), p=tuple(p)))

    return SupersolutionReport(
        passed=not failures,
        n_points=len(X),
        n_checked=n_checked,
        n_skipped=n_skipped,
        worst_margin=worst if np.isfinite(worst) else float("nan"),
        failures=failures,
    )


# ----------------------------------------------------------------------
# weak Petrov condition


class IntegrabilityError(ValueError):
    """1/mu is not integrable at 0, so no finite gauge can be built."""

    def __init__(self, increments: list, ratios: list):
        self.increments = increments
        self.ratios = ratios
        super().__init__(
            "decade integrals of 1/mu do not decay (ratio median "
            f"{np.median(ratios):.4f}); the gauge integral diverges at 0"
        )


@dataclass
class PetrovReport:
    ok: bool
    n_checked: int
    worst_eq_slack: float
    worst_h_margin: float
    phi: MonotonePL
    tail: float
    increments: list
    ratios: list
    mrf: CandidateMrf
    failures: list

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "n_checked": self.n_checked,
            "worst_eq_slack": self.worst_eq_slack,
            "worst_h_margin": self.worst_h_margin,
            "phi_knots": [self.phi.xs.tolist(), self.phi.ys.tolist()],
            "tail": self.tail,
            "increments": self.increments,
            "ratios": self.ratios,
            "failures": [v.to_dict() for v in self.failures],
        }


def check_weak_petrov(
    system: ControlSystem,
    target: TargetSet,
    mu: Callable[[float], float],
    delta: float,
    points: np.ndarray,
    *,
    p0_bar: float = 0.5,
    n_decades: int = 12,
    d_floor: float = 1e-9,
    tol: float = 1e-9,
    max_records: int = 32,
) -> PetrovReport:
    """Check the directional decrease of d and build the induced candidate.

    For minimum-time problems (l identically 1) with a rate mu whose
    reciprocal is integrable at 0: checks min_a <p, f(x,a)> <= -mu(d(x))
    for the limiting gradients p of the distance at sample points with
    0 < d < delta, builds the gauge phi(r) as the integral of 1/mu by
    decade-wise quadrature, and returns the composed candidate phi(d(.))
    whose Hamiltonian margin is -(1 - p0_bar) for any p0_bar < 1.

    Raises IntegrabilityError when the decade integrals of 1/mu fail to
    decay geometrically (the gauge would diverge).
    """
    if delta <= 0:
        raise ConfigError("delta must be positive")
    if not 0.0 <= p0_bar < 1.0:
        raise ConfigError("the induced candidate needs p0_bar in [0, 1)")
    if target.distance_gradients is None:
        raise ConfigError("target must provide distance gradients")

    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]

    # the construction is for minimum-time problems: l must be identically 1
    probe_idx = [0, len(X) // 2, len(X) - 1] if len(X) else []
    for i in probe_idx:
        for a in system.control_set:
            lv = float(system.lagrangian(X[i], a))
            if abs(lv - 1.0) > 1e-9:
                raise ConfigError(f"running cost must be identically 1, got {lv} at x={X[i].tolist()}")

    # mu must be positive away from 0 and (weakly) increasing
    rs = delta * 10.0 ** (-np.arange(0, 9, dtype=float))
    mu_vals = np.array([float(mu(r)) for r in rs])
    if np.any(mu_vals <= 0):
        raise ConfigError("mu must be positive on (0, delta]")
    if np.any(np.diff(mu_vals) > 1e-12 * np.maximum(mu_vals[:-1], 1.0)):
        raise ConfigError("mu must be non-decreasing on (0, delta]")
    if float(mu(0.0)) < 0:
        raise ConfigError("mu(0) must be non-negative")

    # decade-wise integrals of 1/mu; geometric decay <=> integrable at 0
    increments = []
    for k in range(n_decades):
        a, b = delta * 10.0 ** (-(k + 1)), delta * 10.0 ** (-k)
        val, _ = integrate.quad(lambda r: 1.0 / float(mu(r)), a, b, limit=200)
        if not np.isfinite(val) or val < 0:
            raise IntegrabilityError(increments + [val], [1.0])
        increments.append(val)
    ratios = [increments[k + 1] / increments[k] for k in range(n_decades - 5, n_decades - 1)]
    rbar = float(np.median(ratios))
    if rbar >= 0.98:
        raise IntegrabilityError(increments, ratios)
    tail = increments[-1] * rbar / (1.0 - rbar)

    # gauge knots: decade levels, refined inside the top decade
    knots_x = [0.0, delta * 10.0 ** (-n_decades)]
    knots_y = [0.0, tail]
    acc = tail
    for k in range(n_decades - 1, 0, -1):
        acc += increments[k]
        knots_x.append(delta * 10.0 ** (-k))
        knots_y.append(acc)
    for r in np.linspace(delta / 10.0, delta, 10)[1:]:
        seg, _ = integrate.quad(lambda t: 1.0 / float(mu(t)), knots_x[-1], r, limit=200)
        acc += seg
        knots_x.append(float(r))
        knots_y.append(acc)
    phi = MonotonePL(np.array(knots_x), np.array(knots_y), extrapolate="linear")

    # directional decrease of the distance at the sample points
    D = _batch_dist(target, X)
    sel = (D > d_floor) & (D < delta)
    n_checked = 0
    worst_slack = -np.inf
    worst_h = -np.inf
    failures: list[Violation] = []

    def induced_grads(x: np.ndarray) -> list:
        r = target.d(x)
        return [np.asarray(q, dtype=float) / float(mu(r)) for q in target.distance_gradients(x)]

    for x in X[sel]:
        r = target.d(x)
        mu_r = float(mu(r))
        for q in target.distance_gradients(x):
            q = np.asarray(q, dtype=float)
            best = min(
                float(np.dot(q, system.dynamics(x, a))) for a in system.control_set
            )
            slack = best + mu_r
            worst_slack = max(worst_slack, slack)
            if slack > tol and len(failures) < max_records:
                failures.append(Violation("petrov_decrease", tuple(x), slack, p=tuple(q)))
            hval = hamiltonian(system, x, p0_bar, q / mu_r)
            h_marg = hval + (1.0 - p0_bar)
            worst_h = max(worst_h, h_marg)
            if h_marg > tol and len(failures) < max_records:
                failures.append(Violation("petrov_hamiltonian", tuple(x), h_marg, p=tuple(q / mu_r)))
        n_checked += 1

    mrf = CandidateMrf(
        name="petrov_gauge",
        value=lambda x: float(phi(target.d(x))),
        p0_bar=p0_bar,
        limiting_gradients_fn=induced_grads,
        batch_value=(
            (lambda Xq: np.asarray(phi(_batch_dist(target, np.asarray(Xq, dtype=float)))))
            if target.batch_distance is not None
            else None
        ),
    )
    return PetrovReport(
        ok=not failures,
        n_checked=n_checked,
        worst_eq_slack=worst_slack if np.isfinite(worst_slack) else float("nan"),
        worst_h_margin=worst_h if np.isfinite(worst_h) else float("nan"),
        phi=phi,
        tail=tail,
        increments=increments,
        ratios=ratios,
        mrf=mrf,
        failures=failures,
    )
