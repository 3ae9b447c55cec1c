"""Built-in example systems with their candidate restraint functions.

Each builder returns an ExampleSpec bundling the dynamics, the target
and (where one is known in closed form) the candidate.  Builders accept
keyword parameters so configs can override the defaults; every example
registers batch evaluators because the verification sweeps touch
hundreds of thousands of grid points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .certificates import CandidateMrf, SmoothPiece
from .systems import ConfigError, ControlSystem, TargetSet

__all__ = ["ExampleSpec", "EXAMPLES", "get_example"]


@dataclass
class ExampleSpec:
    name: str
    params: dict
    system: ControlSystem
    target: TargetSet
    mrf: Optional[CandidateMrf] = None
    facts: dict = field(default_factory=dict)


# ----------------------------------------------------------------------
# 1-d minimum time: x' = a, cost 1, target the origin


def minimum_time_1d(p0_bar: float = 0.9) -> ExampleSpec:
    """Double integrator-free toy: unit speed on the line, cost = time."""

    system = ControlSystem(
        name="minimum_time_1d",
        state_dim=1,
        dynamics=lambda x, a: np.array([a[0]]),
        lagrangian=lambda x, a: 1.0,
        control_set=(np.array([-1.0]), np.array([1.0])),
        batch_dynamics=lambda X, a: np.full((len(X), 1), a[0]),
        batch_lagrangian=lambda X, a: np.ones(len(X)),
    )
    target = TargetSet(
        name="origin",
        distance=lambda x: abs(float(x[0])),
        distance_gradients=lambda x: [np.array([np.sign(x[0])])] if x[0] != 0 else [],
        batch_distance=lambda X: np.abs(X[:, 0]),
    )
    pieces = (
        SmoothPiece(
            name="right",
            value=lambda x: float(x[0]),
            gradient=lambda x: np.array([1.0]),
            region=lambda x: x[0] > 0,
            batch_value=lambda X: X[:, 0],
            batch_gradient=lambda X: np.ones((len(X), 1)),
            batch_region=lambda X: X[:, 0] > 0,
        ),
        SmoothPiece(
            name="left",
            value=lambda x: -float(x[0]),
            gradient=lambda x: np.array([-1.0]),
            region=lambda x: x[0] < 0,
            batch_value=lambda X: -X[:, 0],
            batch_gradient=lambda X: -np.ones((len(X), 1)),
            batch_region=lambda X: X[:, 0] < 0,
        ),
    )
    mrf = CandidateMrf(
        name="abs_x",
        value=lambda x: abs(float(x[0])),
        p0_bar=p0_bar,
        smooth_pieces=pieces,
        batch_value=lambda X: np.abs(X[:, 0]),
    )
    return ExampleSpec(
        name="minimum_time_1d",
        params={"p0_bar": p0_bar},
        system=system,
        target=target,
        mrf=mrf,
        facts={"analytic_value": lambda x: abs(float(x[0]))},
    )


# ----------------------------------------------------------------------
# 1-d power law: x' = a*m1*|x|^r, cost m2*|x|^s


def power_law(
    r: float = 0.0,
    s: float = 0.0,
    m1: float = 1.0,
    m2: float = 1.0,
    p0_bar: float = 0.5,
) -> ExampleSpec:
    """Power-law speeds and costs on the line.

    The candidate is the antiderivative of (m2/m1)*|x|^(s-r), which is a
    genuine restraint function exactly when e = s - r + 1 > 0.  For
    e <= 0 the antiderivative is log-shaped or negative, and positive
    definiteness fails; the builder still constructs it faithfully so
    that verification can reject it.
    """
    if m1 <= 0:
        raise ConfigError("m1 must be positive")
    if m2 <= 0:
        raise ConfigError("m2 must be positive")
    e = s - r + 1.0

    def f_point(x, a):
        with np.errstate(divide="ignore"):
            return np.array([a[0] * m1 * abs(x[0]) ** r])

    def f_batch(X, a):
        with np.errstate(divide="ignore"):
            return (a[0] * m1 * np.abs(X[:, 0]) ** r)[:, None]

    def l_point(x, a):
        with np.errstate(divide="ignore"):
            return m2 * abs(x[0]) ** s

    def l_batch(X, a):
        with np.errstate(divide="ignore"):
            return m2 * np.abs(X[:, 0]) ** s

    system = ControlSystem(
        name="power_law",
        state_dim=1,
        dynamics=f_point,
        lagrangian=l_point,
        control_set=(np.array([-1.0]), np.array([1.0])),
        batch_dynamics=f_batch,
        batch_lagrangian=l_batch,
    )
    target = TargetSet(
        name="origin",
        distance=lambda x: abs(float(x[0])),
        distance_gradients=lambda x: [np.array([np.sign(x[0])])] if x[0] != 0 else [],
        batch_distance=lambda X: np.abs(X[:, 0]),
    )

    # antiderivative of (m2/m1)*rho^(s-r) with value 0 pinned at the target
    if e != 0.0:
        coef = m2 / (m1 * e)

        def u_of_rho(rho):
            with np.errstate(divide="ignore"):
                return np.where(rho > 0, coef * rho**e, 0.0)

    else:
        coef = m2 / m1

        def u_of_rho(rho):
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(rho > 0, coef * np.log(np.maximum(rho, 1e-300)), 0.0)

    def grad_mag(rho):
        # |U'| = (m2/m1) * rho^(s-r) on either side of the origin
        with np.errstate(divide="ignore"):
            return (m2 / m1) * rho ** (s - r)

    pieces = (
        SmoothPiece(
            name="right",
            value=lambda x: float(u_of_rho(np.abs(x[0]))),
            gradient=lambda x: np.array([grad_mag(abs(x[0]))]),
            region=lambda x: x[0] > 0,
            batch_value=lambda X: u_of_rho(np.abs(X[:, 0])),
            batch_gradient=lambda X: grad_mag(np.abs(X[:, 0]))[:, None],
            batch_region=lambda X: X[:, 0] > 0,
        ),
        SmoothPiece(
            name="left",
            value=lambda x: float(u_of_rho(np.abs(x[0]))),
            gradient=lambda x: np.array([-grad_mag(abs(x[0]))]),
            region=lambda x: x[0] < 0,
            batch_value=lambda X: u_of_rho(np.abs(X[:, 0])),
            batch_gradient=lambda X: -grad_mag(np.abs(X[:, 0]))[:, None],
            batch_region=lambda X: X[:, 0] < 0,
        ),
    )
    mrf = CandidateMrf(
        name=f"power_antiderivative_e={e:g}",
        value=lambda x: float(u_of_rho(np.abs(x[0]))),
        p0_bar=p0_bar,
        smooth_pieces=pieces,
        batch_value=lambda X: u_of_rho(np.abs(X[:, 0])),
    )

    facts: dict = {"exponent": e}
    if r == 0.0 and s > -1.0:
        # with unit speed the optimal cost from x is integrable in closed form
        facts["analytic_value"] = lambda x: m2 * abs(float(x[0])) ** (s + 1.0) / (m1 * (s + 1.0))
    return ExampleSpec(
        name="power_law",
        params={"r": r, "s": s, "m1": m1, "m2": m2, "p0_bar": p0_bar},
        system=system,
        target=target,
        mrf=mrf,
        facts=facts,
    )


# ----------------------------------------------------------------------
# planar spiral between two circles


def spiral(epsilon: float = 0.5, k_const: float = 1.0, p0_bar: float = 1.0) -> ExampleSpec:
    """Rotation-dominated planar system between circles of radius 1 and 4.

    The drift spins around the origin with angular speed growing
    unboundedly near the inner circle; the control only moves the radius
    in or out.  The target is the union of the inner disc and the outer
    region, the running cost vanishes on the ring 3 <= |z| <= 4, and the
    candidate is a cubic-in-radius profile glued from three pieces with
    a ridge at |z| = 2.
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if not 0.0 <= k_const <= 1.0:
        raise ConfigError("k_const must lie in [0, 1]")

    def f_point(z, a):
        rho = float(np.hypot(z[0], z[1]))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.array(
                [z[1] / (rho - 1.0) - a[0] * z[0], -z[0] / (rho - 1.0) - a[0] * z[1]]
            )

    def f_batch(Z, a):
        rho = np.hypot(Z[:, 0], Z[:, 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            rot = np.stack([Z[:, 1], -Z[:, 0]], axis=1) / (rho - 1.0)[:, None]
        return rot - a[0] * Z

    def cost_shape(rho):
        return np.select(
            [(rho >= 1.0) & (rho <= 2.0), (rho > 2.0) & (rho <= 3.0)],
            [(rho - 1.0) ** 2, (3.0 - rho) ** 2],
            default=0.0,
        )

    system = ControlSystem(
        name="spiral",
        state_dim=2,
        dynamics=f_point,
        lagrangian=lambda z, a: float(k_const * cost_shape(np.hypot(z[0], z[1]))),
        control_set=(np.array([-1.0]), np.array([1.0])),
        batch_dynamics=f_batch,
        batch_lagrangian=lambda Z, a: k_const * cost_shape(np.hypot(Z[:, 0], Z[:, 1])),
    )

    def d_point(z):
        rho = float(np.hypot(z[0], z[1]))
        return max(0.0, min(rho - 1.0, 4.0 - rho))

    def d_batch(Z):
        rho = np.hypot(Z[:, 0], Z[:, 1])
        return np.maximum(0.0, np.minimum(rho - 1.0, 4.0 - rho))

    def d_grads(z):
        rho = float(np.hypot(z[0], z[1]))
        if rho <= 1.0 or rho >= 4.0:
            return []
        zz = np.asarray(z, dtype=float)
        if abs(rho - 2.5) <= 1e-12:
            return [zz / rho, -zz / rho]
        return [zz / rho] if rho < 2.5 else [-zz / rho]

    target = TargetSet(
        name="disc_and_outside",
        distance=d_point,
        distance_gradients=d_grads,
        batch_distance=d_batch,
    )

    eps = float(epsilon)

    def u_inner(rho):
        return 2.0 * eps + (rho - 1.0) ** 3 / 3.0

    def u_middle(rho):
        return eps * (4.0 - rho) + (3.0 - rho) ** 3 / 3.0

    def u_outer(rho):
        return eps * (4.0 - rho)

    def u_batch(Z):
        rho = np.hypot(Z[:, 0], Z[:, 1])
        return np.select(
            [rho < 2.0, rho < 3.0], [u_inner(rho), u_middle(rho)], default=u_outer(rho)
        )

    def _radial(Z, scale):
        # scale(rho) * z / rho, vectorized
        rho = np.hypot(Z[:, 0], Z[:, 1])
        return (scale(rho) / rho)[:, None] * Z

    gtol = 1e-12
    pieces = (
        SmoothPiece(
            name="inner",
            value=lambda z: float(u_inner(np.hypot(z[0], z[1]))),
            gradient=lambda z: (lambda rho: (rho - 1.0) ** 2 / rho * np.asarray(z, dtype=float))(
                float(np.hypot(z[0], z[1]))
            ),
            region=lambda z: 1.0 - gtol <= np.hypot(z[0], z[1]) <= 2.0 + gtol,
            batch_value=lambda Z: u_inner(np.hypot(Z[:, 0], Z[:, 1])),
            batch_gradient=lambda Z: _radial(Z, lambda rho: (rho - 1.0) ** 2),
            batch_region=lambda Z: (np.hypot(Z[:, 0], Z[:, 1]) >= 1.0 - gtol)
            & (np.hypot(Z[:, 0], Z[:, 1]) <= 2.0 + gtol),
        ),
        SmoothPiece(
            name="middle",
            value=lambda z: float(u_middle(np.hypot(z[0], z[1]))),
            gradient=lambda z: (
                lambda rho: (-eps - (3.0 - rho) ** 2) / rho * np.asarray(z, dtype=float)
            )(float(np.hypot(z[0], z[1]))),
            region=lambda z: 2.0 - gtol <= np.hypot(z[0], z[1]) <= 3.0 + gtol,
            batch_value=lambda Z: u_middle(np.hypot(Z[:, 0], Z[:, 1])),
            batch_gradient=lambda Z: _radial(Z, lambda rho: -eps - (3.0 - rho) ** 2),
            batch_region=lambda Z: (np.hypot(Z[:, 0], Z[:, 1]) >= 2.0 - gtol)
            & (np.hypot(Z[:, 0], Z[:, 1]) <= 3.0 + gtol),
        ),
        SmoothPiece(
            name="outer",
            value=lambda z: float(u_outer(np.hypot(z[0], z[1]))),
            gradient=lambda z: (lambda rho: -eps / rho * np.asarray(z, dtype=float))(
                float(np.hypot(z[0], z[1]))
            ),
            region=lambda z: 3.0 - gtol <= np.hypot(z[0], z[1]) <= 4.0 + gtol,
            batch_value=lambda Z: u_outer(np.hypot(Z[:, 0], Z[:, 1])),
            batch_gradient=lambda Z: _radial(Z, lambda rho: -eps + 0.0 * rho),
            batch_region=lambda Z: (np.hypot(Z[:, 0], Z[:, 1]) >= 3.0 - gtol)
            & (np.hypot(Z[:, 0], Z[:, 1]) <= 4.0 + gtol),
        ),
    )
    mrf = CandidateMrf(
        name=f"spiral_cubic_eps={eps:g}",
        value=lambda z: float(u_batch(np.asarray(z, dtype=float)[None, :])[0]),
        p0_bar=p0_bar,
        smooth_pieces=pieces,
        batch_value=u_batch,
    )
    return ExampleSpec(
        name="spiral",
        params={"epsilon": eps, "k_const": k_const, "p0_bar": p0_bar},
        system=system,
        target=target,
        mrf=mrf,
        facts={
            "inner_radius": 1.0,
            "outer_radius": 4.0,
            "ridge_radius": 2.0,
            "u_ridge": u_inner(2.0),
            "oracle_pin": _spiral_oracle_pin(k_const),
        },
    )


def _spiral_oracle_pin(k_const: float):
    """Pin builder for grid value tables near the inner circle.

    The drift speed blows up like 1/(rho - 1), so grid dynamic
    programming cannot resolve the layer 1 < rho < 1 + width.  Nodes in
    that layer get pinned at the cost of the cheapest continuation: ride
    a = +1 inward, which costs

        int_1^{1+width} (u - 1)^2 k / u du
            = k * (width^2 / 2 - width + log(1 + width)),

    about k * width^3 / 3 for small widths.  The caller should drop the
    pinned layer from any bound comparison.
    """

    def pin(points: np.ndarray, width: float):
        rho = np.hypot(points[:, 0], points[:, 1])
        mask = (rho > 1.0) & (rho < 1.0 + width)
        value = k_const * (0.5 * width * width - width + math.log1p(width))
        return mask, float(value)

    return pin


# ----------------------------------------------------------------------
# weak directional decrease demo (minimum time on the line)


_MU_PROFILES: dict = {
    "sqrt": lambda r: float(min(np.sqrt(max(r, 0.0)), 1.0)),
    "linear": lambda r: float(min(max(r, 0.0), 1.0)),
    "constant": lambda r: 1.0,
}


def petrov_demo(profile: str = "sqrt", delta: float = 1.0, p0_bar: float = 0.5) -> ExampleSpec:
    """Minimum time on the line with a named decrease-rate profile.

    The 'sqrt' profile has an integrable reciprocal and yields the gauge
    2*sqrt(r); 'constant' is the classical case (gauge r); 'linear' has
    a log-divergent gauge and exists to exercise the failure path.
    """
    if profile not in _MU_PROFILES:
        raise ConfigError(f"unknown mu profile {profile!r}; choose from {sorted(_MU_PROFILES)}")
    mu = _MU_PROFILES[profile]

    base = minimum_time_1d(p0_bar=p0_bar)

    mrf: Optional[CandidateMrf] = None
    phi_closed: Optional[Callable[[float], float]] = None
    if profile == "sqrt":
        phi_closed = lambda r: 2.0 * np.sqrt(r) if r <= 1.0 else 2.0 + (r - 1.0)
    elif profile == "constant":
        phi_closed = lambda r: float(r)
    if phi_closed is not None:
        grad_mag = lambda rho: 1.0 / mu(rho)
        mrf = CandidateMrf(
            name=f"petrov_gauge_{profile}",
            value=lambda x: float(phi_closed(abs(float(x[0])))),
            p0_bar=p0_bar,
            limiting_gradients_fn=lambda x: (
                [np.array([np.sign(x[0]) * grad_mag(abs(float(x[0])))])] if x[0] != 0 else []
            ),
            batch_value=lambda X: np.array([phi_closed(v) for v in np.abs(X[:, 0])]),
        )

    return ExampleSpec(
        name="petrov_demo",
        params={"profile": profile, "delta": delta, "p0_bar": p0_bar},
        system=base.system,
        target=base.target,
        mrf=mrf,
        facts={"mu": mu, "delta": delta, "profile": profile, "phi_closed": phi_closed},
    )


# ----------------------------------------------------------------------

EXAMPLES: dict = {
    "minimum_time_1d": minimum_time_1d,
    "power_law": power_law,
    "spiral": spiral,
    "petrov_demo": petrov_demo,
}


def get_example(name: str, **params) -> ExampleSpec:
    try:
        builder = EXAMPLES[name]
    except KeyError:
        raise ConfigError(f"unknown example {name!r}; choose from {sorted(EXAMPLES)}") from None
    try:
        return builder(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for example {name!r}: {exc}") from None
