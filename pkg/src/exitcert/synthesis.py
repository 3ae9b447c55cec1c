"""Constructive trajectories from a certified decrease modulus.

The construction works in an internal clock s in which the certified
inequality forces U to fall at unit-order rate: legs chase a geometric
cascade of U-levels with piecewise-constant feedback, each step length
is accepted only after the sampled decrease actually holds, and the
physical clock is recovered afterwards by integrating dt = ds / g with
g = p0_bar * l + m(U).  The distance envelopes and the composed decay
bound live here too, since they are consumed by the same audits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .certificates import CandidateMrf, DecreaseModulus
from .pwl import MonotonePL, bisect_root, lift_strict, lower_strict, pwl_min
from .systems import (
    ConfigError,
    ControlSystem,
    Partition,
    SingularDynamics,
    TargetSet,
    Trajectory,
    TrajectoryStatus,
    eval_dynamics,
    eval_lagrangian,
)

log = logging.getLogger(__name__)

__all__ = [
    "SynthesisConfig",
    "FeedbackGap",
    "StepCollapse",
    "ModulusError",
    "FeedbackChoice",
    "feedback_select",
    "LegStep",
    "LegResult",
    "LegTimes",
    "integrate_leg",
    "reparam_to_time",
    "SynthesisResult",
    "synthesize",
    "build_sigma_envelopes",
    "KLBound",
    "build_kl_bound",
    "KLReport",
    "verify_kl",
]


# ----------------------------------------------------------------------
# errors


class FeedbackGap(RuntimeError):
    """No (gradient, control) pair reaches the certified decrease quotient."""

    def __init__(self, x, best_value: float, best_index: int):
        self.x = np.asarray(x, dtype=float)
        self.best_value = float(best_value)
        self.best_index = int(best_index)
        super().__init__(
            f"best decrease quotient {self.best_value:.6g} > -1 at x={self.x.tolist()} "
            f"(control index {self.best_index}); the certificate does not cover this point"
        )


class StepCollapse(RuntimeError):
    """Step-length halving hit the floor without an acceptable step."""

    def __init__(self, x, delta: float, detail: str = ""):
        self.x = np.asarray(x, dtype=float)
        self.delta = float(delta)
        msg = f"step length collapsed to {delta:.3g} at x={self.x.tolist()}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ModulusError(RuntimeError):
    """The reparameterization denominator g = p0*l + m(U) lost positivity."""

    def __init__(self, x, g: float):
        self.x = np.asarray(x, dtype=float)
        self.g = float(g)
        super().__init__(f"g = {g:.6g} <= 0 at x={self.x.tolist()}")


# ----------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SynthesisConfig:
    """Tunables of the leg integrator; defaults match the test suite."""

    epsilon: float = 0.1          # cost slack: budget (1+epsilon) * U(x) / p0_bar
    nu_ratio: float = 0.5         # geometric level cascade mu_k = nu^k * U(x)
    max_levels: int = 20
    delta_init: float = 0.1       # first trial step length in the s-clock
    substeps: int = 16            # RK4 substeps per step (even, for coarse/fine quadrature)
    d_tol: float = 1e-3           # stop once d(x) falls below this
    level_tol_rel: float = 1e-8   # level crossing tolerance, relative to mu_hat
    delta_min_rel: float = 1e-9   # step collapse floor, relative to delta_init
    mf_safety: float = 2.0        # local speed estimate inflation
    max_steps_per_leg: int = 20000

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if not 0 < self.nu_ratio < 1:
            raise ConfigError("nu_ratio must lie in (0, 1)")
        if self.max_levels < 1:
            raise ConfigError("max_levels must be at least 1")
        if self.delta_init <= 0:
            raise ConfigError("delta_init must be positive")
        if self.substeps < 2 or self.substeps % 2:
            raise ConfigError("substeps must be an even number >= 2")
        if self.d_tol <= 0:
            raise ConfigError("d_tol must be positive")
        if self.mf_safety < 1:
            raise ConfigError("mf_safety must be at least 1")


# ----------------------------------------------------------------------
# feedback selection


@dataclass(frozen=True)
class FeedbackChoice:
    a_index: int
    p: np.ndarray
    quotient: float


def feedback_select(
    system: ControlSystem, mrf: CandidateMrf, modulus: DecreaseModulus, x: np.ndarray
) -> FeedbackChoice:
    """Pick the (gradient, control) pair with the best decrease quotient.

    The quotient is <p, f(x,a)> / (p0*l(x,a) + m(U(x))); the certificate
    makes it <= -1 for some pair.  Scans every pair, minimizes, breaks
    ties toward the lowest control index, and raises FeedbackGap when
    even the best pair misses the threshold.
    """
    x = np.asarray(x, dtype=float)
    m_u = float(modulus(mrf.u(x)))
    best_q = np.inf
    best_k = 0
    best_p: Optional[np.ndarray] = None
    for p in mrf.limiting_gradients(x):
        for k in range(system.n_controls):
            f = eval_dynamics(system, x, k)
            l = eval_lagrangian(system, x, k)
            g = mrf.p0_bar * l + m_u
            if g <= 0:
                raise ModulusError(x, g)
            q = float(np.dot(p, f)) / g
            if q < best_q:
                best_q = q
                best_k = k
                best_p = p
    if best_p is None or best_q > -1.0:
        raise FeedbackGap(x, best_q, best_k)
    return FeedbackChoice(a_index=best_k, p=np.asarray(best_p, dtype=float), quotient=best_q)


# ----------------------------------------------------------------------
# leg integration


def _cutoff(u: float, mu_hat: float, sigma: float) -> float:
    """C1 plateau equal to 1 on [mu_hat/2, sigma], 0 outside [mu_hat/4, sigma+1]."""
    if mu_hat / 2.0 <= u <= sigma:
        return 1.0
    if u <= mu_hat / 4.0 or u >= sigma + 1.0:
        return 0.0
    if u < mu_hat / 2.0:
        t = (u - mu_hat / 4.0) / (mu_hat / 4.0)
    else:
        t = sigma + 1.0 - u
    return t * t * (3.0 - 2.0 * t)


def _make_field(system, mrf, modulus, a_index, mu_hat, sigma):
    p0 = mrf.p0_bar

    def F(z: np.ndarray) -> np.ndarray:
        f = eval_dynamics(system, z, a_index)
        l = eval_lagrangian(system, z, a_index)
        u = mrf.u(z)
        g = p0 * l + float(modulus(u))
        if g <= 0:
            raise ModulusError(z, g)
        return _cutoff(u, mu_hat, sigma) * f / g

    return F


def _rk4_path(F, z0: np.ndarray, length: float, n: int) -> np.ndarray:
    h = length / n
    out = np.empty((n + 1, len(z0)))
    z = np.asarray(z0, dtype=float)
    out[0] = z
    for i in range(n):
        k1 = F(z)
        k2 = F(z + 0.5 * h * k1)
        k3 = F(z + 0.5 * h * k2)
        k4 = F(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = z
    return out


@dataclass
class LegStep:
    """One constant-control step of a leg, sampled at the RK4 substeps."""

    anchor: np.ndarray
    a_index: int
    p: np.ndarray
    quotient: float
    s0: float
    length: float
    states: np.ndarray  # (n_kept+1, dim), states[0] == anchor
    u: np.ndarray
    d: np.ndarray


@dataclass
class LegTimes:
    """Physical-clock data for a leg, aligned with its substep trail."""

    t_sub: np.ndarray
    cost_sub: np.ndarray
    g_sub: np.ndarray
    t_steps: np.ndarray      # duration of each step
    cost_steps: np.ndarray
    m_int_steps: np.ndarray  # integral of m(U) dt over each step
    quad_err: float          # Richardson estimate for the worst step quadrature
    residual_max: float      # worst relative ODE residual of the t-parameterized path


@dataclass
class LegResult:
    """A leg from level mu_bar down to mu_hat (or into the target collar)."""

    x0: np.ndarray
    mu_bar: float
    mu_hat: float
    epsilon: float
    status: TrajectoryStatus
    steps: list
    s_sub: np.ndarray
    states_sub: np.ndarray
    u_sub: np.ndarray
    d_sub: np.ndarray
    a_sub: np.ndarray  # control index of the segment starting at each substep
    times: Optional[LegTimes] = None

    @property
    def s_bar(self) -> float:
        return float(self.s_sub[-1]) if len(self.s_sub) else 0.0

    @property
    def u_end(self) -> float:
        return float(self.u_sub[-1]) if len(self.u_sub) else float("nan")

    @property
    def partition(self) -> Partition:
        pts = [0.0]
        for st in self.steps:
            pts.append(st.s0 + st.length)
        return Partition(np.asarray(pts))


def integrate_leg(
    system: ControlSystem,
    target: TargetSet,
    mrf: CandidateMrf,
    modulus: DecreaseModulus,
    x0: np.ndarray,
    mu_bar: float,
    mu_hat: float,
    config: SynthesisConfig,
    *,
    sigma: Optional[float] = None,
) -> LegResult:
    """Drive U from its value at x0 down to mu_hat with sampled feedback.

    Each step freezes the control chosen at its anchor and integrates
    the normalized field f/g with RK4.  A trial length is accepted only
    if every substep satisfies the per-step decrease
    U(z(s)) - U(anchor) <= -(s - s_anchor)/(epsilon+1); otherwise it is
    halved (StepCollapse below the floor).  Crossing of the exit level
    is located by bisection over the step length on the same integration
    rule; steps whose interior already dips to the endpoint value are
    cut at the first such substep so that node values strictly decrease.
    Stops early with status approached_target once d(x) < d_tol.
    """
    x0 = np.asarray(x0, dtype=float)
    if not 0 < mu_hat < mu_bar:
        raise ConfigError(f"need 0 < mu_hat < mu_bar, got {mu_hat}, {mu_bar}")
    if sigma is None:
        sigma = modulus.top_level
    eps1 = config.epsilon + 1.0
    level_tol = max(config.level_tol_rel * mu_hat, 1e-15)
    delta_min = config.delta_min_rel * config.delta_init
    n_sub = config.substeps

    u0 = mrf.u(x0)
    if u0 > mu_bar * (1.0 + 1e-6) + 1e-12:
        raise ConfigError(f"U(x0) = {u0} exceeds the leg's top level {mu_bar}")

    steps: list[LegStep] = []
    trail_s = [0.0]
    trail_z = [x0.copy()]
    trail_u = [u0]
    trail_d = [target.d(x0)]
    trail_a = [0]
    status: Optional[TrajectoryStatus] = None
    state = x0.copy()
    s_acc = 0.0

    while status is None:
        u_anchor = mrf.u(state)
        d_anchor = target.d(state)
        if d_anchor < config.d_tol:
            status = TrajectoryStatus.APPROACHED_TARGET
            break
        if u_anchor <= mu_hat + level_tol:
            status = TrajectoryStatus.REACHED_LEVEL
            break
        if len(steps) >= config.max_steps_per_leg:
            raise StepCollapse(state, 0.0, f"exceeded {config.max_steps_per_leg} steps per leg")

        choice = feedback_select(system, mrf, modulus, state)
        F = _make_field(system, mrf, modulus, choice.a_index, mu_hat, sigma)

        # movement budget: |U drop| <= L * R must not punch through mu_hat/2,
        # so the cutoff stays at 1 along any accepted step
        L_loc = max(float(np.linalg.norm(choice.p)), 1e-12)
        R = mu_hat / (2.0 * L_loc)
        f_a = eval_dynamics(system, state, choice.a_index)
        l_a = eval_lagrangian(system, state, choice.a_index)
        g_a = mrf.p0_bar * l_a + float(modulus(u_anchor))
        speed = config.mf_safety * max(float(np.linalg.norm(f_a)), 1e-12) / g_a
        trial = min(config.delta_init, mu_hat / 2.0, R / speed)

        # one accepted step; halve the trial length on any failed audit
        while True:
            if trial < delta_min:
                raise StepCollapse(state, trial, "per-step decrease unattainable")
            try:
                path = _rk4_path(F, state, trial, n_sub)
            except (ModulusError, SingularDynamics):
                trial *= 0.5
                continue
            ds = trial * np.arange(n_sub + 1) / n_sub
            u_path = np.array([mrf.u(z) for z in path])
            slack = 1e-13 * (1.0 + trial)
            if not np.all(u_path - u_anchor <= -ds / eps1 + slack):
                trial *= 0.5
                continue
            if float(np.max(np.linalg.norm(path - state, axis=1))) > R * 1.0000001:
                trial *= 0.5
                continue

            d_path = np.array([target.d(z) for z in path])
            hit = np.where(d_path[1:] < config.d_tol)[0]
            hit_i = int(hit[0]) + 1 if hit.size else None
            crossed = np.where(u_path[1:] <= mu_hat + level_tol)[0]
            cross_i = int(crossed[0]) + 1 if crossed.size else None

            if hit_i is not None and (cross_i is None or hit_i <= cross_i):
                # target approach: truncate at the first substep in the collar
                length = float(ds[hit_i])
                path = path[: hit_i + 1]
                u_path = u_path[: hit_i + 1]
                d_path = d_path[: hit_i + 1]
                status = TrajectoryStatus.APPROACHED_TARGET
                break

            if cross_i is not None:
                # exit-level crossing: bisect the step length with the same
                # integration rule so the final path is self-consistent
                def u_at(t: float) -> float:
                    return mrf.u(_rk4_path(F, state, t, n_sub)[-1]) - mu_hat

                length = bisect_root(
                    u_at, float(ds[cross_i - 1]), float(ds[cross_i]), ftol=level_tol
                )
                path = _rk4_path(F, state, length, n_sub)
                u_path = np.array([mrf.u(z) for z in path])
                ds = length * np.arange(n_sub + 1) / n_sub
                slack = 1e-13 * (1.0 + length)
                if not np.all(u_path - u_anchor <= -ds / eps1 + slack):
                    # rare: the shortened step resamples a transient bump;
                    # keep halving from below the crossing bracket
                    trial = 0.5 * length
                    continue
                d_path = np.array([target.d(z) for z in path])
                status = TrajectoryStatus.REACHED_LEVEL
                break

            # interior refinement: cut at the first substep that already
            # reaches the end value, so node values strictly decrease
            u_end = u_path[-1]
            kstar = int(np.where(u_path[1:] <= u_end)[0][0]) + 1
            if kstar < n_sub:
                length = float(ds[kstar])
                path = path[: kstar + 1]
                u_path = u_path[: kstar + 1]
                d_path = d_path[: kstar + 1]
            else:
                length = float(trial)
            break

        steps.append(
            LegStep(
                anchor=state.copy(),
                a_index=choice.a_index,
                p=choice.p.copy(),
                quotient=choice.quotient,
                s0=s_acc,
                length=length,
                states=path.copy(),
                u=u_path.copy(),
                d=d_path.copy(),
            )
        )
        n_new = len(path) - 1
        sub = s_acc + length * np.arange(1, n_new + 1) / n_new
        trail_s.extend(sub.tolist())
        trail_z.extend(list(path[1:]))
        trail_u.extend(u_path[1:].tolist())
        trail_d.extend(d_path[1:].tolist())
        trail_a[-1] = choice.a_index  # segment leaving the previous node
        trail_a.extend([choice.a_index] * n_new)
        s_acc += length
        state = path[-1].copy()

    return LegResult(
        x0=x0,
        mu_bar=mu_bar,
        mu_hat=mu_hat,
        epsilon=config.epsilon,
        status=status,
        steps=steps,
        s_sub=np.asarray(trail_s),
        states_sub=np.asarray(trail_z),
        u_sub=np.asarray(trail_u),
        d_sub=np.asarray(trail_d),
        a_sub=np.asarray(trail_a, dtype=int),
    )


# ----------------------------------------------------------------------
# reparameterization to the physical clock


def reparam_to_time(
    leg: LegResult,
    system: ControlSystem,
    mrf: CandidateMrf,
    modulus: DecreaseModulus,
) -> LegTimes:
    """Recover t and the running cost from the internal clock.

    On each step dt = ds / g with g = p0*l + m(U) evaluated along the
    stored substep states; time, cost and the modulus integral come from
    trapezoid sums, with a coarse/fine Richardson difference as the
    quadrature error estimate.  Also measures the worst relative
    residual of dz/dt against f at segment midpoints, which checks that
    the reparameterized path solves the original dynamics.
    """
    p0 = mrf.p0_bar
    t_sub = [0.0]
    cost_sub = [0.0]
    g_sub: list[float] = []
    t_steps = []
    cost_steps = []
    m_int_steps = []
    quad_err = 0.0
    residual_max = 0.0

    first = True
    for st in leg.steps:
        n = len(st.states) - 1
        h = st.length / n
        l_vals = np.array([eval_lagrangian(system, z, st.a_index) for z in st.states])
        m_vals = np.asarray(modulus(st.u), dtype=float)
        g_vals = p0 * l_vals + m_vals
        if np.any(g_vals <= 0):
            bad = int(np.argmin(g_vals))
            raise ModulusError(st.states[bad], float(g_vals[bad]))
        inv_g = 1.0 / g_vals
        lc = l_vals * inv_g
        mc = m_vals * inv_g

        dt = h * 0.5 * (inv_g[:-1] + inv_g[1:])
        dc = h * 0.5 * (lc[:-1] + lc[1:])
        dm = h * 0.5 * (mc[:-1] + mc[1:])
        t_step = float(np.sum(dt))
        c_step = float(np.sum(dc))
        m_step = float(np.sum(dm))

        # Richardson: trapezoid error is about (fine - coarse) / 3
        if n >= 2 and n % 2 == 0:
            coarse_t = float(np.sum(2 * h * 0.5 * (inv_g[:-2:2] + inv_g[2::2])))
            coarse_c = float(np.sum(2 * h * 0.5 * (lc[:-2:2] + lc[2::2])))
            quad_err = max(
                quad_err, abs(t_step - coarse_t) / 3.0, abs(c_step - coarse_c) / 3.0
            )

        # ODE residual of the t-parameterized path at segment midpoints
        for i in range(n):
            if dt[i] <= 0:
                raise ModulusError(st.states[i], float(g_vals[i]))
            z_mid = 0.5 * (st.states[i] + st.states[i + 1])
            u_mid = 0.5 * (st.u[i] + st.u[i + 1])
            psi = _cutoff(u_mid, leg.mu_hat, modulus.top_level)
            f_mid = psi * eval_dynamics(system, z_mid, st.a_index)
            rate = (st.states[i + 1] - st.states[i]) / dt[i]
            res = float(np.linalg.norm(rate - f_mid) / (1.0 + np.linalg.norm(f_mid)))
            residual_max = max(residual_max, res)

        off_t = t_sub[-1]
        off_c = cost_sub[-1]
        t_sub.extend((off_t + np.cumsum(dt)).tolist())
        cost_sub.extend((off_c + np.cumsum(dc)).tolist())
        if first:
            g_sub.extend(g_vals.tolist())
            first = False
        else:
            g_sub.extend(g_vals[1:].tolist())
        t_steps.append(t_step)
        cost_steps.append(c_step)
        m_int_steps.append(m_step)

    times = LegTimes(
        t_sub=np.asarray(t_sub),
        cost_sub=np.asarray(cost_sub),
        g_sub=np.asarray(g_sub) if g_sub else np.ones(1),
        t_steps=np.asarray(t_steps),
        cost_steps=np.asarray(cost_steps),
        m_int_steps=np.asarray(m_int_steps),
        quad_err=quad_err,
        residual_max=residual_max,
    )
    leg.times = times
    return times


# ----------------------------------------------------------------------
# full synthesis


@dataclass
class SynthesisResult:
    trajectory: Trajectory
    legs: list
    levels: list
    u0: float
    d0: float
    epsilon: float
    p0_bar: float
    cost_bound: Optional[float]
    status: TrajectoryStatus

    @property
    def total_cost(self) -> float:
        return self.trajectory.total_cost

    def report(self) -> dict:
        per_leg = []
        for leg in self.legs:
            step_decrease = []
            strict_nodes = True
            for st in leg.steps:
                n = len(st.states) - 1
                ds = st.length * np.arange(n + 1) / n
                step_decrease.append(
                    float(np.max(st.u - st.u[0] + ds / (leg.epsilon + 1.0)))
                )
                if n > 1 and np.any(st.u[1:-1] <= st.u[-1]):
                    strict_nodes = False
            u_start = float(leg.u_sub[0]) if len(leg.u_sub) else 0.0
            entry = {
                "mu_bar": leg.mu_bar,
                "mu_hat": leg.mu_hat,
                "status": leg.status.value,
                "n_steps": len(leg.steps),
                "s_bar": leg.s_bar,
                "u_end": leg.u_end,
                "partition_diameter": leg.partition.diameter if leg.steps else 0.0,
                "step_decrease_worst": max(step_decrease) if step_decrease else 0.0,
                "strict_node_decrease": strict_nodes,
                "s_bar_budget": (leg.epsilon + 1.0) * u_start,
            }
            if leg.times is not None:
                tm = leg.times
                integral_dec = []
                for j, st in enumerate(leg.steps):
                    du = float(st.u[-1] - st.u[0])
                    integral_dec.append(
                        du
                        + (self.p0_bar * tm.cost_steps[j] + tm.m_int_steps[j])
                        / (leg.epsilon + 1.0)
                    )
                entry["integral_decrease_worst"] = max(integral_dec) if integral_dec else 0.0
                entry["integral_decrease_tol"] = 10.0 * tm.quad_err + 1e-12
                entry["quad_err"] = tm.quad_err
                entry["residual_max"] = tm.residual_max
                entry["t_total"] = float(tm.t_sub[-1])
                entry["cost_total"] = float(tm.cost_sub[-1])
            per_leg.append(entry)
        return {
            "u0": self.u0,
            "d0": self.d0,
            "epsilon": self.epsilon,
            "levels": self.levels,
            "status": self.status.value,
            "total_cost": self.total_cost,
            "cost_bound": self.cost_bound,
            "cost_within_bound": (
                None if self.cost_bound is None else bool(self.total_cost <= self.cost_bound)
            ),
            "u_max_along": float(np.max(self.trajectory.u)) if self.trajectory.n_nodes else None,
            "legs": per_leg,
        }


def synthesize(
    system: ControlSystem,
    target: TargetSet,
    mrf: CandidateMrf,
    modulus: DecreaseModulus,
    x0: np.ndarray,
    config: SynthesisConfig,
    *,
    sigma: Optional[float] = None,
) -> SynthesisResult:
    """Concatenate legs along the geometric level cascade mu_k = nu^k U(x0).

    Runs until the target collar is reached (approached_target), the
    level budget is exhausted (truncated), or a leg fails (exceptions
    propagate).  The result carries the full substep trail as a
    Trajectory in both clocks plus per-leg audit data.
    """
    x0 = np.asarray(x0, dtype=float)
    if sigma is None:
        sigma = modulus.top_level
    u0 = mrf.u(x0)
    d0 = target.d(x0)
    cost_bound = (config.epsilon + 1.0) * u0 / mrf.p0_bar if mrf.p0_bar > 0 else None

    if d0 < config.d_tol:
        traj = Trajectory(
            t=np.array([0.0]),
            s=np.array([0.0]),
            states=x0[None, :],
            a_index=np.array([0]),
            cost=np.array([0.0]),
            u=np.array([u0]),
            d=np.array([d0]),
            status=TrajectoryStatus.APPROACHED_TARGET,
        )
        return SynthesisResult(
            trajectory=traj, legs=[], levels=[], u0=u0, d0=d0,
            epsilon=config.epsilon, p0_bar=mrf.p0_bar, cost_bound=cost_bound,
            status=TrajectoryStatus.APPROACHED_TARGET,
        )
    if u0 <= 0:
        raise ConfigError(
            f"U(x0) = {u0} is not positive at d(x0) = {d0}; "
            "the candidate is not positive definite at the start point"
        )
    if u0 >= sigma:
        raise ConfigError(
            f"U(x0) = {u0} is not below the certified band top {sigma}; "
            "the construction only covers starts inside the band"
        )

    legs: list[LegResult] = []
    levels: list[float] = []
    t_all = [0.0]
    s_all = [0.0]
    z_all = [x0.copy()]
    a_all = [0]
    c_all = [0.0]
    u_all = [u0]
    d_all = [d0]
    leg_of = [0]

    state = x0.copy()
    status = TrajectoryStatus.TRUNCATED
    mu_prev = u0
    for k in range(1, config.max_levels + 1):
        mu_k = u0 * config.nu_ratio**k
        if target.d(state) < config.d_tol:
            status = TrajectoryStatus.APPROACHED_TARGET
            break
        if mrf.u(state) <= mu_k:
            mu_prev = mu_k
            continue  # level already passed by the previous leg's overshoot
        levels.append(mu_k)
        leg = integrate_leg(
            system, target, mrf, modulus, state,
            mu_bar=mu_prev, mu_hat=mu_k, config=config, sigma=sigma,
        )
        reparam_to_time(leg, system, mrf, modulus)
        legs.append(leg)

        tm = leg.times
        t_off, s_off, c_off = t_all[-1], s_all[-1], c_all[-1]
        n_new = len(leg.s_sub) - 1
        if n_new > 0:
            t_all.extend((t_off + tm.t_sub[1:]).tolist())
            s_all.extend((s_off + leg.s_sub[1:]).tolist())
            z_all.extend(list(leg.states_sub[1:]))
            c_all.extend((c_off + tm.cost_sub[1:]).tolist())
            u_all.extend(leg.u_sub[1:].tolist())
            d_all.extend(leg.d_sub[1:].tolist())
            a_all[-1] = int(leg.a_sub[0])
            a_all.extend(leg.a_sub[1:].tolist())
            leg_of.extend([len(legs) - 1] * n_new)

        state = leg.states_sub[-1].copy()
        mu_prev = mu_k
        if leg.status == TrajectoryStatus.APPROACHED_TARGET:
            status = TrajectoryStatus.APPROACHED_TARGET
            break
    if status != TrajectoryStatus.APPROACHED_TARGET and target.d(state) < config.d_tol:
        status = TrajectoryStatus.APPROACHED_TARGET

    traj = Trajectory(
        t=np.asarray(t_all),
        s=np.asarray(s_all),
        states=np.asarray(z_all),
        a_index=np.asarray(a_all, dtype=int),
        cost=np.asarray(c_all),
        u=np.asarray(u_all),
        d=np.asarray(d_all),
        status=status,
        leg_of=np.asarray(leg_of, dtype=int),
    )
    traj.validate()
    result = SynthesisResult(
        trajectory=traj, legs=legs, levels=levels, u0=u0, d0=d0,
        epsilon=config.epsilon, p0_bar=mrf.p0_bar, cost_bound=cost_bound, status=status,
    )
    log.info(
        "synthesis from U=%.4g: %s after %d legs, cost %.4g (budget %s)",
        u0, status.value, len(legs), traj.total_cost,
        "none" if cost_bound is None else f"{cost_bound:.4g}",
    )
    return result


# ----------------------------------------------------------------------
# distance envelopes


def build_sigma_envelopes(
    mrf: CandidateMrf,
    target: TargetSet,
    sigma: float,
    grid,
    *,
    n_knots: int = 33,
    margin: Optional[float] = None,
    d_floor: float = 1e-12,
) -> tuple[MonotonePL, MonotonePL]:
    """Sampled monotone envelopes squeezing d between functions of U.

    sigma_minus(r) under-approximates min{d(z) : U(z) >= r} and
    sigma_plus(r) over-approximates max{d(z) : U(z) <= r}.  Knot values
    are shifted one knot inward: the lower envelope at level r uses the
    minimum over the previous (smaller) level, whose sample set is
    larger, and is additionally capped at r, which is always admissible
    for a lower distance envelope.  The upper envelope at level r uses
    the maximum over the next level and is padded by a resolution
    margin.  Together this makes d_i <= sigma_plus(U_i) hold on every
    sample and sigma_minus(U_i) <= d_i on every sample strictly off the
    target (the set the lower envelope is built from; on the target the
    claim is vacuous since the decay bound is zero there).  No margin is
    subtracted from the lower envelope: near a thin target collar the
    raw minimum sits below any useful margin, and deflating it further
    would break the sandwich rather than strengthen it.
    """
    from .certificates import GridSpec, _batch_dist  # local import to avoid a cycle

    if not isinstance(grid, GridSpec):
        raise ConfigError("grid must be a GridSpec")
    X = grid.points()
    U = mrf.u_batch(X)
    D = _batch_dist(target, X)
    keep = np.isfinite(U) & (U >= 0.0)
    U, D = U[keep], D[keep]
    if U.size == 0:
        raise ConfigError("no usable samples: U is negative or undefined on the whole grid")
    if margin is None:
        L = float(mrf.band_constants.get("L", 1.0))
        margin = grid.spacing * np.sqrt(grid.dim) * (1.0 + L)

    # knot levels: linear ladder plus geometric refinement near 0
    levels = np.unique(
        np.concatenate(
            [np.linspace(0.0, sigma, n_knots)[1:], sigma * 0.5 ** np.arange(1, 21)]
        )
    )

    order = np.argsort(U, kind="stable")
    U_s, D_s = U[order], D[order]

    # lower envelope from samples strictly off the target
    pos = D_s > d_floor
    U_lo, D_lo = U_s[pos], D_s[pos]
    if U_lo.size == 0:
        raise ConfigError("no samples off the target; enlarge the grid")
    suffix_min = np.minimum.accumulate(D_lo[::-1])[::-1]
    sm_raw = []
    for r in levels:
        j = int(np.searchsorted(U_lo, r, side="left"))
        sm_raw.append(float(suffix_min[j]) if j < len(U_lo) else None)

    # upper envelope from every sample
    prefix_max = np.maximum.accumulate(D_s)
    sp_raw = []
    for r in levels:
        j = int(np.searchsorted(U_s, r, side="right")) - 1
        sp_raw.append(float(prefix_max[j]) if j >= 0 else None)

    # ---- sigma_minus: lag by one knot, cap at the identity, strictify down
    xs_m, ys_m = [0.0], [0.0]
    prev_raw = None
    for j, r in enumerate(levels):
        raw = sm_raw[j]
        if raw is None:
            continue
        lagged = prev_raw if prev_raw is not None else raw
        prev_raw = raw
        v = min(lagged, float(r))
        if v > 0:
            xs_m.append(float(r))
            ys_m.append(v)
    if len(xs_m) < 3:
        raise ConfigError(
            "lower envelope degenerate: too few levels carry positive distance samples; "
            "refine the grid or lower sigma"
        )
    ys_arr = np.maximum.accumulate(np.asarray(ys_m))  # monotone guard before lowering
    floor_m = max(1e-15, 1e-9 * float(ys_arr[-1]) / max(sigma, 1e-15))
    ys_arr = lower_strict(np.asarray(xs_m), ys_arr, floor_m)
    sigma_minus = MonotonePL(np.asarray(xs_m), ys_arr, extrapolate="linear")

    # ---- sigma_plus: lead by one knot, inflate by the margin, strictify up
    kept = [(float(levels[j]), sp_raw[j]) for j in range(len(levels)) if sp_raw[j] is not None]
    if not kept:
        raise ConfigError("upper envelope degenerate: no samples below sigma")
    xs_p = [0.0]
    ys_p = [0.0]
    for i, (r, _) in enumerate(kept):
        nxt = min(i + 1, len(kept) - 1)
        xs_p.append(r)
        ys_p.append(kept[nxt][1] + margin)
    floor_p = max(1e-15, 1e-9 * float(max(ys_p)) / max(sigma, 1e-15))
    ys_up = lift_strict(np.asarray(xs_p), np.maximum.accumulate(np.asarray(ys_p)), floor_p)
    sigma_plus = MonotonePL(np.asarray(xs_p), ys_up, extrapolate="linear")

    return sigma_minus, sigma_plus


# ----------------------------------------------------------------------
# composed decay bound


@dataclass
class KLBound:
    """Decay certificate beta(r, t) composed from sampled monotone tables.

    beta(r, t) = sigma_plus( m_tilde^{-1}( sigma_minus^{-1}(r) * w(t) ) )
    with w(t) = (2 eps + 1) / (2 eps + 1 + t) and m_tilde the pointwise
    minimum of the identity and the decrease modulus.
    """

    sigma_minus: MonotonePL
    sigma_plus: MonotonePL
    m_tilde: MonotonePL
    epsilon: float

    def __post_init__(self) -> None:
        self._sm_inv = self.sigma_minus.inverse()
        self._mt_inv = self.m_tilde.inverse()

    def beta(self, r, t):
        r_arr = np.asarray(r, dtype=float)
        t_arr = np.asarray(t, dtype=float)
        c = 2.0 * self.epsilon + 1.0
        w = c / (c + t_arr)
        u = np.asarray(self._sm_inv(r_arr), dtype=float)
        val = self.sigma_plus(self._mt_inv(u * w))
        out = np.where(r_arr <= 0.0, 0.0, val)
        if out.ndim == 0:
            return float(out)
        return out

    def validate_axioms(
        self,
        r_lattice: Optional[np.ndarray] = None,
        t_lattice: Optional[np.ndarray] = None,
        *,
        decay_tol: float = 1e-5,
        n_lattice: int = 50,
    ) -> dict:
        """Check the decay-certificate axioms on a test lattice.

        Zero at r = 0, strictly increasing in r, non-increasing in t,
        decay below decay_tol at the far end of the t range, and a
        positive end slope in r (the bound keeps growing with the
        initial distance instead of saturating).
        """
        if r_lattice is None:
            r_top = float(self.sigma_minus.ys[-1])
            r_lattice = np.linspace(0.0, r_top, n_lattice)
        if t_lattice is None:
            t_lattice = np.concatenate(([0.0], np.logspace(0.0, 18.0, n_lattice - 1)))
        rows = np.array([[self.beta(r, t) for t in t_lattice] for r in r_lattice])

        zero_r = bool(np.all(np.abs(rows[0]) <= 1e-15)) if r_lattice[0] == 0 else True
        inc_r = bool(np.all(np.diff(rows, axis=0) > 0))
        dec_t = bool(np.all(np.diff(rows, axis=1) <= 1e-15))
        decays = bool(rows[-1, -1] <= decay_tol)
        end_slope = (self.beta(r_lattice[-1], 0.0) - self.beta(r_lattice[-2], 0.0)) / (
            r_lattice[-1] - r_lattice[-2]
        )
        unbounded = bool(end_slope > 0)
        return {
            "passed": zero_r and inc_r and dec_t and decays and unbounded,
            "zero_at_zero": zero_r,
            "strictly_increasing_in_r": inc_r,
            "non_increasing_in_t": dec_t,
            "decays_to_zero": decays,
            "beta_at_corner": float(rows[-1, -1]),
            "unbounded_in_r": unbounded,
            "r_max": float(r_lattice[-1]),
            "t_max": float(t_lattice[-1]),
        }

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "sigma_minus_knots": [self.sigma_minus.xs.tolist(), self.sigma_minus.ys.tolist()],
            "sigma_plus_knots": [self.sigma_plus.xs.tolist(), self.sigma_plus.ys.tolist()],
            "m_tilde_knots": [self.m_tilde.xs.tolist(), self.m_tilde.ys.tolist()],
        }


def build_kl_bound(
    sigma_minus: MonotonePL,
    sigma_plus: MonotonePL,
    modulus: DecreaseModulus,
    epsilon: float,
) -> KLBound:
    """Compose the decay certificate from the envelopes and the modulus."""
    ident = MonotonePL.identity(modulus.pl.xs)
    m_tilde = pwl_min(ident, modulus.pl)
    if not m_tilde.is_strictly_increasing:
        raise ValueError("min(identity, modulus) has a flat segment; cannot invert")
    if not sigma_minus.is_strictly_increasing or not sigma_plus.is_strictly_increasing:
        raise ValueError("envelopes must be strictly increasing")
    return KLBound(
        sigma_minus=sigma_minus, sigma_plus=sigma_plus, m_tilde=m_tilde, epsilon=epsilon
    )


@dataclass
class KLReport:
    passed: bool
    worst_slack: float
    worst_time: float
    n_nodes: int
    tol: float

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "worst_slack": self.worst_slack,
            "worst_time": self.worst_time,
            "n_nodes": self.n_nodes,
            "tol": self.tol,
        }


def verify_kl(
    trajectory: Trajectory, kl: KLBound, *, d0: Optional[float] = None, tol: float = 1e-9
) -> KLReport:
    """Check d(z(t)) <= beta(d(x), t) + tol along a synthesized trajectory."""
    if trajectory.n_nodes == 0:
        return KLReport(passed=True, worst_slack=float("-inf"), worst_time=0.0, n_nodes=0, tol=tol)
    if d0 is None:
        d0 = float(trajectory.d[0])
    bounds = np.array([kl.beta(d0, t) for t in trajectory.t])
    slack = trajectory.d - bounds
    i = int(np.argmax(slack))
    return KLReport(
        passed=bool(slack[i] <= tol),
        worst_slack=float(slack[i]),
        worst_time=float(trajectory.t[i]),
        n_nodes=trajectory.n_nodes,
        tol=tol,
    )
