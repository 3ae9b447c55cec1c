"""Controlled dynamics, running costs, targets and trajectory containers.

The control set is a finite tuple of control values.  Controls are
referred to by index everywhere (trajectories store indices, not
values), which keeps tie-breaking deterministic: ties always go to the
lowest index.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ConfigError",
    "SingularDynamics",
    "NegativeLagrangian",
    "ControlSystem",
    "TargetSet",
    "Partition",
    "TrajectoryStatus",
    "Trajectory",
    "eval_dynamics",
    "eval_lagrangian",
    "hamiltonian",
    "hamiltonian_argmin",
]


class ConfigError(ValueError):
    """A run or system description is malformed."""


class SingularDynamics(RuntimeError):
    """Dynamics or cost evaluated to a non-finite value."""

    def __init__(self, x, detail: str = ""):
        self.x = np.asarray(x, dtype=float)
        msg = f"non-finite evaluation at x={self.x.tolist()}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NegativeLagrangian(ValueError):
    """The running cost came out negative, which the model forbids."""

    def __init__(self, x, a_index: int, value: float):
        self.x = np.asarray(x, dtype=float)
        self.a_index = a_index
        self.value = value
        super().__init__(
            f"lagrangian {value} < 0 at x={self.x.tolist()}, control index {a_index}"
        )


# ----------------------------------------------------------------------
# system description


@dataclass(frozen=True)
class ControlSystem:
    """Dynamics x' = f(x, a), running cost l(x, a), finite control set.

    ``dynamics`` and ``lagrangian`` take (state, control value).  The
    optional batch evaluators take an (N, dim) state block and one
    control value and return (N, dim) / (N,); they exist so that grid
    sweeps do not pay a Python call per point.
    """

    name: str
    state_dim: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lagrangian: Callable[[np.ndarray, np.ndarray], float]
    control_set: tuple
    batch_dynamics: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    batch_lagrangian: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self) -> None:
        if self.state_dim < 1:
            raise ConfigError("state_dim must be at least 1")
        controls = tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in self.control_set)
        object.__setattr__(self, "control_set", controls)

    @property
    def n_controls(self) -> int:
        return len(self.control_set)

    def control(self, a_index: int) -> np.ndarray:
        if not 0 <= a_index < len(self.control_set):
            raise ConfigError(f"control index {a_index} out of range")
        return self.control_set[a_index]


def eval_dynamics(system: ControlSystem, x: np.ndarray, a_index: int) -> np.ndarray:
    a = system.control(a_index)
    f = np.asarray(system.dynamics(np.asarray(x, dtype=float), a), dtype=float)
    if f.shape != (system.state_dim,):
        raise ConfigError(f"dynamics returned shape {f.shape}, expected ({system.state_dim},)")
    if not np.all(np.isfinite(f)):
        raise SingularDynamics(x, f"f(x, a[{a_index}])={f.tolist()}")
    return f


def eval_lagrangian(system: ControlSystem, x: np.ndarray, a_index: int) -> float:
    a = system.control(a_index)
    val = float(system.lagrangian(np.asarray(x, dtype=float), a))
    if not np.isfinite(val):
        raise SingularDynamics(x, f"l(x, a[{a_index}])={val}")
    if val < 0:
        raise NegativeLagrangian(x, a_index, val)
    return val


# ----------------------------------------------------------------------
# minimized Hamiltonian


def _scan_controls(system: ControlSystem, x: np.ndarray, p0: float, p: np.ndarray):
    if not system.control_set:
        raise ConfigError("control set is empty")
    if p0 < 0:
        raise ValueError("p0 must be non-negative")
    p = np.asarray(p, dtype=float)
    best_val = np.inf
    best_idx = 0
    for k in range(system.n_controls):
        f = eval_dynamics(system, x, k)
        l = eval_lagrangian(system, x, k)
        val = p0 * l + float(np.dot(p, f))
        if val < best_val:
            best_val = val
            best_idx = k
    return best_val, best_idx


def hamiltonian(system: ControlSystem, x: np.ndarray, p0: float, p: np.ndarray) -> float:
    """Minimized Hamiltonian: inf over the control set of p0*l + <p, f>."""
    val, _ = _scan_controls(system, x, p0, p)
    return val


def hamiltonian_argmin(system: ControlSystem, x: np.ndarray, p0: float, p: np.ndarray) -> int:
    """Index of the minimizing control; ties go to the lowest index."""
    _, idx = _scan_controls(system, x, p0, p)
    return idx


# ----------------------------------------------------------------------
# target set


@dataclass(frozen=True)
class TargetSet:
    """Closed target described through its Euclidean distance function.

    ``distance`` must be 1-Lipschitz (it is a metric distance).  The
    optional ``distance_gradients`` returns the list of limiting
    gradients of d at a point outside the target; where d is smooth the
    list is a singleton.
    """

    name: str
    distance: Callable[[np.ndarray], float]
    distance_gradients: Optional[Callable[[np.ndarray], list]] = None
    batch_distance: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def d(self, x: np.ndarray) -> float:
        val = float(self.distance(np.asarray(x, dtype=float)))
        if not np.isfinite(val) or val < 0:
            raise ConfigError(f"distance evaluated to {val} at x={np.asarray(x).tolist()}")
        return val

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return self.d(x) <= tol


def check_distance_lipschitz(target: TargetSet, points: np.ndarray, tol: float = 1e-9) -> float:
    """Largest violation of |d(x)-d(y)| <= |x-y| over consecutive sample pairs.

    Returns the worst slack (positive means a violation larger than tol
    was found, and a ConfigError is raised instead).
    """
    pts = np.asarray(points, dtype=float)
    worst = -np.inf
    for i in range(len(pts) - 1):
        dx = float(np.linalg.norm(pts[i + 1] - pts[i]))
        dd = abs(target.d(pts[i + 1]) - target.d(pts[i]))
        worst = max(worst, dd - dx)
    if worst > tol:
        raise ConfigError(f"distance is not 1-Lipschitz on samples (slack {worst})")
    return worst


# ----------------------------------------------------------------------
# partitions and trajectories


@dataclass(frozen=True)
class Partition:
    """Strictly increasing node sequence starting at 0."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 1:
            raise ValueError("partition needs at least one node")
        if pts[0] != 0.0:
            raise ValueError("partition must start at 0")
        if pts.size > 1 and np.any(np.diff(pts) <= 0):
            raise ValueError("partition nodes must be strictly increasing")

    @property
    def diameter(self) -> float:
        if self.points.size < 2:
            return 0.0
        return float(np.max(np.diff(self.points)))


class TrajectoryStatus(enum.Enum):
    REACHED_LEVEL = "reached_level"
    APPROACHED_TARGET = "approached_target"
    TRUNCATED = "truncated"


@dataclass
class Trajectory:
    """Sampled trajectory in both clocks.

    Parallel arrays: physical time t, internal parameter s, states
    (N, dim), control index in effect on [t_i, t_{i+1}) (the last entry
    repeats its predecessor), and accumulated cost.  U and d samples are
    carried along because every consumer wants them.
    """

    t: np.ndarray
    s: np.ndarray
    states: np.ndarray
    a_index: np.ndarray
    cost: np.ndarray
    u: np.ndarray
    d: np.ndarray
    status: TrajectoryStatus
    leg_of: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.t = np.asarray(self.t, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.a_index = np.asarray(self.a_index, dtype=int)
        self.cost = np.asarray(self.cost, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        if self.leg_of is None:
            self.leg_of = np.zeros(len(self.t), dtype=int)
        self.validate()

    def validate(self) -> None:
        n = len(self.t)
        for name in ("s", "a_index", "cost", "u", "d", "leg_of"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"array {name!r} length mismatch")
        if self.states.shape[0] != n:
            raise ValueError("states length mismatch")
        if n == 0:
            return
        if np.any(np.diff(self.t) <= 0) or np.any(np.diff(self.s) <= 0):
            raise ValueError("time and parameter samples must be strictly increasing")
        if self.cost[0] != 0.0:
            raise ValueError("cost must start at 0")
        if np.any(np.diff(self.cost) < -1e-12):
            raise ValueError("cost must be non-decreasing")

    @property
    def n_nodes(self) -> int:
        return len(self.t)

    @property
    def total_cost(self) -> float:
        return float(self.cost[-1]) if len(self.cost) else 0.0
