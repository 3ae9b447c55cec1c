"""Control systems, Hamiltonians, targets and trajectory containers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exitcert.library import minimum_time_1d, spiral
from exitcert.systems import (
    ConfigError,
    ControlSystem,
    NegativeLagrangian,
    Partition,
    SingularDynamics,
    TargetSet,
    Trajectory,
    TrajectoryStatus,
    check_distance_lipschitz,
    eval_dynamics,
    eval_lagrangian,
    hamiltonian,
    hamiltonian_argmin,
)

MT = minimum_time_1d(p0_bar=0.9)


def test_minimum_time_hamiltonian_values():
    # min over a in {-1, +1} of p0*1 + p*a = p0 - |p|
    x = np.array([1.0])
    p = np.array([1.0])
    assert hamiltonian(MT.system, x, 0.9, p) == pytest.approx(-0.1)
    assert hamiltonian(MT.system, x, 0.5, p) == pytest.approx(-0.5)
    assert hamiltonian(MT.system, x, 0.9, np.array([-2.0])) == pytest.approx(-1.1)


def test_hamiltonian_argmin_picks_descending_control():
    x = np.array([1.0])
    # positive costate: the minimizer is a = -1, stored at index 0
    assert hamiltonian_argmin(MT.system, x, 0.9, np.array([1.0])) == 0
    assert hamiltonian_argmin(MT.system, x, 0.9, np.array([-1.0])) == 1


def test_hamiltonian_rejects_negative_p0():
    with pytest.raises(ValueError):
        hamiltonian(MT.system, np.array([1.0]), -0.1, np.array([1.0]))


@settings(max_examples=80, deadline=None)
@given(
    st.floats(0.01, 100.0),
    st.floats(-5.0, 5.0),
    st.floats(0.0, 3.0),
)
def test_hamiltonian_positive_homogeneity(lam, p_val, p0):
    """H(x, lam*p0, lam*p) = lam * H(x, p0, p) for lam > 0."""
    x = np.array([0.7])
    p = np.array([p_val])
    h1 = hamiltonian(MT.system, x, p0, p)
    h2 = hamiltonian(MT.system, x, lam * p0, lam * p)
    assert h2 == pytest.approx(lam * h1, rel=1e-10, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_argmin_matches_brute_scan_on_random_affine_systems(data):
    n_ctrl = data.draw(st.integers(2, 6))
    dim = data.draw(st.integers(1, 3))
    controls = tuple(
        np.array(data.draw(st.lists(st.floats(-2, 2), min_size=dim, max_size=dim)))
        for _ in range(n_ctrl)
    )
    sys_rand = ControlSystem(
        name="affine",
        state_dim=dim,
        dynamics=lambda x, a: a + 0.5 * x,
        lagrangian=lambda x, a: 1.0 + float(np.dot(a, a)),
        control_set=controls,
    )
    x = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=dim, max_size=dim)))
    p = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=dim, max_size=dim)))
    p0 = data.draw(st.floats(0.0, 2.0))

    vals = [
        p0 * eval_lagrangian(sys_rand, x, i) + float(np.dot(p, eval_dynamics(sys_rand, x, i)))
        for i in range(n_ctrl)
    ]
    assert hamiltonian(sys_rand, x, p0, p) == pytest.approx(min(vals))
    assert hamiltonian_argmin(sys_rand, x, p0, p) == int(np.argmin(vals))


def test_argmin_tie_goes_to_lowest_index():
    tied = ControlSystem(
        name="tied",
        state_dim=1,
        dynamics=lambda x, a: np.array([0.0]),
        lagrangian=lambda x, a: 1.0,
        control_set=(np.array([-1.0]), np.array([1.0])),
    )
    assert hamiltonian_argmin(tied, np.array([0.0]), 1.0, np.array([1.0])) == 0


def test_spiral_dynamics_value():
    ex = spiral(epsilon=0.5)
    f = eval_dynamics(ex.system, np.array([2.0, 0.0]), 1)  # index 1 is a = +1
    np.testing.assert_allclose(f, [-2.0, -2.0])


def test_spiral_radial_rate_is_minus_rho():
    ex = spiral(epsilon=0.5)
    rng = np.random.default_rng(3)
    for _ in range(10):
        z = rng.uniform(-3, 3, size=2)
        rho = np.hypot(z[0], z[1])
        if abs(rho - 1.0) < 0.1 or rho < 0.2:
            continue
        f = eval_dynamics(ex.system, z, 1)
        assert float(z @ f) / rho == pytest.approx(-rho, rel=1e-12)


def test_eval_guards():
    bad = ControlSystem(
        name="bad",
        state_dim=1,
        dynamics=lambda x, a: np.array([np.inf]),
        lagrangian=lambda x, a: -1.0,
        control_set=(np.array([0.0]),),
    )
    with pytest.raises(SingularDynamics):
        eval_dynamics(bad, np.array([0.0]), 0)
    with pytest.raises(NegativeLagrangian) as exc:
        eval_lagrangian(bad, np.array([0.0]), 0)
    assert exc.value.value == -1.0
    with pytest.raises(ConfigError):
        bad.control(5)


def test_target_distance_validation():
    t = TargetSet(name="neg", distance=lambda x: -1.0)
    with pytest.raises(ConfigError):
        t.d(np.array([0.0]))
    t2 = TargetSet(name="nan", distance=lambda x: float("nan"))
    with pytest.raises(ConfigError):
        t2.d(np.array([0.0]))


def test_target_contains():
    t = MT.target
    assert t.contains(np.array([0.0]))
    assert not t.contains(np.array([0.5]))
    assert t.contains(np.array([0.5]), tol=0.5)


def test_distance_lipschitz_on_abs():
    pts = np.linspace(-2, 2, 101)[:, None]
    worst = check_distance_lipschitz(MT.target, pts)
    assert worst <= 1e-9  # slack of |d(x)-d(y)| <= |x-y| on sample pairs


def test_distance_lipschitz_rejects_steep_function():
    steep = TargetSet(name="steep", distance=lambda x: 10.0 * abs(float(x[0])))
    pts = np.linspace(0.1, 1.0, 10)[:, None]
    with pytest.raises(ConfigError):
        check_distance_lipschitz(steep, pts)


def test_partition_validation():
    p = Partition(np.array([0.0, 0.5, 2.0]))
    assert p.diameter == pytest.approx(1.5)
    with pytest.raises(ValueError):
        Partition(np.array([0.1, 0.5]))
    with pytest.raises(ValueError):
        Partition(np.array([0.0, 0.5, 0.5]))


def _tiny_trajectory():
    return Trajectory(
        t=np.array([0.0, 1.0]),
        s=np.array([0.0, 0.5]),
        states=np.array([[1.0], [0.5]]),
        a_index=np.array([0, 0]),
        cost=np.array([0.0, 1.0]),
        u=np.array([1.0, 0.5]),
        d=np.array([1.0, 0.5]),
        status=TrajectoryStatus.REACHED_LEVEL,
    )


def test_trajectory_validate_accepts_consistent_data():
    _tiny_trajectory().validate()


def test_trajectory_validate_rejects_nonmonotone_time():
    traj = _tiny_trajectory()
    traj.t = np.array([0.0, 0.0])
    with pytest.raises(ValueError):
        traj.validate()


def test_trajectory_validate_rejects_nonzero_initial_cost():
    traj = _tiny_trajectory()
    traj.cost = np.array([0.5, 1.0])
    with pytest.raises(ValueError):
        traj.validate()


def test_trajectory_status_values():
    assert TrajectoryStatus.REACHED_LEVEL.value == "reached_level"
    assert TrajectoryStatus.APPROACHED_TARGET.value == "approached_target"
    assert TrajectoryStatus.TRUNCATED.value == "truncated"
