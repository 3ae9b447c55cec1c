"""Leg integration, full synthesis, envelopes and the decay bound."""

import numpy as np
import pytest

from exitcert.certificates import build_decrease_modulus
from exitcert.library import power_law
from exitcert.pwl import MonotonePL
from exitcert.synthesis import (
    FeedbackGap,
    KLBound,
    ModulusError,
    StepCollapse,
    SynthesisConfig,
    build_kl_bound,
    build_sigma_envelopes,
    feedback_select,
    integrate_leg,
    synthesize,
    verify_kl,
)
from exitcert.systems import ConfigError, TrajectoryStatus


# ----------------------------------------------------------------------
# configuration guards


@pytest.mark.parametrize(
    "kwargs",
    [
        {"epsilon": 0.0},
        {"nu_ratio": 1.0},
        {"nu_ratio": 0.0},
        {"max_levels": 0},
        {"delta_init": 0.0},
        {"substeps": 7},
        {"substeps": 0},
        {"d_tol": 0.0},
        {"mf_safety": 0.5},
    ],
)
def test_synthesis_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        SynthesisConfig(**kwargs)


# ----------------------------------------------------------------------
# feedback selection


def test_feedback_select_descends(mt):
    choice = feedback_select(mt.ex.system, mt.ex.mrf, mt.modulus, np.array([1.0]))
    assert choice.a_index == 0  # control -1 moves toward the origin
    assert choice.quotient <= -1.0
    np.testing.assert_allclose(choice.p, [1.0])


def test_feedback_gap_with_oversized_modulus(mt):
    fat = build_decrease_modulus([(lev, 80.0) for lev, _ in mt.cert.m_hat_samples])
    with pytest.raises(FeedbackGap) as exc:
        feedback_select(mt.ex.system, mt.ex.mrf, fat, np.array([1.0]))
    assert exc.value.best_value > -1.0


def test_modulus_error_where_cost_and_modulus_vanish(ring):
    # on the outer circle U = 0 and the running cost is 0, so g = 0
    with pytest.raises(ModulusError) as exc:
        feedback_select(ring.ex.system, ring.ex.mrf, ring.modulus, np.array([4.0, 0.0]))
    assert exc.value.g <= 0.0


# ----------------------------------------------------------------------
# leg integration


def test_leg_rejects_bad_levels(mt):
    cfg = SynthesisConfig()
    with pytest.raises(ConfigError):
        integrate_leg(
            mt.ex.system, mt.ex.target, mt.ex.mrf, mt.modulus,
            np.array([1.0]), mu_bar=0.5, mu_hat=0.9, config=cfg,
        )
    with pytest.raises(ConfigError):
        integrate_leg(
            mt.ex.system, mt.ex.target, mt.ex.mrf, mt.modulus,
            np.array([1.0]), mu_bar=0.5, mu_hat=0.25, config=cfg,
        )


def test_step_collapse_when_speed_estimate_explodes(mt):
    cfg = SynthesisConfig(mf_safety=1e15)
    with pytest.raises(StepCollapse) as exc:
        integrate_leg(
            mt.ex.system, mt.ex.target, mt.ex.mrf, mt.modulus,
            np.array([1.0]), mu_bar=1.0, mu_hat=0.5, config=cfg,
        )
    assert exc.value.delta < 1e-9


def test_step_budget_is_enforced(mt):
    cfg = SynthesisConfig(max_steps_per_leg=2)
    with pytest.raises(StepCollapse, match="exceeded 2 steps"):
        integrate_leg(
            mt.ex.system, mt.ex.target, mt.ex.mrf, mt.modulus,
            np.array([1.0]), mu_bar=1.0, mu_hat=0.05, config=cfg,
        )


def test_single_leg_reaches_its_level(mt):
    cfg = SynthesisConfig()
    leg = integrate_leg(
        mt.ex.system, mt.ex.target, mt.ex.mrf, mt.modulus,
        np.array([1.0]), mu_bar=1.0, mu_hat=0.5, config=cfg,
    )
    assert leg.status == TrajectoryStatus.REACHED_LEVEL
    assert leg.u_end == pytest.approx(0.5, abs=1e-6)
    assert leg.s_bar <= (cfg.epsilon + 1.0) * 1.0 + 1e-12
    assert np.all(np.diff(leg.s_sub) > 0)


# ----------------------------------------------------------------------
# full synthesis


def test_minimum_time_synthesis(mt, mt_synthesis):
    res = mt_synthesis
    assert res.status == TrajectoryStatus.APPROACHED_TARGET
    assert res.u0 == pytest.approx(1.0)
    assert res.cost_bound == pytest.approx(1.1 / 0.9)
    assert res.total_cost <= res.cost_bound
    assert res.total_cost == pytest.approx(1.0, rel=0.1)
    res.trajectory.validate()
    assert res.trajectory.d[-1] < 1e-3
    assert res.trajectory.u[-1] < res.u0
    assert len(res.legs) >= 1


def test_levels_follow_the_geometric_cascade(mt_synthesis):
    levels = mt_synthesis.levels
    for k, lev in enumerate(levels, start=1):
        assert lev == pytest.approx(mt_synthesis.u0 * 0.5**k)


def test_synthesis_report_shape(mt_synthesis):
    rep = mt_synthesis.report()
    assert rep["status"] == "approached_target"
    assert rep["cost_within_bound"] is True
    assert len(rep["legs"]) == len(mt_synthesis.legs)
    leg0 = rep["legs"][0]
    for key in (
        "mu_bar", "mu_hat", "status", "n_steps", "s_bar", "u_end",
        "partition_diameter", "step_decrease_worst", "strict_node_decrease",
        "s_bar_budget", "integral_decrease_worst", "integral_decrease_tol",
        "quad_err", "residual_max", "t_total", "cost_total",
    ):
        assert key in leg0


def test_ring_synthesis_runs_at_zero_cost(ring, ring_synthesis):
    res = ring_synthesis
    assert res.status == TrajectoryStatus.APPROACHED_TARGET
    assert res.total_cost == 0.0  # the running cost vanishes on the ring
    assert res.total_cost <= res.cost_bound
    assert res.trajectory.d[-1] < 1e-3
    # the trajectory leaves through the outer circle, not the inner one
    rho_end = float(np.hypot(*res.trajectory.states[-1]))
    assert rho_end > 3.9


def test_start_inside_collar_returns_trivial_trajectory(mt):
    cfg = SynthesisConfig()
    res = synthesize(
        mt.ex.system, mt.ex.target, mt.ex.mrf, mt.modulus,
        np.array([1e-6]), cfg, sigma=mt.sigma,
    )
    assert res.status == TrajectoryStatus.APPROACHED_TARGET
    assert res.trajectory.n_nodes == 1
    assert res.total_cost == 0.0
    assert res.legs == []


def test_start_above_band_is_rejected(mt):
    cfg = SynthesisConfig()
    with pytest.raises(ConfigError, match="band top"):
        synthesize(
            mt.ex.system, mt.ex.target, mt.ex.mrf, mt.modulus,
            np.array([1.6]), cfg, sigma=mt.sigma,
        )


def test_start_with_nonpositive_value_is_rejected(mt):
    # log-shaped candidate: U < 0 on (0, 1), so certification would fail;
    # synthesis refuses such a start outright
    ex = power_law(r=0.0, s=-1.0)
    cfg = SynthesisConfig()
    with pytest.raises(ConfigError, match="positive definite"):
        synthesize(ex.system, ex.target, ex.mrf, mt.modulus, np.array([0.5]), cfg)


def test_truncation_when_levels_run_out(mt):
    cfg = SynthesisConfig(max_levels=1, d_tol=1e-6)
    res = synthesize(
        mt.ex.system, mt.ex.target, mt.ex.mrf, mt.modulus,
        np.array([1.0]), cfg, sigma=mt.sigma,
    )
    assert res.status == TrajectoryStatus.TRUNCATED
    assert res.trajectory.u[-1] == pytest.approx(0.5, abs=1e-6)


# ----------------------------------------------------------------------
# envelopes


def _sandwich(ns, kl_ns):
    X = ns.grid.points()
    U = ns.ex.mrf.u_batch(X)
    if ns.ex.target.batch_distance is not None:
        D = np.asarray(ns.ex.target.batch_distance(X), dtype=float)
    else:
        D = np.array([ns.ex.target.d(x) for x in X])
    sel = np.isfinite(U) & (U >= 0.0) & (U <= ns.sigma)
    off = D > 1e-12
    sm, sp = kl_ns.sigma_minus, kl_ns.sigma_plus
    lower_ok = sm(U[sel & off]) <= D[sel & off] + 1e-12
    upper_ok = D[sel] <= sp(U[sel]) + 1e-12
    return bool(np.all(lower_ok)), bool(np.all(upper_ok)), sm, sp


def test_envelopes_sandwich_minimum_time(mt, mt_kl):
    lower_ok, upper_ok, sm, sp = _sandwich(mt, mt_kl)
    assert lower_ok and upper_ok
    assert sm.is_strictly_increasing
    assert sp.is_strictly_increasing
    assert sm(0.0) == 0.0
    assert sp(0.0) == 0.0


def test_envelopes_sandwich_ring(ring, ring_kl):
    lower_ok, upper_ok, _, _ = _sandwich(ring, ring_kl)
    assert lower_ok and upper_ok


def test_envelope_requires_gridspec(mt):
    with pytest.raises(ConfigError):
        build_sigma_envelopes(mt.ex.mrf, mt.ex.target, mt.sigma, "not a grid")


# ----------------------------------------------------------------------
# composed decay bound


def test_kl_axioms_minimum_time(mt_kl):
    axioms = mt_kl.kl.validate_axioms(n_lattice=50)
    assert axioms["passed"], axioms


def test_kl_bound_decays_along_sections(mt_kl):
    kl = mt_kl.kl
    r = 0.8
    assert kl.beta(0.0, 0.0) == 0.0
    assert kl.beta(-1.0, 5.0) == 0.0
    b0 = kl.beta(r, 0.0)
    b1 = kl.beta(r, 10.0)
    b2 = kl.beta(r, 1e12)
    assert b0 >= b1 >= b2 >= 0.0
    assert b2 < 1e-3
    assert kl.beta(r, 0.0) >= r  # upper envelope dominates the start


def test_kl_bound_rejects_flat_envelopes(mt, mt_kl):
    flat = MonotonePL(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 1.0]))
    with pytest.raises(ValueError, match="strictly increasing"):
        build_kl_bound(flat, mt_kl.sigma_plus, mt.modulus, epsilon=0.1)


def test_kl_bound_serializes(mt_kl):
    blob = mt_kl.kl.to_dict()
    assert set(blob) == {"epsilon", "sigma_minus_knots", "sigma_plus_knots", "m_tilde_knots"}
    xs, ys = blob["m_tilde_knots"]
    assert len(xs) == len(ys)


def test_decay_bound_holds_along_synthesis(mt_synthesis, mt_kl):
    rep = verify_kl(mt_synthesis.trajectory, mt_kl.kl)
    assert rep.passed, rep.to_dict()
    assert rep.n_nodes == mt_synthesis.trajectory.n_nodes
    assert rep.worst_slack <= rep.tol
