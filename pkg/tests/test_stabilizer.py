import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from impulse_lab.errors import ConfigurationError
from impulse_lab.spectral_core import assemble_operator, Grid1D, PotentialField, SubdomainMask, restrict, extend
from impulse_lab.stabilizer import (
    ClosedLoopConfig,
    FeedbackOperator,
    build_feedback,
    closing_identities,
    compute_eps,
    compute_K,
    decay_report,
    feedback_sweep,
    simulate_closed_loop,
)

from conftest import hnorm, span_state


def test_compute_K(d0, dneg):
    assert compute_K(d0, 5.0, 1.0) == 2
    assert compute_K(d0, 1e-9, 1.0) == 0
    assert compute_K(dneg, 1.0, 1.0) == 1
    assert compute_K(d0, 2.0, 1.0) == 1
    assert compute_K(dneg, 2.0, 1.0) == 2


def test_compute_eps():
    assert abs(compute_eps(2, 4.0, 5.0, 1.0, 0.0) - math.exp(-7) / 18) <= 1e-18
    assert abs(compute_eps(2, 4.0, 5.0, 1.0, 0.0) - 5.0675e-5) <= 1e-3 * 5.0675e-5
    a = compute_eps(3, 2.0, 1.0, 1.0, 0.5)
    b = compute_eps(3, 2.0, 2.0, 1.0, 0.5)
    assert abs(b / a - math.exp(-1.0)) <= 1e-14
    assert compute_eps(0, None, 1.0, 1.0, 0.0) is None


@pytest.fixture(scope="module")
def F1(d0, w1, w2):
    return build_feedback(d0, w1, w2, 2.0, 1.0)


def test_feedback_structure(F1, d0):
    lam1 = F1.lambdas[0]
    assert F1.K == 1 and abs(F1.eps - math.exp(-2 - lam1 / 2) / 12) <= 1e-15
    assert abs(F1.eps - math.exp(-2.5) / 12) <= 1e-4 * F1.eps
    assert not np.any(F1(np.zeros(F1.mask_w1.size)))
    assert F1.op_norm <= F1.product_bound() * (1 + 1e-12)
    assert F1.op_norm <= F1.max_bound() * (1 + 1e-12)


def test_op_norm_is_exact(dneg):
    w1 = SubdomainMask(0.9, 1.5, dneg.grid)
    w2 = SubdomainMask(1.8, 2.4, dneg.grid)
    F = build_feedback(dneg, w1, w2, 2.0, 1.0)
    # dense matrix of F between h-weighted spaces
    cols = [F(e) for e in np.eye(w1.size)]
    D = np.array(cols).T
    dense_norm = np.linalg.norm(D, 2)  # the sqrt(h) weights on both sides cancel
    assert abs(F.op_norm - dense_norm) <= 1e-10 * dense_norm


@settings(max_examples=20, deadline=None)
@given(alpha=st.floats(-10, 10), seed=st.integers(0, 2**32 - 1))
def test_feedback_linear(F1, alpha, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.standard_normal((2, F1.mask_w1.size))
    lhs = F1(alpha * p + q)
    rhs = alpha * F1(p) + F1(q)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * (abs(alpha) * np.linalg.norm(F1(p)) + np.linalg.norm(F1(q)) + 1e-300)


def test_K_zero_feedback(d0, w1, w2, rng):
    F = build_feedback(d0, w1, w2, 0.3, 1.0)
    assert F.K == 0 and F.op_norm == 0.0 and F.eps is None
    y0 = rng.standard_normal(d0.n)
    traj = simulate_closed_loop(d0, F, ClosedLoopConfig(0.3, 1.0, w1, w2, y0, 4))
    assert np.all(traj.control_norms == 0)
    rep = decay_report(traj)
    assert rep.passed
    assert np.all(traj.ratios <= math.exp(-d0.lambdas[0] * 1.0) * (1 + 1e-9))


def test_zero_initial_state(d0, w1, w2, F1):
    traj = simulate_closed_loop(d0, F1, ClosedLoopConfig(2.0, 1.0, w1, w2, np.zeros(d0.n), 3))
    assert not np.any(traj.states) and not np.any(traj.norms)


def test_free_decay_without_feedback(d0, w1, w2, rng):
    F = FeedbackOperator(0, None, 2.0, 1.0, np.zeros(0), np.zeros((0, w1.size)), np.zeros((0, w2.size)), w1, w2, 0.0)
    y0 = rng.standard_normal(d0.n)
    traj = simulate_closed_loop(d0, F, ClosedLoopConfig(2.0, 1.0, w1, w2, y0, 2, 3))
    c0 = d0.coefficients(y0)
    for t, nrm in zip(traj.times, traj.norms):
        assert abs(nrm - np.linalg.norm(np.exp(-d0.lambdas * t) * c0)) <= 1e-12 * hnorm(d0, y0)


def test_one_period_against_expm():
    # dense exponential of the assembled operator: independent of the eigensolver
    from impulse_lab.spectral_core import eigendecompose

    g = Grid1D(60, math.pi)
    op = assemble_operator(g, PotentialField.constant(g, -2.0))
    d = eigendecompose(op, 2.0)
    w1, w2 = SubdomainMask(0.9, 1.5, g), SubdomainMask(1.8, 2.4, g)
    F = build_feedback(d, w1, w2, 2.0, 1.0)
    T = 1.0
    rng = np.random.default_rng(5)
    c = np.zeros(d.n)
    c[:2] = rng.standard_normal(2)
    y0 = d.synthesize(c)
    Aneg = op.dense()
    E = lambda t: expm(-t * Aneg)
    u = E(T / 4) @ y0
    free = E(3 * T / 4) @ u
    jump = extend(w2, F(restrict(w1, E(T / 4) @ u)))
    expected = E(T / 4) @ (free + jump)
    traj = simulate_closed_loop(d, F, ClosedLoopConfig(2.0, T, w1, w2, y0, 1))
    # the two pieces nearly cancel, so compare against their size
    scale = max(np.linalg.norm(free), np.linalg.norm(jump))
    assert np.linalg.norm(traj.L_states[1] - expected) <= 1e-9 * scale


@pytest.mark.parametrize("V", [0.0, -2.0])
def test_closed_loop_contracts(V, d0, dneg, rng):
    d = d0 if V == 0 else dneg
    w1, w2 = SubdomainMask(0.9, 1.5, d.grid), SubdomainMask(1.8, 2.4, d.grid)
    F = build_feedback(d, w1, w2, 2.0, 1.0)
    traj = simulate_closed_loop(d, F, ClosedLoopConfig(2.0, 1.0, w1, w2, rng.standard_normal(d.n), 6, 16))
    rep = decay_report(traj)
    assert rep.contraction_ok and rep.ledger_ok and rep.envelope_ok and rep.closing_ok
    assert np.max(traj.jump_defects()) <= 1e-12
    assert max(r["split_defect"] for r in rep.period_rows) <= 1e-12
    assert len(traj.times) == 6 * (4 + 16)
    assert np.all(np.diff(traj.times) >= 0)


def test_observation_locality(d0, w1, w2, F1, rng):
    traj = simulate_closed_loop(d0, F1, ClosedLoopConfig(2.0, 1.0, w1, w2, rng.standard_normal(d0.n), 2))
    mid = traj.states[traj.labels.index("mid")]
    scrambled = rng.standard_normal(d0.n) * 1e3
    scrambled[w1.index_set] = mid[w1.index_set]
    assert np.array_equal(traj.control_event(scrambled), traj.periods[0]["control"])


@pytest.mark.parametrize("gamma,T", [(2.0, 1.0), (5.0, 1.0), (3.0, 0.5), (10.0, 0.3)])
def test_closing_identities_formula(d0, gamma, T):
    K = compute_K(d0, gamma, T)
    eps = compute_eps(K, d0.lambdas[K - 1], gamma, T, d0.V_norm)
    tail, ok, term, rel = closing_identities(d0, K, eps, gamma, T)
    assert ok and rel <= 1e-12


def test_config_validation(d0, w1, w2):
    with pytest.raises(ConfigurationError):
        ClosedLoopConfig(0.0, 1.0, w1, w2, np.zeros(d0.n), 1)
    with pytest.raises(ConfigurationError):
        ClosedLoopConfig(1.0, 1.0, w1, w2, np.zeros(d0.n), 0)


def test_sweep_reports_growth(d0, w1, w2):
    rows = feedback_sweep(d0, w1, w2, [1.0, 2.0, 4.0], 1.0)
    assert [r["K"] for r in rows] == [1, 1, 2]
    assert rows[-1]["inv_eps"] > rows[0]["inv_eps"]
    assert all(r["op_norm"] <= r["product_bound"] * (1 + 1e-12) for r in rows)
