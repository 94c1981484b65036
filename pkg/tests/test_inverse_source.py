import math

import numpy as np
import pytest

from impulse_lab.errors import ConfigurationError
from impulse_lab.inverse_source import estimate_coefficients, reconstruct, sensor_controls
from impulse_lab.spectral_core import SubdomainMask

from conftest import span_state

TIMES = (0.0, 0.25, 0.5)


def test_zero_state(d0, w1):
    rep = reconstruct(d0, w1, np.zeros(d0.n), *TIMES, 1e-3, 3)
    assert not np.any(rep.estimates) and not np.any(rep.bounds)
    assert rep.all_pass


def test_first_mode(d0, w1):
    rep = reconstruct(d0, w1, d0.mode(1), *TIMES, 1e-3, 2)
    assert rep.all_pass
    assert rep.errors[0] <= math.exp(d0.lambdas[0] / 2) * 1e-3 * (1 + 1e-9)
    assert rep.errors[1] <= math.exp(d0.lambdas[1] / 2) * 1e-3 * (1 + 1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_random_low_mode_state(d0, w1, seed):
    phi = span_state(d0, np.random.default_rng(seed), 3)
    rep = reconstruct(d0, w1, phi, *TIMES, 1e-3, 3)
    assert rep.all_pass
    assert np.all(rep.duality_defect <= 1e-10)


def test_full_domain_tiny_eps(d0):
    full = SubdomainMask.full(d0.grid)
    phi = span_state(d0, np.random.default_rng(3), 4)
    rep = reconstruct(d0, full, phi, *TIMES, 1e-8, 4)
    assert rep.all_pass
    # amplification e^{λ_j/2} still dominates for the 4th mode
    assert np.max(rep.errors[:3]) <= 1e-6 * rep.phi_norm


def test_linearity(d0, w1, rng):
    ctrls = sensor_controls(d0, w1, *TIMES, 1e-3, 3)
    phi, psi = rng.standard_normal(d0.n), rng.standard_normal(d0.n)
    a = reconstruct(d0, w1, phi, *TIMES, 1e-3, 3, controls=ctrls).estimates
    b = reconstruct(d0, w1, psi, *TIMES, 1e-3, 3, controls=ctrls).estimates
    c = reconstruct(d0, w1, 2.5 * phi + psi, *TIMES, 1e-3, 3, controls=ctrls).estimates
    assert np.allclose(c, 2.5 * a + b, rtol=1e-12, atol=1e-12 * np.abs(c).max())


def test_estimator_uses_snapshot_only(d0, w1):
    ctrls = sensor_controls(d0, w1, *TIMES, 1e-3, 2)
    snap = np.ones(w1.size)
    est = estimate_coefficients(d0.h, d0.lambdas, [c.f for c in ctrls], snap, 0.5)
    manual = [-math.exp(0.5 * d0.lambdas[j]) * d0.h * np.dot(ctrls[j].f, snap) for j in range(2)]
    assert np.allclose(est, manual, rtol=1e-14)


def test_uninformative_flag(d0, w1):
    phi = span_state(d0, np.random.default_rng(1), 3)
    rep = reconstruct(d0, w1, phi, *TIMES, 1e-3, 12)
    assert rep.uninformative[-1] and not rep.uninformative[0]
    statuses = {r["status"] for r in rep.rows()}
    assert "fail" not in statuses


def test_bad_K(d0, w1):
    with pytest.raises(ConfigurationError):
        reconstruct(d0, w1, np.zeros(d0.n), *TIMES, 1e-3, d0.n + 1)
