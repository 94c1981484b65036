"""Recover leading spectral coefficients of an initial state from one later snapshot.

For a free solution φ on [T1, T3] and the minimal-norm eigencontrol g_j that
steers ξ_j into the eps-ball (impulse at T2 on ω₁), testing the controlled
equation against the time-reversed φ gives

    <y_j(T3), φ(T1)> = <ξ_j, φ(T3)> + <g_j, 1_{ω₁}^* φ(T1 + T3 - T2)>_{ω₁}.

Since <ξ_j, φ(T3)> = exp(-(T3-T1)λ_j) a_j with a_j = <φ(T1), ξ_j>, the estimate

    â_j = -exp((T3-T1)λ_j) <g_j, 1_{ω₁}^* φ(T1 + T3 - T2)>_{ω₁}

is off by at most exp((T3-T1)λ_j) eps ||φ(T1)||.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .impulse_control import ControlResult, eigencontrol
from .spectral_core import SpectralDecomposition, SubdomainMask, propagate, restrict

__all__ = ["ReconstructionReport", "sensor_controls", "estimate_coefficients", "reconstruct"]


@dataclass
class ReconstructionReport:
    K: int
    true_coeffs: np.ndarray
    estimates: np.ndarray
    bounds: np.ndarray
    errors: np.ndarray
    passed: np.ndarray
    uninformative: np.ndarray
    duality_defect: np.ndarray
    phi_norm: float
    controls: list

    @property
    def all_pass(self) -> bool:
        return bool(np.all(self.passed))

    def rows(self):
        for j in range(self.K):
            yield {
                "mode": j + 1,
                "a": float(self.true_coeffs[j]),
                "a_hat": float(self.estimates[j]),
                "error": float(self.errors[j]),
                "bound": float(self.bounds[j]),
                "status": "uninformative" if self.uninformative[j] else ("pass" if self.passed[j] else "fail"),
                "duality_defect": float(self.duality_defect[j]),
            }


def sensor_controls(decomp: SpectralDecomposition, mask: SubdomainMask, T1, T2, T3, eps, K) -> list[ControlResult]:
    if not 1 <= K <= decomp.n:
        raise ConfigurationError(f"K={K} exceeds the {decomp.n} modes resolved by the grid")
    return [eigencontrol(decomp, mask, j, eps, T1, T2, T3) for j in range(1, K + 1)]


def estimate_coefficients(h: float, lambdas, sensors, snapshot, horizon: float) -> np.ndarray:
    """â_j = -exp(horizon λ_j) <g_j, snapshot>_ω for each sensor g_j.

    ``snapshot`` is the restricted state 1_ω^* φ at the single observation
    time; nothing else about φ is consulted.
    """
    sensors = np.atleast_2d(np.asarray(sensors, dtype=float))
    lam = np.asarray(lambdas, dtype=float)[: sensors.shape[0]]
    return -np.exp(horizon * lam) * (h * (sensors @ np.asarray(snapshot, dtype=float)))


def reconstruct(
    decomp: SpectralDecomposition,
    mask_w1: SubdomainMask,
    phi_T1,
    T1: float,
    T2: float,
    T3: float,
    eps: float,
    K: int,
    controls: list[ControlResult] | None = None,
) -> ReconstructionReport:
    """Estimate a_1..a_K of ``phi_T1`` from 1_{ω₁}^* φ(T1 + T3 - T2) and grade each estimate."""
    if not 0 <= T1 < T2 < T3:
        raise ConfigurationError(f"need 0 <= T1 < T2 < T3, got ({T1}, {T2}, {T3})")
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    if controls is None:
        controls = sensor_controls(decomp, mask_w1, T1, T2, T3, eps, K)
    elif len(controls) != K:
        raise ConfigurationError(f"{len(controls)} sensor controls supplied for K={K}")
    phi = np.asarray(phi_T1, dtype=float)
    horizon = T3 - T1
    h = decomp.h

    snapshot = restrict(mask_w1, propagate(decomp, phi, T3 - T2))
    sensors = np.array([c.f for c in controls])
    a_hat = estimate_coefficients(h, decomp.lambdas, sensors, snapshot, horizon)

    a = decomp.coefficients(phi)[:K]
    phi_norm = float(math.sqrt(h) * np.linalg.norm(phi))
    amp = np.exp(horizon * decomp.lambdas[:K])
    bounds = amp * eps * phi_norm
    errors = np.abs(a - a_hat)
    passed = errors <= bounds * (1 + 1e-9) + 1e-14 * amp * max(phi_norm, 1.0)
    uninformative = bounds > phi_norm

    # both sides of the pairing identity from independent forward runs
    phi_T3 = propagate(decomp, phi, horizon)
    defect = np.empty(K)
    for j, c in enumerate(controls):
        lhs = h * np.dot(c.terminal, phi)
        free_part = h * np.dot(decomp.modes[:, j], phi_T3)
        observed_part = h * np.dot(c.f, snapshot)
        # the two right-hand terms nearly cancel; measure against the largest term
        scale = max(abs(lhs), abs(free_part), abs(observed_part), 1e-300)
        defect[j] = abs(lhs - free_part - observed_part) / scale
    return ReconstructionReport(K, a, a_hat, bounds, errors, passed, uninformative, defect, phi_norm, controls)
