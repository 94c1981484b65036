"""Finite-difference Dirichlet operator A = Δ - V on (0, ℓ) and its spectral calculus.

States are plain float arrays of nodal values at the ``n`` interior nodes.
All norms and inner products are h-weighted, ``<u, v> = h * sum(u * v)``, so
they approximate L² quantities.  Because the eigenmodes are orthonormal in
that product, the coefficient vector ``c_j = <u, ξ_j>`` carries the same norm
as ``u`` in plain Euclidean terms; most of the heavy lifting downstream is
therefore done on coefficient vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ConfigurationError, DomainError, NumericalError

__all__ = [
    "Grid1D",
    "PotentialField",
    "SpectralDecomposition",
    "SubdomainMask",
    "TridiagonalOperator",
    "assemble_operator",
    "eigendecompose",
    "spectral_problem",
    "propagate",
    "restrict",
    "extend",
    "project_high",
    "inner",
    "norm",
    "inner_on",
    "norm_on",
]


@dataclass(frozen=True)
class Grid1D:
    n: int
    length: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ConfigurationError(f"grid needs n >= 2 interior points, got {self.n!r}")
        if not self.length > 0:
            raise ConfigurationError(f"domain length must be positive, got {self.length!r}")

    @property
    def h(self) -> float:
        return self.length / (self.n + 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.h * np.arange(1, self.n + 1)


@dataclass(frozen=True)
class PotentialField:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ConfigurationError("potential must be a 1-D array of nodal values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid1D, c: float) -> "PotentialField":
        return cls(np.full(grid.n, float(c)))

    @classmethod
    def piecewise(cls, grid: Grid1D, pieces) -> "PotentialField":
        """Build V from ``[(a, b, value), ...]``; nodes in no piece get 0."""
        v = np.zeros(grid.n)
        x = grid.nodes
        for a, b, value in pieces:
            v[(x > a) & (x < b)] = value
        return cls(v)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass(frozen=True)
class TridiagonalOperator:
    """Symmetric tridiagonal matrix stored by its bands (this is -A, not A)."""

    diag: np.ndarray
    offdiag: np.ndarray
    grid: Grid1D

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)

    def __matmul__(self, u):
        u = np.asarray(u, dtype=float)
        out = self.diag * u
        out[:-1] += self.offdiag * u[1:]
        out[1:] += self.offdiag * u[:-1]
        return out


def assemble_operator(grid: Grid1D, V: PotentialField) -> TridiagonalOperator:
    """Three-point stencil for -A = -Δ + V with homogeneous Dirichlet data."""
    if V.values.shape != (grid.n,):
        raise ConfigurationError(
            f"potential has {V.values.size} values but the grid has {grid.n} nodes"
        )
    h2 = grid.h**2
    diag = 2.0 / h2 + V.values
    offdiag = np.full(grid.n - 1, -1.0 / h2)
    return TridiagonalOperator(diag, offdiag, grid)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of -A.  ``modes[:, j]`` holds the nodal values of ξ_{j+1}."""

    lambdas: np.ndarray
    modes: np.ndarray
    grid: Grid1D
    V_norm: float = 0.0

    def __post_init__(self):
        for arr in (self.lambdas, self.modes):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def m_nonpos(self) -> int:
        return int(np.count_nonzero(self.lambdas <= 0))

    def mode(self, j: int) -> np.ndarray:
        """Nodal values of ξ_j, 1-based as in the usual eigenvalue ordering."""
        if not 1 <= j <= self.n:
            raise DomainError(f"mode index {j} outside 1..{self.n}")
        return self.modes[:, j - 1].copy()

    def coefficients(self, u) -> np.ndarray:
        """Spectral coefficients <u, ξ_j> for j = 1..n."""
        return self.h * (self.modes.T @ np.asarray(u, dtype=float))

    def synthesize(self, c) -> np.ndarray:
        """Nodal values of sum_j c_j ξ_j (``c`` may be shorter than n)."""
        c = np.asarray(c, dtype=float)
        return self.modes[:, : c.shape[0]] @ c

    def decay(self, t: float, dim: int | None = None) -> np.ndarray:
        """Diagonal of e^{tA} in the eigenbasis: exp(-λ_j t)."""
        lam = self.lambdas if dim is None else self.lambdas[:dim]
        return np.exp(-lam * t)

    def restricted_propagator(self, mask: "SubdomainMask", t: float, dim: int | None = None) -> np.ndarray:
        """Matrix taking coefficients c to the h-scaled restriction of e^{tA}u.

        With ``M = restricted_propagator(mask, t)`` one has
        ``||1_ω^* e^{tA} u||_ω = ||M c||`` and ``G = M.T @ M`` is the Gramian
        e^{tA} χ_ω e^{tA} written in the eigenbasis.
        """
        d = self.n if dim is None else dim
        return np.sqrt(self.h) * self.modes[mask.index_set, :d] * self.decay(t, d)

    def restricted_modes(self, mask: "SubdomainMask", dim: int | None = None) -> np.ndarray:
        d = self.n if dim is None else dim
        return self.modes[mask.index_set, :d]


def eigendecompose(op: TridiagonalOperator, V_norm: float = 0.0) -> SpectralDecomposition:
    """Ascending eigenpairs, modes h-orthonormal with a positive leading entry."""
    try:
        lam, vecs = eigh_tridiagonal(op.diag, op.offdiag, lapack_driver="stemr")
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure path
        raise NumericalError(f"tridiagonal eigensolver did not converge: {exc}") from exc
    h = op.grid.h
    vecs = vecs / np.sqrt(h)
    # first entry above roundoff decides the sign
    tol = 1e-12 * np.max(np.abs(vecs), axis=0)
    lead = np.argmax(np.abs(vecs) > tol, axis=0)
    signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
    vecs = vecs * signs
    return SpectralDecomposition(np.asarray(lam), np.ascontiguousarray(vecs), op.grid, V_norm)


def spectral_problem(n: int, length: float, potential=0.0) -> SpectralDecomposition:
    """Grid + potential + eigensolve in one call.

    ``potential`` is a constant, an array of nodal values, or a list of
    ``(a, b, value)`` pieces.
    """
    grid = Grid1D(n, length)
    if isinstance(potential, PotentialField):
        V = potential
    elif np.isscalar(potential):
        V = PotentialField.constant(grid, potential)
    else:
        arr = np.asarray(potential, dtype=float)
        V = PotentialField(arr) if arr.ndim == 1 else PotentialField.piecewise(grid, potential)
    return eigendecompose(assemble_operator(grid, V), V_norm=V.sup_norm)


def propagate(decomp: SpectralDecomposition, z, t: float) -> np.ndarray:
    """e^{tA} z = sum_j exp(-λ_j t) <z, ξ_j> ξ_j."""
    if t < 0:
        raise DomainError(f"propagation time must be nonnegative, got {t}")
    return decomp.synthesize(decomp.decay(t) * decomp.coefficients(z))


@dataclass(frozen=True)
class SubdomainMask:
    """Observation/control window ω = (a, b) and the interior nodes it covers."""

    a: float
    b: float
    grid: Grid1D
    name: str = "omega"
    index_set: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 <= self.a < self.b <= self.grid.length):
            raise ConfigurationError(
                f"mask {self.name}: interval ({self.a}, {self.b}) is not inside (0, {self.grid.length})"
            )
        x = self.grid.nodes
        idx = np.flatnonzero((x > self.a) & (x < self.b))
        if idx.size == 0:
            raise ConfigurationError(f"mask {self.name}: interval ({self.a}, {self.b}) contains no grid node")
        idx.setflags(write=False)
        object.__setattr__(self, "index_set", idx)

    @classmethod
    def full(cls, grid: Grid1D, name: str = "omega") -> "SubdomainMask":
        return cls(0.0, grid.length, grid, name)

    @property
    def size(self) -> int:
        return int(self.index_set.size)

    @property
    def indicator(self) -> np.ndarray:
        chi = np.zeros(self.grid.n)
        chi[self.index_set] = 1.0
        return chi


def restrict(mask: SubdomainMask, u) -> np.ndarray:
    """1_ω^*: read the nodal values inside ω."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mask.grid.n,):
        raise ConfigurationError(f"state of length {u.size} does not match grid size {mask.grid.n}")
    return u[mask.index_set].copy()


def extend(mask: SubdomainMask, f) -> np.ndarray:
    """1_ω: zero extension of a function on ω to the whole grid."""
    f = np.asarray(f, dtype=float)
    if f.shape != (mask.size,):
        raise ConfigurationError(f"{mask.name} holds {mask.size} nodes, got an array of length {f.size}")
    u = np.zeros(mask.grid.n)
    u[mask.index_set] = f
    return u


def project_high(decomp: SpectralDecomposition, u, K: int) -> np.ndarray:
    """Orthogonal projection onto span{ξ_{K+1}, ..., ξ_n}."""
    if not 0 <= K <= decomp.n:
        raise DomainError(f"K={K} outside 0..{decomp.n}")
    c = decomp.coefficients(u)
    c[:K] = 0.0
    return decomp.synthesize(c)


def inner(h: float, u, v) -> float:
    return float(h * np.dot(u, v))


def norm(h: float, u) -> float:
    return float(np.sqrt(h) * np.linalg.norm(u))


# on a subdomain the weight is the same mesh width
inner_on = inner
norm_on = norm
