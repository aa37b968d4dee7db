"""Ensemble statistics: sample moments, spectral diagonals, tapering, sampling.

An ensemble is an ``(n, N)`` array whose columns are the members.  All
covariances use the unbiased ``N - 1`` divisor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DENSE = 4096


class EnsembleError(ValueError):
    pass


def as_ensemble(E, min_members: int = 2) -> np.ndarray:
    E = np.asarray(E, dtype=float)
    if E.ndim != 2:
        raise EnsembleError(f"ensemble must be (n, N), got shape {E.shape}")
    if E.shape[1] < min_members:
        raise EnsembleError(f"need at least {min_members} members, got {E.shape[1]}")
    if not np.all(np.isfinite(E)):
        raise EnsembleError("ensemble contains non-finite values")
    return E


def sample_mean(E) -> np.ndarray:
    E = as_ensemble(E, min_members=1)
    return E.mean(axis=1)


def anomalies(E) -> np.ndarray:
    """Deviations of each member from the ensemble mean."""
    E = as_ensemble(E, min_members=1)
    return E - E.mean(axis=1, keepdims=True)


def sample_covariance(E, max_size: int = MAX_DENSE) -> np.ndarray:
    E = as_ensemble(E)
    if E.shape[0] > max_size:
        raise EnsembleError(f"dense covariance of size {E.shape[0]} exceeds guard {max_size}")
    A = anomalies(E)
    C = A @ A.T / (E.shape[1] - 1)
    return (C + C.T) / 2


def spectral_diagonal(EF) -> np.ndarray:
    """Per-row sample variances of a transformed ensemble (the diagonal of its
    sample covariance), computed without forming the full matrix."""
    EF = as_ensemble(EF)
    A = anomalies(EF)
    return np.einsum("ij,ij->i", A, A) / (EF.shape[1] - 1)


def cross_diagonals(EF, nvars: int) -> np.ndarray:
    """Diagonals of the spectral sample cross-covariances between variables.

    Returns an array ``D`` of shape ``(nvars, nvars, n)`` where ``D[i, j, k]`` is
    the sample covariance of mode ``k`` of variable ``i`` with mode ``k`` of
    variable ``j``.
    """
    EF = as_ensemble(EF)
    if nvars < 1 or EF.shape[0] % nvars:
        raise EnsembleError(f"state size {EF.shape[0]} is not divisible by {nvars} variables")
    A = anomalies(EF).reshape(nvars, EF.shape[0] // nvars, EF.shape[1])
    return np.einsum("ikl,jkl->ijk", A, A) / (EF.shape[1] - 1)


@dataclass(frozen=True)
class TaperSpec:
    """Separable exponential taper with a constant cross-variable multiplier."""

    block_scale: float = 0.9
    decay: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.block_scale <= 1.0:
            raise EnsembleError("block_scale must lie in [0, 1]")
        decay = tuple(float(d) for d in np.broadcast_to(self.decay, (2,)))
        if min(decay) < 0:
            raise EnsembleError("decay rates must be nonnegative")
        object.__setattr__(self, "decay", decay)


def _axis_taper(n: int, rate: float) -> np.ndarray:
    i = np.arange(n)
    return np.exp(-rate * np.abs(i[:, None] - i[None, :]))


def _variable_taper(nvars: int, block_scale: float) -> np.ndarray:
    return np.full((nvars, nvars), block_scale) + (1.0 - block_scale) * np.eye(nvars)


def grid_taper(grid: tuple[int, int], spec: TaperSpec) -> np.ndarray:
    """``A[a, b] = exp(-r_x |i_a - i_b|) exp(-r_y |j_a - j_b|)`` on a row-major grid."""
    nx, ny = grid
    return np.kron(_axis_taper(nx, spec.decay[0]), _axis_taper(ny, spec.decay[1]))


def taper_matrix(spec: TaperSpec, grid: tuple[int, int], nvars: int) -> np.ndarray:
    return np.kron(_variable_taper(nvars, spec.block_scale), grid_taper(grid, spec))


def taper_covariance(C, spec: TaperSpec, grid: tuple[int, int], nvars: int) -> np.ndarray:
    """Schur product of ``C`` with the block taper (``A`` within a variable,
    ``block_scale * A`` between variables)."""
    C = np.asarray(C, dtype=float)
    n = nvars * grid[0] * grid[1]
    if C.shape != (n, n):
        raise EnsembleError(f"covariance shape {C.shape} does not match {nvars} x {grid}")
    return C * taper_matrix(spec, grid, nvars)


def covariance_sqrt(B, tol: float = 1e-8) -> np.ndarray:
    """Symmetric square root ``S`` with ``S @ S.T == B``; small negative
    eigenvalues (down to ``-tol * ||B||``) are clamped to zero."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise EnsembleError("covariance must be square")
    scale = np.abs(B).max() if B.size else 0.0
    if scale == 0.0:
        return np.zeros_like(B)
    if np.abs(B - B.T).max() > tol * scale:
        raise EnsembleError("covariance is not symmetric")
    w, V = np.linalg.eigh((B + B.T) / 2)
    if w.min() < -tol * max(scale, w.max()):
        raise EnsembleError(f"covariance is indefinite (min eigenvalue {w.min():.3g})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_gaussian_perturbations(B, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent draws from ``N(0, B)`` as an ``(n, count)`` array."""
    S = covariance_sqrt(B)
    return S @ rng.standard_normal((S.shape[1], count))


class TaperedSampler:
    """Streaming sampler for ``N(0, C_S o T)``.

    ``C_S`` is the sample covariance of snapshots fed one at a time through
    :meth:`add`, and ``T`` is the taper of :func:`taper_matrix`.  Neither matrix is
    formed, and snapshots need not be stored.  Uses ``Cov(a o z) = (a a^T) o T`` for
    ``z ~ N(0, T)``, with one independent ``z`` per snapshot.  The snapshot mean is
    removed at the end through
    ``sum_s (s_s - mu) o z_s = sum_s s_s o z_s - mu o sum_s z_s``.
    """

    def __init__(self, spec: TaperSpec, grid: tuple[int, int], nvars: int, count: int,
                 rng: np.random.Generator):
        self.grid, self.nvars, self.count, self.rng = tuple(grid), nvars, count, rng
        self.n = nvars * grid[0] * grid[1]
        self._Lv = covariance_sqrt(_variable_taper(nvars, spec.block_scale))
        self._Lx = covariance_sqrt(_axis_taper(grid[0], spec.decay[0]))
        self._Ly = covariance_sqrt(_axis_taper(grid[1], spec.decay[1]))
        self._weighted = np.zeros((self.n, count))
        self._zsum = np.zeros((self.n, count))
        self._ssum = np.zeros(self.n)
        self.snapshots = 0

    def _taper_draw(self) -> np.ndarray:
        nx, ny = self.grid
        xi = self.rng.standard_normal((self.nvars, nx, ny, self.count))
        z = np.einsum("va,abcn->vbcn", self._Lv, xi)
        z = np.einsum("xb,vbcn->vxcn", self._Lx, z)
        z = np.einsum("yc,vxcn->vxyn", self._Ly, z)
        return z.reshape(self.n, self.count)

    def add(self, snapshot) -> None:
        s = np.asarray(snapshot, dtype=float).reshape(self.n)
        z = self._taper_draw()
        self._weighted += s[:, None] * z
        self._zsum += z
        self._ssum += s
        self.snapshots += 1

    def result(self) -> np.ndarray:
        if self.snapshots < 2:
            raise EnsembleError("need at least two snapshots")
        mu = self._ssum / self.snapshots
        return (self._weighted - mu[:, None] * self._zsum) / np.sqrt(self.snapshots - 1)


def sample_tapered_perturbations(snapshots, spec: TaperSpec, grid: tuple[int, int],
                                 nvars: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` members from ``N(0, C_S o T)``; ``snapshots`` is ``(n, S)``."""
    S = np.asarray(snapshots, dtype=float)
    if S.ndim != 2 or S.shape[0] != nvars * grid[0] * grid[1]:
        raise EnsembleError("snapshot size does not match grid")
    sampler = TaperedSampler(spec, grid, nvars, count, rng)
    for col in S.T:
        sampler.add(col)
    return sampler.result()
