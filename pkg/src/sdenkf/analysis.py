"""Analysis (Bayesian update) kernels.

All kernels take a forecast ensemble ``E`` of shape ``(n_state, N)``, an
observation scenario, the unperturbed data vector ``y`` and return the
analysis ensemble.  Data are perturbed per member inside the kernel
(stochastic EnKF); pass ``perturbations`` explicitly to bypass the random
draw, e.g. zeros for hand-checkable updates.

The multivariate state is the concatenation of ``nvars`` equally sized
variable blocks; the observed variable is block ``variable`` (0 by default).

Kernels
-------
enkf_analysis                 classical EnKF with the full sample covariance
sd_analysis_full_obs          whole state observed, R = c I
sd_analysis_one_var_full      one variable observed everywhere, R = c I
sd_analysis_few_points        one variable observed at k points, arbitrary R
sd_analysis_augmented         one variable observed on an index subset
sd_analysis_dense_reference   literal dense formula, correctness oracle
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .ensemble_stats import anomalies, as_ensemble, cross_diagonals, MAX_DENSE
from .transforms import BlockTransform, as_block, dense_matrix

MAX_POINTS = 512


class AnalysisError(ValueError):
    pass


def _check_variance(c):
    if not np.isfinite(c) or c <= 0:
        raise AnalysisError(f"observation variance must be positive, got {c}")


@dataclass(frozen=True)
class FullState:
    """Every state component observed with noise covariance ``variance * I``."""

    variance: float

    def __post_init__(self):
        _check_variance(self.variance)

    def size(self, n_state: int, nvars: int) -> int:
        return n_state

    def apply(self, E, nvars: int = 1):
        return np.asarray(E)

    def matrices(self, n_state: int, nvars: int = 1):
        return np.eye(n_state), self.variance * np.eye(n_state)


@dataclass(frozen=True)
class OneVariable:
    """Variable block ``variable`` observed everywhere, ``R = variance * I``."""

    variance: float
    variable: int = 0

    def __post_init__(self):
        _check_variance(self.variance)

    def size(self, n_state, nvars):
        return n_state // nvars

    def apply(self, E, nvars=1):
        E = np.asarray(E)
        n = E.shape[0] // nvars
        return E[self.variable * n:(self.variable + 1) * n]

    def matrices(self, n_state, nvars=1):
        n = n_state // nvars
        H = np.zeros((n, n_state))
        H[:, self.variable * n:(self.variable + 1) * n] = np.eye(n)
        return H, self.variance * np.eye(n)


@dataclass(frozen=True, eq=False)
class FewPoints:
    """Variable block ``variable`` observed through a small ``(k, n)`` matrix."""

    H1: np.ndarray
    R: np.ndarray
    variable: int = 0
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        H1 = np.atleast_2d(np.asarray(self.H1, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        k = H1.shape[0]
        if k > MAX_POINTS:
            raise AnalysisError(f"{k} observation points exceed the guard {MAX_POINTS}")
        if R.shape != (k, k):
            raise AnalysisError(f"R has shape {R.shape}, expected {(k, k)}")
        if not np.allclose(R, R.T, rtol=0, atol=1e-12 * np.abs(R).max()):
            raise AnalysisError("R is not symmetric")
        try:
            chol = np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise AnalysisError("R is not positive definite") from None
        object.__setattr__(self, "H1", H1)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def selection(cls, indices, n: int, variance: float, variable: int = 0):
        idx = np.asarray(indices, dtype=int)
        H1 = np.zeros((idx.size, n))
        H1[np.arange(idx.size), idx] = 1.0
        return cls(H1, variance * np.eye(idx.size), variable)

    def size(self, n_state, nvars):
        return self.H1.shape[0]

    def apply(self, E, nvars=1):
        E = np.asarray(E)
        n = E.shape[0] // nvars
        return self.H1 @ E[self.variable * n:(self.variable + 1) * n]

    def matrices(self, n_state, nvars=1):
        n = n_state // nvars
        H = np.zeros((self.H1.shape[0], n_state))
        H[:, self.variable * n:(self.variable + 1) * n] = self.H1
        return H, self.R


@dataclass(frozen=True, eq=False)
class PartialRegion:
    """Variable block ``variable`` observed only at ``indices``, ``R = variance * I``."""

    indices: np.ndarray
    variance: float
    variable: int = 0

    def __post_init__(self):
        _check_variance(self.variance)
        idx = np.unique(np.asarray(self.indices, dtype=int))
        if idx.size == 0:
            raise AnalysisError("observed index set is empty")
        object.__setattr__(self, "indices", idx)

    def size(self, n_state, nvars):
        return self.indices.size

    def apply(self, E, nvars=1):
        E = np.asarray(E)
        n = E.shape[0] // nvars
        return E[self.variable * n:(self.variable + 1) * n][self.indices]

    def matrices(self, n_state, nvars=1):
        n = n_state // nvars
        H = np.zeros((self.indices.size, n_state))
        H[np.arange(self.indices.size), self.variable * n + self.indices] = 1.0
        return H, self.variance * np.eye(self.indices.size)


def _noise_factor(obs):
    """Scalar standard deviation or lower Cholesky factor of R."""
    if isinstance(obs, FewPoints):
        return obs._chol
    return np.sqrt(obs.variance)


def perturb_observations(y, noise, count: int, rng: np.random.Generator) -> np.ndarray:
    """Return ``(k, count)`` perturbed copies ``y + tau_j``, ``tau_j ~ N(0, R)``.

    ``noise`` is either a positive variance ``c`` (``R = c I``) or an SPD
    matrix ``R``.
    """
    y = np.asarray(y, dtype=float)
    z = rng.standard_normal((y.size, count))
    if np.ndim(noise) == 0:
        _check_variance(noise)
        return y[:, None] + np.sqrt(noise) * z
    R = np.asarray(noise, dtype=float)
    try:
        L = np.linalg.cholesky((R + R.T) / 2)
    except np.linalg.LinAlgError:
        raise AnalysisError("R is not positive definite") from None
    return y[:, None] + L @ z


def _perturbed_data(obs, y, k, N, rng, perturbations):
    y = np.asarray(y, dtype=float)
    if y.shape != (k,):
        raise AnalysisError(f"data has shape {y.shape}, expected ({k},)")
    if perturbations is not None:
        tau = np.asarray(perturbations, dtype=float)
        if tau.shape != (k, N):
            raise AnalysisError(f"perturbations have shape {tau.shape}, expected {(k, N)}")
        return y[:, None] + tau
    if rng is None:
        raise AnalysisError("either rng or perturbations is required")
    scale = _noise_factor(obs)
    z = rng.standard_normal((k, N))
    return y[:, None] + (scale @ z if np.ndim(scale) else scale * z)


def _inflate(E, inflation):
    if inflation < 1:
        raise AnalysisError("inflation must be >= 1")
    if inflation == 1:
        return E
    mean = E.mean(axis=1, keepdims=True)
    return mean + inflation * (E - mean)


def _prepare(E, transform, inflation):
    E = _inflate(as_ensemble(E), inflation)
    T = as_block(transform)
    if E.shape[0] != T.size:
        raise AnalysisError(f"state size {E.shape[0]} does not match transform size {T.size}")
    return E, T


def enkf_analysis(E, obs, y, rng=None, *, nvars: int = 1, inflation: float = 1.0,
                  perturbations=None) -> np.ndarray:
    """Stochastic EnKF update with the full ensemble sample covariance.

    ``C H^T (H C H^T + R)^{-1}`` is evaluated from the ensemble anomalies, so the
    ``n x n`` covariance is never formed.  When ``R = c I`` the ``k x k`` inverse
    is replaced by an ``N x N`` one (Woodbury identity).
    """
    E = _inflate(as_ensemble(E), inflation)
    n_state, N = E.shape
    if n_state % nvars:
        raise AnalysisError("state size not divisible by nvars")
    k = obs.size(n_state, nvars)
    Yp = _perturbed_data(obs, y, k, N, rng, perturbations)
    A = anomalies(E)
    HA = obs.apply(A, nvars)
    d = Yp - obs.apply(E, nvars)
    if isinstance(obs, FewPoints):
        S = HA @ HA.T / (N - 1) + obs.R
        w = linalg.solve(S, d, assume_a="pos")
    else:
        c = obs.variance
        small = c * (N - 1) * np.eye(N) + HA.T @ HA
        w = (d - HA @ linalg.solve(small, HA.T @ d, assume_a="pos")) / c
    return E + A @ (HA.T @ w) / (N - 1)


def sd_analysis_full_obs(E, obs: FullState, y, transform, rng=None, *,
                         inflation: float = 1.0, perturbations=None) -> np.ndarray:
    """Whole state observed with ``R = c I``; the update runs in spectral space.

    With a single variable the gain is the diagonal ``d / (d + c)``.  With
    ``m`` variables the spectral covariance is block-diagonal per mode, so each
    mode needs one ``m x m`` solve.
    """
    E, T = _prepare(E, transform, inflation)
    n_state, N = E.shape
    m, n = T.nvars, T.block_size
    Yp = _perturbed_data(obs, y, n_state, N, rng, perturbations)
    D = cross_diagonals(T.forward(E), m)
    innov = T.forward(Yp - E).reshape(m, n, N)
    c = obs.variance
    if m == 1:
        incr = (D[0, 0] / (D[0, 0] + c))[:, None] * innov[0]
    else:
        Dk = np.moveaxis(D, 2, 0)  # (n, m, m)
        w = np.linalg.solve(Dk + c * np.eye(m), np.moveaxis(innov, 1, 0))
        incr = np.moveaxis(Dk @ w, 0, 1)
    return E + T.inverse(incr.reshape(n_state, N))


def _one_var_update(E, T: BlockTransform, Yp, c, variable):
    m, n = T.nvars, T.block_size
    EF = T.forward(E).reshape(m, n, -1)
    A = EF - EF.mean(axis=2, keepdims=True)
    N = E.shape[1]
    # only the column of cross-diagonals against the observed variable is needed
    Dcol = np.einsum("ikl,kl->ik", A, A[variable]) / (N - 1)
    obs_block = E[variable * n:(variable + 1) * n]
    w = T.base.forward(Yp - obs_block) / (Dcol[variable] + c)[:, None]
    incr = Dcol[:, :, None] * w[None]
    return E + T.inverse(incr.reshape(m * n, N))


def sd_analysis_one_var_full(E, obs: OneVariable, y, transform, rng=None, *,
                             inflation: float = 1.0, perturbations=None) -> np.ndarray:
    """One variable observed on the whole grid; the others are corrected through
    the spectral cross-covariance diagonals with the observed variable."""
    E, T = _prepare(E, transform, inflation)
    N = E.shape[1]
    if not 0 <= obs.variable < T.nvars:
        raise AnalysisError("observed variable out of range")
    Yp = _perturbed_data(obs, y, T.block_size, N, rng, perturbations)
    return _one_var_update(E, T, Yp, obs.variance, obs.variable)


def sd_analysis_few_points(E, obs: FewPoints, y, transform, rng=None, *,
                           inflation: float = 1.0, perturbations=None) -> np.ndarray:
    """One variable observed through ``H1`` with ``k`` rows and arbitrary SPD ``R``.

    ``F H1^T`` is built from ``k`` transform applications and the ``k x k`` system
    ``(F H1^T)^T D11 (F H1^T) + R`` is Cholesky-factored once per analysis.
    """
    E, T = _prepare(E, transform, inflation)
    N = E.shape[1]
    m, n = T.nvars, T.block_size
    v = obs.variable
    if obs.H1.shape[1] != n:
        raise AnalysisError(f"H1 has {obs.H1.shape[1]} columns, expected {n}")
    k = obs.H1.shape[0]
    Yp = _perturbed_data(obs, y, k, N, rng, perturbations)
    EF = T.forward(E).reshape(m, n, N)
    A = EF - EF.mean(axis=2, keepdims=True)
    Dcol = np.einsum("ikl,kl->ik", A, A[v]) / (N - 1)
    G = T.base.forward(obs.H1.T)  # (n, k)
    S = G.T @ (Dcol[v][:, None] * G) + obs.R
    S = (S + S.T) / 2
    d = Yp - obs.H1 @ E[v * n:(v + 1) * n]
    W = G @ linalg.cho_solve(linalg.cho_factor(S, lower=True), d)
    incr = Dcol[:, :, None] * W[None]
    return E + T.inverse(incr.reshape(m * n, N))


def augment(E, obs: PartialRegion, y, nvars: int):
    """Prepend the masked copy ``X0`` of the observed variable and pad the data
    with zeros off the observed set."""
    E = np.asarray(E, dtype=float)
    n = E.shape[0] // nvars
    v = obs.variable
    X0 = np.zeros((n, E.shape[1]))
    X0[obs.indices] = E[v * n:(v + 1) * n][obs.indices]
    y_aug = np.zeros(n)
    y_aug[obs.indices] = np.asarray(y, dtype=float)
    return np.vstack([X0, E]), y_aug


def sd_analysis_augmented(E, obs: PartialRegion, y, transform, rng=None, *,
                          inflation: float = 1.0, perturbations=None) -> np.ndarray:
    """One variable observed on an index subset, via a fully observed augmented
    variable.  ``perturbations`` (if given) cover the padded data, shape ``(n, N)``.

    The padded entries are perturbed like the observed ones (variance ``c``).
    """
    E, T = _prepare(E, transform, inflation)
    n = T.block_size
    y = np.asarray(y, dtype=float)
    if y.shape != (obs.indices.size,):
        raise AnalysisError(f"data has shape {y.shape}, expected ({obs.indices.size},)")
    if obs.indices.max() >= n:
        raise AnalysisError("observed index out of range")
    E_aug, y_aug = augment(E, obs, y, T.nvars)
    T_aug = BlockTransform(T.base, T.nvars + 1)
    Yp = _perturbed_data(OneVariable(obs.variance), y_aug, n, E.shape[1], rng, perturbations)
    return _one_var_update(E_aug, T_aug, Yp, obs.variance, 0)[n:]


def sd_analysis_dense_reference(E, obs, y, transform, rng=None, *, inflation: float = 1.0,
                                perturbations=None, max_size: int = MAX_DENSE) -> np.ndarray:
    """Dense spectral-diagonal update: ``D = F^T (C_F o M) F`` with ``M`` keeping
    the per-mode entries of every variable pair, then
    ``X - D H^T (H D H^T + R)^{-1} (H X - Y)``.

    A :class:`PartialRegion` observation is handled on the augmented state.
    Only meant for small problems (test oracle).
    """
    E, T = _prepare(E, transform, inflation)
    if isinstance(obs, PartialRegion):
        n = T.block_size
        E_aug, y_aug = augment(E, obs, y, T.nvars)
        out = sd_analysis_dense_reference(
            E_aug, OneVariable(obs.variance), y_aug, BlockTransform(T.base, T.nvars + 1),
            rng, perturbations=perturbations, max_size=max_size)
        return out[n:]
    n_state, N = E.shape
    if n_state > max_size:
        raise AnalysisError(f"state size {n_state} exceeds dense guard {max_size}")
    F = dense_matrix(T, max_size)
    A = E - E.mean(axis=1, keepdims=True)
    CF = F @ (A @ A.T) @ F.T / (N - 1)
    mask = np.kron(np.ones((T.nvars, T.nvars)), np.eye(T.block_size))
    D = F.T @ (CF * mask) @ F
    H, R = obs.matrices(n_state, T.nvars)
    Yp = _perturbed_data(obs, y, H.shape[0], N, rng, perturbations)
    K = D @ H.T @ np.linalg.inv(H @ D @ H.T + R)
    return E - K @ (H @ E - Yp)


KERNELS = {
    "full": sd_analysis_full_obs,
    "one_var": sd_analysis_one_var_full,
    "few_points": sd_analysis_few_points,
    "augmented": sd_analysis_augmented,
}
