"""Closed-form error expressions for the spectral diagonal covariance and their
Monte Carlo verification.

Everything is evaluated in the eigenbasis of the true covariance
``C = diag(lam)``; the errors are invariant under an orthogonal change of
basis, which :func:`monte_carlo_frobenius_errors` can confirm through its
``basis`` argument.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def as_spectrum(lam) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("spectrum must be a non-empty vector")
    if not np.all(np.isfinite(lam)) or np.any(lam < 0):
        raise ValueError("eigenvalues must be finite and nonnegative")
    return lam


def _check_members(N):
    if N < 2:
        raise ValueError("ensemble size must be at least 2")


def power_law_spectrum(alpha: float, n: int, scale: float = 1.0) -> np.ndarray:
    """``lam_k = scale * k**-alpha`` for ``k = 1..n``."""
    return scale * np.arange(1, n + 1, dtype=float) ** -alpha


def expected_error_sample_cov(lam, N: int) -> float:
    """Expected ``||C - C_N||_F^2`` for the sample covariance of ``N`` members."""
    lam = as_spectrum(lam)
    _check_members(N)
    sq = np.sum(lam**2)
    cross = np.sum(lam) ** 2 - sq
    return float((2 * sq + cross) / (N - 1))


def expected_error_spectral_diag(lam, N: int) -> float:
    """Expected ``||C - D_N||_F^2`` for the spectral diagonal approximation."""
    lam = as_spectrum(lam)
    _check_members(N)
    return float(2 * np.sum(lam**2) / (N - 1))


def entry_variance(lam, N: int, i: int, j: int) -> float:
    """Variance of entry ``(i, j)`` (0-based) of the spectral sample covariance."""
    lam = as_spectrum(lam)
    _check_members(N)
    if not (0 <= i < lam.size and 0 <= j < lam.size):
        raise IndexError(f"entry ({i}, {j}) out of range for n={lam.size}")
    if i == j:
        return float(2 * lam[i] ** 2 / (N - 1))
    return float(lam[i] * lam[j] / (N - 1))


def entry_variance_matrix(lam, N: int) -> np.ndarray:
    lam = as_spectrum(lam)
    _check_members(N)
    V = np.outer(lam, lam) / (N - 1)
    V[np.diag_indices_from(V)] *= 2
    return V


def power_law_error_ratio(alpha: float, n: int, N: int = 2) -> float:
    """Ratio of the spectral-diagonal to sample-covariance expected error for
    ``lam_k = k**-alpha``.  The ratio does not depend on ``N``."""
    if n < 1:
        raise ValueError("n must be positive")
    lam = power_law_spectrum(alpha, n)
    return expected_error_spectral_diag(lam, N) / expected_error_sample_cov(lam, N)


def _replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, rep]))


def _sample_covariances(lam, N, replications, seed, basis=None):
    """Spectral sample covariances for independent ensembles, shape (R, n, n).

    Replication ``r`` draws its coefficients from the stream ``(seed, r)``.
    """
    n = lam.size
    theta = np.stack([_replication_rng(seed, r).standard_normal((N, n))
                      for r in range(replications)])
    X = theta * np.sqrt(lam)  # members in the eigenbasis, (R, N, n)
    if basis is not None:
        # physical members U = F^T (lam^1/2 theta), then transform with F
        X = (X @ basis) @ basis.T
    A = X - X.mean(axis=1, keepdims=True)
    return np.einsum("rki,rkj->rij", A, A) / (N - 1)


@dataclass
class EntryVarianceResult:
    variance: np.ndarray       # empirical variance of each entry
    variance_se: np.ndarray    # standard error of that variance
    mean: np.ndarray           # empirical mean of each entry
    mean_se: np.ndarray
    replications: int


def monte_carlo_entry_variance(lam, N: int, replications: int = 20000,
                               seed: int = 0) -> EntryVarianceResult:
    lam = as_spectrum(lam)
    _check_members(N)
    if replications < 1000:
        raise ValueError("use at least 1000 replications")
    C = _sample_covariances(lam, N, replications, seed)
    mean = C.mean(axis=0)
    dev2 = (C - mean) ** 2
    var = dev2.sum(axis=0) / (replications - 1)
    return EntryVarianceResult(
        variance=var,
        variance_se=dev2.std(axis=0, ddof=1) / np.sqrt(replications),
        mean=mean,
        mean_se=C.std(axis=0, ddof=1) / np.sqrt(replications),
        replications=replications,
    )


@dataclass
class FrobeniusErrorResult:
    sample_error: float
    sample_se: float
    diagonal_error: float
    diagonal_se: float
    replications: int


def monte_carlo_frobenius_errors(lam, N: int, replications: int = 20000, seed: int = 0,
                                 basis=None) -> FrobeniusErrorResult:
    """Mean squared Frobenius errors of the sample covariance and of its
    spectral diagonal, with ``C = diag(lam)`` in the spectral basis.

    ``basis`` is an optional orthogonal matrix ``F``; members are then drawn in
    physical space as ``F^T`` times the eigenbasis draws and transformed back,
    which must leave both errors unchanged in distribution.
    """
    lam = as_spectrum(lam)
    _check_members(N)
    if replications < 1000:
        raise ValueError("use at least 1000 replications")
    if lam.size > 64:
        raise ValueError("dense Monte Carlo limited to n <= 64")
    CF = _sample_covariances(lam, N, replications, seed, basis)
    target = np.diag(lam)
    err_sample = np.sum((CF - target) ** 2, axis=(1, 2))
    err_diag = np.sum((np.diagonal(CF, axis1=1, axis2=2) - lam) ** 2, axis=1)
    root = np.sqrt(replications)
    return FrobeniusErrorResult(
        sample_error=float(err_sample.mean()),
        sample_se=float(err_sample.std(ddof=1) / root),
        diagonal_error=float(err_diag.mean()),
        diagonal_se=float(err_diag.std(ddof=1) / root),
        replications=replications,
    )


@dataclass
class CheckRow:
    name: str
    theory: float
    empirical: float
    se: float
    tolerance_se: float

    @property
    def passed(self) -> bool:
        if self.se == 0:
            return abs(self.empirical - self.theory) <= 1e-12 * max(1.0, abs(self.theory))
        return abs(self.empirical - self.theory) <= self.tolerance_se * self.se


def verify_theory(N: int = 10, replications: int = 20000, seed: int = 0,
                  spectrum=(4.0, 3.0, 2.0, 1.0), alphas=(1.1, 2.0), n_power: int = 32
                  ) -> list[CheckRow]:
    """Entry variances (4 SE) and Frobenius errors (3 SE) against Monte Carlo."""
    rows: list[CheckRow] = []
    lam = as_spectrum(spectrum)
    ev = monte_carlo_entry_variance(lam, N, replications, seed)
    V = entry_variance_matrix(lam, N)
    for i in range(lam.size):
        for j in range(lam.size):
            rows.append(CheckRow(f"var C[{i},{j}]", V[i, j], ev.variance[i, j],
                                 ev.variance_se[i, j], 4.0))
    for i in range(lam.size):
        rows.append(CheckRow(f"mean C[{i},{i}]", lam[i], ev.mean[i, i], ev.mean_se[i, i], 3.0))
    spectra = [("lam=" + ",".join(f"{x:g}" for x in lam), lam)]
    spectra += [(f"power alpha={a:g} n={n_power}", power_law_spectrum(a, n_power)) for a in alphas]
    for k, (label, s) in enumerate(spectra):
        fe = monte_carlo_frobenius_errors(s, N, replications, seed + 1 + k)
        rows.append(CheckRow(f"E|C-C_N|^2 {label}", expected_error_sample_cov(s, N),
                             fe.sample_error, fe.sample_se, 3.0))
        rows.append(CheckRow(f"E|C-D_N|^2 {label}", expected_error_spectral_diag(s, N),
                             fe.diagonal_error, fe.diagonal_se, 3.0))
    return rows
