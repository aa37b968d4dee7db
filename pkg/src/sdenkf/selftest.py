"""Quick property suites for the transforms and the analysis kernels.

Each check returns a :class:`SelfCheck`; the command-line ``selftest`` prints
them and exits nonzero if any fails.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import analysis
from .transforms import as_block, dense_matrix, make_transform

SCENARIOS = ("full", "one_var", "few_points", "augmented")


@dataclass
class SelfCheck:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tolerance)


def transform_checks(kinds=("dct", "dst", "dwt"), sizes=(16, 64, 256), grid=(16, 16),
                     tol: float = 1e-10, seed: int = 0) -> list[SelfCheck]:
    """Orthogonality ``max|F F^T - I|`` and round-trip relative error."""
    rng = np.random.default_rng(seed)
    out = []
    for kind in kinds:
        for shape in [(n,) for n in sizes] + [tuple(grid)]:
            t = make_transform(kind, shape)
            F = dense_matrix(t)
            label = f"{kind} {'x'.join(map(str, shape))}"
            out.append(SelfCheck(f"{label} orthogonality",
                                 float(np.abs(F @ F.T - np.eye(t.size)).max()), tol))
            x = rng.standard_normal((t.size, 3))
            back = t.inverse(t.forward(x))
            out.append(SelfCheck(f"{label} round trip",
                                 float(np.linalg.norm(back - x) / np.linalg.norm(x)), tol))
    return out


def random_instance(rng: np.random.Generator, scenario: str):
    """Random small problem ``(E, obs, y, transform, perturbations)`` for one kernel.

    Grids are 1-D of length 8, 16 or 32, or 4 x 4; up to 3 variables with at
    most 32 points per variable and up to 8 members.
    """
    shape = [(8,), (16,), (32,), (4, 4)][rng.integers(4)]
    kind = ("identity", "dct", "dst", "dwt")[rng.integers(4)]
    m = int(rng.integers(1, 4))
    N = int(rng.integers(2, 9))
    T = as_block(make_transform(kind, shape, m))
    n = T.block_size
    # correlated members so the spectral variances are not all alike
    E = np.cumsum(rng.standard_normal((m * n, N)), axis=0) / 3 + rng.standard_normal((m * n, 1))
    c = float(rng.uniform(0.1, 2.0))
    var = int(rng.integers(m))
    if scenario == "full":
        obs = analysis.FullState(c)
    elif scenario == "one_var":
        obs = analysis.OneVariable(c, var)
    elif scenario == "few_points":
        k = int(rng.integers(1, 6))
        G = rng.standard_normal((k, k))
        obs = analysis.FewPoints(rng.standard_normal((k, n)), G @ G.T + c * np.eye(k), var)
    elif scenario == "augmented":
        k = int(rng.integers(1, n + 1))
        obs = analysis.PartialRegion(np.sort(rng.choice(n, size=k, replace=False)), c, var)
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    y = obs.apply(E, m)[:, 0] + rng.standard_normal(obs.size(m * n, m))
    k = n if scenario == "augmented" else obs.size(m * n, m)
    return E, obs, y, T, rng.standard_normal((k, N)) * np.sqrt(c)


def kernel_checks(instances: int = 50, seed: int = 0, tol: float = 1e-8) -> list[SelfCheck]:
    """Relative difference between each structured kernel and the dense
    spectral-diagonal reference, sharing the perturbation draws."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(instances):
        scenario = SCENARIOS[i % len(SCENARIOS)]
        E, obs, y, T, P = random_instance(rng, scenario)
        got = analysis.KERNELS[scenario](E, obs, y, T, perturbations=P)
        ref = analysis.sd_analysis_dense_reference(E, obs, y, T, perturbations=P)
        err = np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-300)
        out.append(SelfCheck(f"{scenario} #{i} ({T.base.kind}, m={T.nvars}, "
                             f"n={T.block_size}, N={E.shape[1]})", float(err), tol))
    return out


def run_selftest(instances: int = 50, seed: int = 0) -> list[SelfCheck]:
    return transform_checks(seed=seed) + kernel_checks(instances, seed)
