"""Twin-experiment driver.

A model run from one initial condition is the truth; data are the observation
operator applied to the truth, without noise (noise enters only through the
per-member perturbations inside each filter).  Every filter in the roster
starts from the same forecast ensemble, sees the same data and, unless
``shared_perturbations`` is off, the same perturbation draws.  A free run
with no assimilation is carried alongside for comparison.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .config import (ExperimentConfig, Lorenz96Setup, ShallowWaterSetup, parse_filter)
from .dynamics import (ModelBlowUp, lorenz96_advance, make_initial_conditions,
                       shallow_water_advance, total_mass)
from .ensemble_stats import (EnsembleError, TaperedSampler, covariance_sqrt,
                             sample_covariance, taper_covariance, MAX_DENSE)
from .transforms import make_transform

log = logging.getLogger(__name__)

# numerical failures count as divergence; anything else is a crash and propagates
FAILURES = (ModelBlowUp, EnsembleError, np.linalg.LinAlgError, FloatingPointError)


def rmse(estimate, truth) -> float:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((estimate - truth) ** 2)))


def rmse_per_variable(estimate, truth, nvars: int) -> np.ndarray:
    d = (np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)).reshape(nvars, -1)
    return np.sqrt(np.mean(d**2, axis=1))


def _rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


# --------------------------------------------------------------------------
# model adapters


class Lorenz96Twin:
    nvars = 1

    def __init__(self, setup: Lorenz96Setup, cfg: ExperimentConfig):
        self.setup, self.cfg = setup, cfg
        self.grid = (setup.model.K,)
        self.variables = setup.variables

    @property
    def size(self) -> int:
        return self.setup.model.K

    def truth_start(self, realization: int) -> np.ndarray:
        s = self.setup
        rng = _rng(self.cfg.seeds.truth, realization)
        x0 = s.init_mean + np.sqrt(s.init_variance) * rng.standard_normal(s.model.K)
        return lorenz96_advance(x0, s.model, s.spinup_steps)

    def initial_ensemble(self, realization: int, N: int):
        rng = _rng(self.cfg.seeds.ensemble, realization)
        return init_lorenz_ensemble(self.setup, N, rng, self.cfg.free_run)

    def advance(self, X) -> np.ndarray:
        return lorenz96_advance(X, self.setup.model, self.setup.model.steps_per_cycle)

    def diagnostics(self, free) -> dict:
        return {}


def init_lorenz_ensemble(setup: Lorenz96Setup, N: int, rng: np.random.Generator,
                         free_run: str = "mean_state"):
    """Draw members componentwise from ``N(init_mean, init_variance)`` and spin
    them up.  Returns ``(ensemble, free_run)``; the free run is a copy of the
    ensemble (``"ensemble"``) or the spun-up mean state (``"mean_state"``)."""
    K = setup.model.K
    E = setup.init_mean + np.sqrt(setup.init_variance) * rng.standard_normal((K, N))
    E = lorenz96_advance(E, setup.model, setup.spinup_steps)
    if free_run == "mean_state":
        free = lorenz96_advance(np.full((K, 1), setup.init_mean), setup.model, setup.spinup_steps)
    else:
        free = E.copy()
    return E, free


def _steps(seconds: float, dt: float) -> int:
    n = seconds / dt
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"time {seconds} is not a multiple of dt={dt}")
    return int(round(n))


class ShallowWaterTwin:
    nvars = 3

    def __init__(self, setup: ShallowWaterSetup, cfg: ExperimentConfig):
        self.setup, self.cfg = setup, cfg
        m = setup.model
        self.grid = (m.nx, m.ny)
        self.variables = setup.variables
        self.cycle_steps = _steps(setup.cycle_length, m.dt)
        self._prepared = None

    @property
    def size(self) -> int:
        return self.setup.model.size

    def _flat(self, state):
        return np.asarray(state).reshape((self.size,) + np.shape(state)[3:])

    def _grid(self, X):
        X = np.asarray(X)
        return X.reshape((3,) + self.grid + X.shape[1:])

    def prepare(self):
        """Run truth and background once; build per-realization perturbations."""
        if self._prepared is not None:
            return self._prepared
        s, m, cfg = self.setup, self.setup.model, self.cfg
        t_start = s.perturb_time + s.relax_time
        truth = shallow_water_advance(make_initial_conditions(m, "truth"), m, _steps(t_start, m.dt))

        N, R = cfg.ensemble_size, cfg.realizations
        sampler = s.sampler
        if sampler == "auto":
            sampler = "dense" if self.size <= MAX_DENSE else "structured"
        if s.background_covariance_file:
            sampler = "file"
        # background run: stop at the perturbation time and collect window snapshots
        t_end = max(s.snapshot_end, s.perturb_time) if sampler != "file" else s.perturb_time
        total = _steps(t_end, m.dt)
        stride = _steps(s.snapshot_stride, m.dt)
        first = _steps(s.snapshot_start, m.dt)
        last = _steps(s.snapshot_end, m.dt)
        perturb_step = _steps(s.perturb_time, m.dt)
        samplers = [TaperedSampler(s.taper, self.grid, 3, N, _rng(cfg.seeds.ensemble, r))
                    for r in range(R)] if sampler == "structured" else []
        snapshots = []
        state = make_initial_conditions(m, "background")
        background = state if perturb_step == 0 else None
        for k in range(total + 1):
            if k > 0:
                state = shallow_water_advance(state, m, 1)
            if k == perturb_step:
                background = state.copy()
            if sampler in ("dense", "structured") and first <= k <= last and (k - first) % stride == 0:
                if sampler == "dense":
                    snapshots.append(state.ravel().copy())
                else:
                    for smp in samplers:
                        smp.add(state)
        if sampler == "structured":
            perturbations = [smp.result() for smp in samplers]
        else:
            if sampler == "file":
                B = np.load(s.background_covariance_file)
            else:
                C = sample_covariance(np.array(snapshots).T, max_size=self.size)
                B = taper_covariance(C, s.taper, self.grid, 3)
            S = covariance_sqrt(B)
            perturbations = [S @ _rng(cfg.seeds.ensemble, r).standard_normal((S.shape[1], N))
                             for r in range(R)]
        self._prepared = (self._flat(truth), background, perturbations)
        return self._prepared

    def truth_start(self, realization: int) -> np.ndarray:
        return self.prepare()[0]

    def initial_ensemble(self, realization: int, N: int):
        _, background, perturbations = self.prepare()
        E = init_shallow_water_ensemble(self.setup, background, perturbations[realization])
        if self.cfg.free_run == "mean_state":
            steps = _steps(self.setup.relax_time, self.setup.model.dt)
            free = self._flat(shallow_water_advance(background, self.setup.model, steps))[:, None]
        else:
            free = E.copy()
        self._mass0 = total_mass(self._grid(free), self.setup.model)
        return E, free

    def advance(self, X) -> np.ndarray:
        out = shallow_water_advance(self._grid(X), self.setup.model, self.cycle_steps)
        return out.reshape(np.shape(X))

    def diagnostics(self, free) -> dict:
        mass = total_mass(self._grid(free), self.setup.model)
        return {"free_mass_drift": float(np.max(np.abs(mass - self._mass0) / self._mass0))}


def init_shallow_water_ensemble(setup: ShallowWaterSetup, background, perturbations) -> np.ndarray:
    """Add the ``(n, N)`` background-covariance draws to the background state and
    relax every member for ``relax_time`` seconds."""
    m = setup.model
    P = np.asarray(perturbations, dtype=float)
    E = np.asarray(background).reshape(-1)[:, None] + P
    E = shallow_water_advance(E.reshape((3, m.nx, m.ny, P.shape[1])), m, _steps(setup.relax_time, m.dt))
    return E.reshape(m.size, P.shape[1])


def make_twin(cfg: ExperimentConfig):
    if isinstance(cfg.model, Lorenz96Setup):
        return Lorenz96Twin(cfg.model, cfg)
    return ShallowWaterTwin(cfg.model, cfg)


# --------------------------------------------------------------------------
# observations and filters


def build_observation(cfg: ExperimentConfig, twin, label: str = "EnKF"):
    """Observation object and kernel name for one roster entry."""
    o = cfg.observation
    n = twin.size // twin.nvars
    family, variant = parse_filter(label)
    if o.kind == "full":
        if variant is not None:
            raise analysis.AnalysisError(f"{label}: full observation has no -S/-A variant")
        return analysis.FullState(o.variance), "full"
    if o.kind == "variable":
        if variant == "S":
            return analysis.FewPoints.selection(range(n), n, o.variance, o.variable), "few_points"
        if variant == "A":
            return analysis.PartialRegion(np.arange(n), o.variance, o.variable), "augmented"
        return analysis.OneVariable(o.variance, o.variable), "one_var"
    idx = o.index_set(n)
    if variant == "A" or (family == "EnKF" and o.kind == "region"):
        return analysis.PartialRegion(np.array(idx), o.variance, o.variable), "augmented"
    return analysis.FewPoints.selection(idx, n, o.variance, o.variable), "few_points"


def generate_truth_and_data(cfg: ExperimentConfig, realization: int = 0, twin=None):
    """Truth states at each analysis time, shape ``(cycles, n)``, and the
    noise-free data for the configured observation."""
    twin = twin or make_twin(cfg)
    obs, _ = build_observation(cfg, twin)
    x = twin.truth_start(realization)
    truth = [x]
    for _ in range(cfg.cycles - 1):
        x = twin.advance(x)
        truth.append(x)
    truth = np.array(truth)
    data = [obs.apply(t, twin.nvars) for t in truth]
    return truth, data


@dataclass
class _FilterRunner:
    label: str
    twin: object
    cfg: ExperimentConfig

    def __post_init__(self):
        family, _ = parse_filter(self.label)
        self.family = family
        self.obs, kernel = build_observation(self.cfg, self.twin, self.label)
        if family in ("EnKF", "free"):
            self.kernel = None
            return
        self.kernel = analysis.KERNELS[kernel]
        self.transform = make_transform(family.lower() if family != "ID" else "identity",
                                        self.twin.grid, self.twin.nvars,
                                        wavelet=self.cfg.wavelet, levels=self.cfg.levels)

    def analyze(self, E, truth, rng):
        y = self.obs.apply(truth, self.twin.nvars)
        if self.family == "EnKF":
            return analysis.enkf_analysis(E, self.obs, y, rng, nvars=self.twin.nvars,
                                          inflation=self.cfg.inflation)
        return self.kernel(E, self.obs, y, self.transform, rng, inflation=self.cfg.inflation)


@dataclass
class ExperimentRecord:
    """RMSE of ensemble means against truth.

    Arrays are indexed ``[realization, filter, cycle, variable]``; entries after
    a filter diverges are NaN and ``diverged_at`` holds the cycle index (or -1).
    """

    filters: list[str]
    variables: list[str]
    forecast: np.ndarray
    analysis: np.ndarray
    free: np.ndarray
    diverged_at: np.ndarray
    timing: np.ndarray
    config: dict = field(default_factory=dict)
    diagnostics: list[dict] = field(default_factory=list)

    @property
    def cycles(self) -> int:
        return self.free.shape[1]

    def mean_analysis(self) -> np.ndarray:
        """Realization-averaged analysis RMSE, ``[filter, cycle, variable]``; a
        diverged realization is excluded from the cycles after it diverged."""
        return _nanmean(self.analysis, axis=0)

    def mean_forecast(self) -> np.ndarray:
        return _nanmean(self.forecast, axis=0)

    def mean_free(self) -> np.ndarray:
        return self.free.mean(axis=0)

    def diverged_count(self, cycle: int) -> np.ndarray:
        d = self.diverged_at
        return np.sum((d >= 0) & (d <= cycle), axis=0)


def _nanmean(a, axis):
    a = np.asarray(a)
    count = np.sum(np.isfinite(a), axis=axis)
    total = np.nansum(a, axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def run_twin_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentRecord:
    twin = make_twin(cfg)
    F, C, R = len(cfg.filters), cfg.cycles, cfg.realizations
    V = len(twin.variables)
    forecast = np.full((R, F, C, V), np.nan)
    analysed = np.full((R, F, C, V), np.nan)
    free_rmse = np.zeros((R, C, V))
    diverged = np.full((R, F), -1, dtype=int)
    timing = np.zeros((R, F))
    diagnostics = []
    runners = [_FilterRunner(label, twin, cfg) for label in cfg.filters]

    for r in range(R):
        truth = twin.truth_start(r)
        E0, free = twin.initial_ensemble(r, cfg.ensemble_size)
        ensembles = [E0.copy() for _ in runners]
        for c in range(C):
            if c > 0:
                truth = twin.advance(truth)
                free = twin.advance(free)
            free_rmse[r, c] = rmse_per_variable(free.mean(axis=1), truth, twin.nvars)
            bound = cfg.divergence_factor * np.max(free_rmse[r, c])
            for f, runner in enumerate(runners):
                if runner.family == "free":
                    # a roster entry for the free run just reports it
                    forecast[r, f, c] = analysed[r, f, c] = free_rmse[r, c]
                    continue
                if diverged[r, f] >= 0:
                    continue
                try:
                    if c > 0:
                        ensembles[f] = twin.advance(ensembles[f])
                    forecast[r, f, c] = rmse_per_variable(ensembles[f].mean(axis=1), truth, twin.nvars)
                    keys = [cfg.seeds.perturbations, r, c] + ([] if cfg.shared_perturbations else [f])
                    t0 = time.perf_counter()
                    Ea = runner.analyze(ensembles[f], truth, _rng(*keys))
                    timing[r, f] += time.perf_counter() - t0
                    if not np.all(np.isfinite(Ea)):
                        raise FloatingPointError("non-finite analysis")
                    ensembles[f] = Ea
                    analysed[r, f, c] = rmse_per_variable(Ea.mean(axis=1), truth, twin.nvars)
                    if not np.all(analysed[r, f, c] <= bound) or not np.all(forecast[r, f, c] <= bound):
                        raise FloatingPointError("RMSE exceeds divergence bound")
                except FAILURES as exc:
                    log.info("realization %d, %s diverged at cycle %d: %s", r, runner.label, c + 1, exc)
                    diverged[r, f] = c
                    forecast[r, f, c:] = np.nan
                    analysed[r, f, c:] = np.nan
        diagnostics.append(twin.diagnostics(free))
        if progress is not None:
            progress(r + 1, R)
    return ExperimentRecord(list(cfg.filters), list(twin.variables), forecast, analysed,
                            free_rmse, diverged, timing, cfg.to_dict(), diagnostics)


# --------------------------------------------------------------------------
# output


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.12e}"


def table_rows(rec: ExperimentRecord) -> list[list[str]]:
    vs = rec.variables
    free = rec.mean_free()
    if not rec.filters:
        header = ["cycle"] + [f"free_rmse_{v}" for v in vs]
        return [header] + [[str(c + 1)] + [_fmt(x) for x in free[c]] for c in range(rec.cycles)]
    header = (["cycle", "filter"] + [f"forecast_rmse_{v}" for v in vs]
              + [f"analysis_rmse_{v}" for v in vs] + [f"free_rmse_{v}" for v in vs] + ["diverged"])
    fc, an = rec.mean_forecast(), rec.mean_analysis()
    rows = [header]
    for c in range(rec.cycles):
        div = rec.diverged_count(c)
        for f, label in enumerate(rec.filters):
            rows.append([str(c + 1), label] + [_fmt(x) for x in fc[f, c]]
                        + [_fmt(x) for x in an[f, c]] + [_fmt(x) for x in free[c]] + [str(div[f])])
    return rows


def emit_results(rec: ExperimentRecord, outdir, stem: str = "rmse") -> dict[str, Path]:
    """Write ``<stem>.csv`` (realization-averaged RMSE per cycle and filter) and
    ``<stem>.meta.json`` (resolved configuration, divergence and timing)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    table = outdir / f"{stem}.csv"
    with open(table, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(table_rows(rec))
    meta = outdir / f"{stem}.meta.json"
    payload = {
        "config": rec.config,
        "filters": rec.filters,
        "variables": rec.variables,
        "diverged_at_cycle": {label: [int(d) + 1 if d >= 0 else None for d in rec.diverged_at[:, f]]
                              for f, label in enumerate(rec.filters)},
        "analysis_seconds": {label: rec.timing[:, f].tolist() for f, label in enumerate(rec.filters)},
        "diagnostics": rec.diagnostics,
    }
    with open(meta, "w") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)
        fh.write("\n")
    return {"table": table, "metadata": meta}


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
