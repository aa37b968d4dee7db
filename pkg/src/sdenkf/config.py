"""Experiment configuration: dataclasses, YAML loading and the built-in presets.

A configuration file is YAML (JSON also parses).  Every field has a default
matching the standard experiment setup, so a file only needs to list what it
changes; ``preset: <name>`` at the top level starts from a built-in preset.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .dynamics import Lorenz96Config, ShallowWaterConfig
from .ensemble_stats import TaperSpec

FILTER_KINDS = ("DST", "DCT", "DWT", "ID")


class ConfigError(ValueError):
    pass


@dataclass
class Lorenz96Setup:
    model: Lorenz96Config = field(default_factory=Lorenz96Config)
    spinup_steps: int = 1000
    init_mean: float = 0.0005
    init_variance: float = 0.01

    kind = "lorenz96"
    variables = ("x",)


@dataclass
class ShallowWaterSetup:
    """Shallow-water timeline (seconds) and background-covariance settings."""

    model: ShallowWaterConfig = field(default_factory=ShallowWaterConfig)
    perturb_time: float = 4 * 3600.0
    relax_time: float = 3600.0
    cycle_length: float = 60.0
    snapshot_start: float = 4 * 3600.0
    snapshot_end: float = 6 * 3600.0
    snapshot_stride: float = 1.0
    taper: TaperSpec = field(default_factory=TaperSpec)
    sampler: str = "auto"  # auto | dense | structured
    background_covariance_file: str | None = None

    kind = "shallow_water"
    variables = ("h", "hu", "hv")


@dataclass
class ObservationConfig:
    """``kind`` is one of ``full`` (whole state), ``variable`` (one variable on
    the whole grid), ``region`` (one variable on an index subset) or ``points``
    (one variable at a few grid points).  The subset is ``indices`` or, if that
    is unset, the first ``first`` points."""

    kind: str = "full"
    variance: float = 0.04
    variable: int = 0
    first: int | None = None
    indices: list[int] | None = None

    def index_set(self, n: int) -> list[int]:
        if self.indices is not None:
            idx = [int(i) for i in self.indices]
        elif self.first is not None:
            idx = list(range(int(self.first)))
        else:
            raise ConfigError(f"observation kind {self.kind!r} needs 'indices' or 'first'")
        if not idx or min(idx) < 0 or max(idx) >= n:
            raise ConfigError("observed indices out of range")
        return idx


@dataclass
class SeedConfig:
    truth: int = 1
    ensemble: int = 2
    perturbations: int = 3


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    model: Lorenz96Setup | ShallowWaterSetup = field(default_factory=Lorenz96Setup)
    filters: list[str] = field(default_factory=lambda: ["EnKF", "DST", "DCT", "DWT"])
    ensemble_size: int = 4
    cycles: int = 30
    realizations: int = 10
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    inflation: float = 1.0
    wavelet: str = "coif2"
    levels: int | None = None
    shared_perturbations: bool = True
    free_run: str = "mean_state"  # mean_state | ensemble
    divergence_factor: float = 1e3

    def __post_init__(self):
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if self.ensemble_size < 2:
            raise ConfigError("ensemble_size must be >= 2")
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        if self.inflation < 1:
            raise ConfigError("inflation must be >= 1")
        if self.free_run not in ("ensemble", "mean_state"):
            raise ConfigError(f"unknown free_run mode {self.free_run!r}")
        if self.observation.kind not in ("full", "variable", "region", "points"):
            raise ConfigError(f"unknown observation kind {self.observation.kind!r}")
        for label in self.filters:
            parse_filter(label)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = {"kind": self.model.kind, **d["model"]}
        return d


def parse_filter(label: str) -> tuple[str, str | None]:
    """Split a roster label into ``(family, variant)``.

    ``EnKF`` and ``free`` stand alone; spectral labels are a transform name
    (DST, DCT, DWT, ID) optionally followed by ``-S`` (exact observation
    operator) or ``-A`` (augmented state).
    """
    if label in ("EnKF", "free"):
        return label, None
    kind, dash, suffix = label.partition("-")
    if kind not in FILTER_KINDS or suffix not in ("", "S", "A") or (dash and not suffix):
        raise ConfigError(f"unknown filter label {label!r}")
    return kind, suffix or None


def _build(cls, data: dict):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**data)


def _split_model(data: dict):
    data = dict(data or {})
    kind = data.pop("kind", "lorenz96")
    if kind == "lorenz96":
        setup_cls, model_cls = Lorenz96Setup, Lorenz96Config
    elif kind == "shallow_water":
        setup_cls, model_cls = ShallowWaterSetup, ShallowWaterConfig
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    model_keys = {f.name for f in fields(model_cls)}
    model_args = {k: data.pop(k) for k in list(data) if k in model_keys}
    if "model" in data:
        model_args.update(data.pop("model"))
    for key in ("background_offset",):
        if key in model_args:
            model_args[key] = tuple(model_args[key])
    if "taper" in data:
        taper = dict(data.pop("taper"))
        if "decay" in taper:
            taper["decay"] = tuple(taper["decay"]) if isinstance(taper["decay"], (list, tuple)) \
                else (taper["decay"], taper["decay"])
        data["taper"] = TaperSpec(**taper)
    return _build(setup_cls, {**data, "model": _build(model_cls, model_args)})


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data or {})
    preset = data.pop("preset", None)
    if preset is not None:
        data = _merge(preset_dict(preset), data)
    return ExperimentConfig(
        name=data.get("name", "experiment"),
        model=_split_model(data.get("model")),
        filters=list(data.get("filters", ["EnKF", "DST", "DCT", "DWT"])),
        ensemble_size=int(data.get("ensemble_size", 4)),
        cycles=int(data.get("cycles", 30)),
        realizations=int(data.get("realizations", 10)),
        observation=_build(ObservationConfig, data.get("observation")),
        seeds=_build(SeedConfig, data.get("seeds")),
        **{k: data[k] for k in ("inflation", "wavelet", "levels", "shared_perturbations",
                                "free_run", "divergence_factor") if k in data},
    )


def load_config(path) -> ExperimentConfig:
    with open(Path(path)) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return config_from_dict(data)


_L96 = {"kind": "lorenz96", "K": 256, "forcing": 8.0, "dt": 0.01, "steps_per_cycle": 100,
        "spinup_steps": 1000, "init_mean": 0.0005, "init_variance": 0.01}

_SW64 = {"kind": "shallow_water", "nx": 64, "ny": 64, "dx": 150e3, "dt": 1.0, "g": 9.8,
         "base_height": 10e3, "bump_height": 1e3, "bump_width": 32.0,
         "background_offset": [8.0, 0.0], "perturb_time": 14400.0, "relax_time": 3600.0,
         "cycle_length": 60.0, "snapshot_start": 14400.0, "snapshot_end": 21600.0,
         "snapshot_stride": 1.0, "taper": {"block_scale": 0.9, "decay": [1.0, 1.0]},
         "sampler": "auto"}

# Same physical domain on a 32 x 32 grid: half the nodes, double the spacing.
_SW32 = {**_SW64, "nx": 32, "ny": 32, "dx": 300e3, "bump_width": 16.0,
         "background_offset": [4.0, 0.0], "snapshot_stride": 60.0}

PRESETS = {
    "l96-full": {
        "name": "l96-full", "model": _L96, "filters": ["EnKF", "DST", "DCT", "DWT"],
        "ensemble_size": 4, "cycles": 30, "realizations": 10,
        "observation": {"kind": "full", "variance": 0.04},
    },
    "l96-partial": {
        "name": "l96-partial", "model": _L96,
        "filters": ["EnKF", "DCT-S", "DWT-S", "DCT-A", "DWT-A"],
        "ensemble_size": 16, "cycles": 30, "realizations": 10,
        "observation": {"kind": "region", "variance": 0.04, "first": 128},
    },
    "sw-full": {
        "name": "sw-full", "model": _SW64, "filters": ["EnKF", "DST", "DCT", "DWT"],
        "ensemble_size": 20, "cycles": 5, "realizations": 1,
        "observation": {"kind": "full", "variance": 1000.0},
    },
    "sw-height": {
        "name": "sw-height", "model": _SW64, "filters": ["EnKF", "DST", "DCT", "DWT"],
        "ensemble_size": 20, "cycles": 5, "realizations": 5,
        "observation": {"kind": "variable", "variance": 1000.0, "variable": 0},
    },
    "sw-full-desk": {
        "name": "sw-full-desk", "model": _SW32, "filters": ["EnKF", "DST", "DCT", "DWT"],
        "ensemble_size": 20, "cycles": 3, "realizations": 1,
        "observation": {"kind": "full", "variance": 1000.0},
    },
}


def preset_dict(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def preset(name: str, **overrides) -> ExperimentConfig:
    return config_from_dict(_merge(preset_dict(name), overrides))
