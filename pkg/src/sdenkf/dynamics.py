"""Forward models for twin experiments: Lorenz 96 and 2-D shallow water.

Both steppers are pure functions and vectorize over trailing axes, so a whole
ensemble advances in one call.  Lorenz 96 states have shape ``(K, ...)``;
shallow-water states have shape ``(3, nx, ny, ...)`` holding ``(h, hu, hv)``,
which flattens (C order) to the variable-major, row-major state vector used
by the filters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ModelBlowUp(FloatingPointError):
    """Raised when a model state becomes non-finite or unphysical."""


@dataclass(frozen=True)
class Lorenz96Config:
    K: int = 256
    forcing: float = 8.0
    dt: float = 0.01
    steps_per_cycle: int = 100
    integrator: str = "rk4"

    def __post_init__(self):
        if self.K < 4:
            raise ValueError("Lorenz 96 needs K >= 4")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")


def lorenz96_rhs(x, forcing: float = 8.0) -> np.ndarray:
    """``dx_j/dt = (x_{j+1} - x_{j-2}) x_{j-1} - x_j + F`` with cyclic indices."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 4:
        raise ValueError("Lorenz 96 needs K >= 4")
    return (np.roll(x, -1, axis=0) - np.roll(x, 2, axis=0)) * np.roll(x, 1, axis=0) - x + forcing


def _rk4(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _euler(f, x, dt):
    return x + dt * f(x)


INTEGRATORS = {"rk4": _rk4, "euler": _euler}


def lorenz96_step(x, cfg: Lorenz96Config) -> np.ndarray:
    step = INTEGRATORS[cfg.integrator]
    with np.errstate(over="ignore", invalid="ignore"):
        out = step(lambda s: lorenz96_rhs(s, cfg.forcing), np.asarray(x, dtype=float), cfg.dt)
    if not np.all(np.isfinite(out)):
        raise ModelBlowUp("Lorenz 96 state became non-finite")
    return out


def lorenz96_advance(x, cfg: Lorenz96Config, steps: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    for _ in range(steps):
        x = lorenz96_step(x, cfg)
    return x


@dataclass(frozen=True)
class ShallowWaterConfig:
    """Grid, physics and initial-bump parameters (SI units, widths in nodes).

    ``bump_width`` is the full width over which the bump decays to ``1/e`` of its
    peak, i.e. ``h = base + height * exp(-r^2 / (width/2)^2)``.
    """

    nx: int = 64
    ny: int = 64
    dx: float = 150e3
    dy: float | None = None
    dt: float = 1.0
    g: float = 9.8
    base_height: float = 10e3
    bump_height: float = 1e3
    bump_width: float = 32.0
    background_offset: tuple[float, float] = (8.0, 0.0)

    @property
    def spacing(self) -> tuple[float, float]:
        return self.dx, self.dx if self.dy is None else self.dy

    @property
    def shape(self) -> tuple[int, int, int]:
        return 3, self.nx, self.ny

    @property
    def size(self) -> int:
        return 3 * self.nx * self.ny


def _pad_reflective(q, sign_x, sign_y):
    nx, ny = q.shape[:2]
    out = np.empty((nx + 2, ny + 2) + q.shape[2:])
    out[1:-1, 1:-1] = q
    out[0, 1:-1] = sign_x * q[0]
    out[-1, 1:-1] = sign_x * q[-1]
    out[1:-1, 0] = sign_y * q[:, 0]
    out[1:-1, -1] = sign_y * q[:, -1]
    return out


def cfl_number(state, cfg: ShallowWaterConfig) -> float:
    h, hu, hv = state
    c = np.sqrt(cfg.g * np.max(h))
    speed = max(np.max(np.abs(hu / h)), np.max(np.abs(hv / h))) + c
    return cfg.dt * speed / min(cfg.spacing)


def shallow_water_step(state, cfg: ShallowWaterConfig, check: bool = True) -> np.ndarray:
    """One two-step (Richtmyer) Lax-Wendroff step with reflective walls.

    Ghost cells mirror ``h`` and the tangential momentum and negate the normal
    momentum, which makes the wall fluxes vanish exactly and conserves mass.
    """
    state = np.asarray(state, dtype=float)
    h, hu, hv = state
    if check:
        if np.any(h <= 0) or not np.all(np.isfinite(state)):
            raise ModelBlowUp("non-positive or non-finite water height")
        if cfl_number(state, cfg) >= 1:
            raise ModelBlowUp("CFL condition violated")
    g = cfg.g
    dx, dy = cfg.spacing
    dt = cfg.dt
    H = _pad_reflective(h, 1.0, 1.0)
    U = _pad_reflective(hu, -1.0, 1.0)
    V = _pad_reflective(hv, 1.0, -1.0)

    # half step on x faces (all nx+1 faces, interior y)
    Hl, Hr = H[:-1, 1:-1], H[1:, 1:-1]
    Ul, Ur = U[:-1, 1:-1], U[1:, 1:-1]
    Vl, Vr = V[:-1, 1:-1], V[1:, 1:-1]
    a = dt / (2 * dx)
    Hx = (Hr + Hl) / 2 - a * (Ur - Ul)
    Ux = (Ur + Ul) / 2 - a * ((Ur**2 / Hr + g / 2 * Hr**2) - (Ul**2 / Hl + g / 2 * Hl**2))
    Vx = (Vr + Vl) / 2 - a * (Ur * Vr / Hr - Ul * Vl / Hl)

    # half step on y faces (interior x, all ny+1 faces)
    Hb, Ht = H[1:-1, :-1], H[1:-1, 1:]
    Ub, Ut = U[1:-1, :-1], U[1:-1, 1:]
    Vb, Vt = V[1:-1, :-1], V[1:-1, 1:]
    b = dt / (2 * dy)
    Hy = (Ht + Hb) / 2 - b * (Vt - Vb)
    Uy = (Ut + Ub) / 2 - b * (Vt * Ut / Ht - Vb * Ub / Hb)
    Vy = (Vt + Vb) / 2 - b * ((Vt**2 / Ht + g / 2 * Ht**2) - (Vb**2 / Hb + g / 2 * Hb**2))

    fx_u = Ux**2 / Hx + g / 2 * Hx**2
    fx_v = Ux * Vx / Hx
    fy_u = Vy * Uy / Hy
    fy_v = Vy**2 / Hy + g / 2 * Hy**2
    cx, cy = dt / dx, dt / dy
    out = np.empty_like(state)
    out[0] = h - cx * (Ux[1:] - Ux[:-1]) - cy * (Vy[:, 1:] - Vy[:, :-1])
    out[1] = hu - cx * (fx_u[1:] - fx_u[:-1]) - cy * (fy_u[:, 1:] - fy_u[:, :-1])
    out[2] = hv - cx * (fx_v[1:] - fx_v[:-1]) - cy * (fy_v[:, 1:] - fy_v[:, :-1])
    return out


def shallow_water_advance(state, cfg: ShallowWaterConfig, steps: int,
                          check_every: int = 60) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    for i in range(steps):
        state = shallow_water_step(state, cfg, check=(i % check_every == 0))
    if np.any(state[0] <= 0) or not np.all(np.isfinite(state)):
        raise ModelBlowUp("shallow-water state became unphysical")
    return state


def bump_center(cfg: ShallowWaterConfig, which: str = "truth") -> tuple[float, float]:
    cx, cy = cfg.nx // 2, cfg.ny // 2
    if which == "truth":
        return float(cx), float(cy)
    if which == "background":
        return cx + cfg.background_offset[0], cy + cfg.background_offset[1]
    raise ValueError(f"unknown initial condition {which!r}")


def make_initial_conditions(cfg: ShallowWaterConfig, which: str = "truth") -> np.ndarray:
    """Fluid at rest with a Gaussian bump; truth and background differ only in
    the bump location."""
    cx, cy = bump_center(cfg, which)
    i = np.arange(cfg.nx)[:, None]
    j = np.arange(cfg.ny)[None, :]
    sigma = cfg.bump_width / 2
    state = np.zeros(cfg.shape)
    state[0] = cfg.base_height + cfg.bump_height * np.exp(-((i - cx) ** 2 + (j - cy) ** 2) / sigma**2)
    return state


def total_mass(state, cfg: ShallowWaterConfig) -> np.ndarray:
    dx, dy = cfg.spacing
    return np.asarray(state)[0].sum(axis=(0, 1)) * dx * dy


def save_state(path, state) -> None:
    """Write a state as a ``.npy`` array of shape ``(3, nx, ny)`` (variable-major,
    row-major grid)."""
    np.save(path, np.ascontiguousarray(state, dtype="<f8"))


def load_state(path) -> np.ndarray:
    return np.load(path)
