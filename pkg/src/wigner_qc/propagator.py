"""Explicit Runge-Kutta time integration with mass and boundary monitors."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import PhaseSpaceField, PhaseSpaceGrid, WignerState
from .operators import ModelParams, RhsKernel, RhsParts, moyal_coefficients, rhs

SCHEMES = ("rk4", "rk2")
MONITOR_POLICIES = ("raise", "record")
# Extent of the RK stability region along the imaginary and negative real axes.
_IMAG_BOUND = {"rk4": 2.0 * math.sqrt(2.0), "rk2": 2.0}
_REAL_BOUND = {"rk4": 2.785, "rk2": 2.0}
_SAFETY = 2.0


class StabilityError(RuntimeError):
    def __init__(self, step_index: int, t: float):
        super().__init__(f"non-finite field after step {step_index} (t = {t:.6g}); "
                         "dt is too large for this grid")
        self.step_index = step_index
        self.t = t


class MassDriftError(RuntimeError):
    pass


class BoundaryLeakError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_final: float
    scheme: str = "rk4"
    sample_every: int = 1
    snapshot_times: tuple[float, ...] = ()
    mass_tolerance: float = 1e-6
    boundary_tolerance: float = 1e-8
    boundary_cells: int = 4
    dealias: bool = False
    monitor_policy: str = "raise"

    def __post_init__(self):
        object.__setattr__(self, "snapshot_times", tuple(sorted(float(s) for s in self.snapshot_times)))
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if not (self.t_final >= 0 and math.isfinite(self.t_final)):
            raise ValueError(f"t_final must be non-negative and finite, got {self.t_final}")
        if self.t_final > 0 and self.dt >= self.t_final:
            raise ValueError(f"dt ({self.dt}) must be smaller than t_final ({self.t_final})")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            raise ValueError(f"sample_every must be a positive integer, got {self.sample_every}")
        for s in self.snapshot_times:
            if not 0.0 <= s <= self.t_final:
                raise ValueError(f"snapshot time {s} outside [0, {self.t_final}]")
        if self.boundary_cells < 1:
            raise ValueError("boundary_cells must be >= 1")
        if self.monitor_policy not in MONITOR_POLICIES:
            raise ValueError(f"monitor_policy must be one of {MONITOR_POLICIES}, got {self.monitor_policy!r}")


class Stepper:
    """Advances raw field arrays; owns the fused right-hand-side kernel."""

    def __init__(self, grid: PhaseSpaceGrid, params: ModelParams, scheme: str = "rk4",
                 dealias: bool = False):
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
        self.scheme = scheme
        self.kernel = RhsKernel(grid, params, dealias)

    def advance(self, values: np.ndarray, t: float, dt: float) -> np.ndarray:
        f = self.kernel
        if self.scheme == "rk4":
            k1 = f(values, t)
            k2 = f(values + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = f(values + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = f(values + dt * k3, t + dt)
            return values + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        k1 = f(values, t)
        k2 = f(values + 0.5 * dt * k1, t + 0.5 * dt)
        return values + dt * k2


def _finite(values: np.ndarray) -> bool:
    return bool(np.isfinite(values.sum()))


def step(state: WignerState, params: ModelParams, dt: float, scheme: str = "rk4",
         dealias: bool = False) -> WignerState:
    """Single explicit RK step of size ``dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    out = Stepper(state.grid, params, scheme, dealias).advance(state.values, state.t, dt)
    if not _finite(out):
        raise StabilityError(0, state.t + dt)
    return WignerState(PhaseSpaceField(state.grid, out), state.t + dt, state.mass0)


def boundary_fraction(values: np.ndarray, cells: int) -> float:
    """Share of the absolute mass sitting in the outer band of the lattice."""
    a = np.abs(values)
    total = a.sum()
    if total == 0:
        return 0.0
    inner = a[cells:-cells, cells:-cells].sum()
    return float((total - inner) / total)


def check_monitors(state: WignerState, config: SolverConfig) -> None:
    mass = state.mass()
    drift = abs(mass - state.mass0) / abs(state.mass0)
    if drift > config.mass_tolerance:
        raise MassDriftError(f"relative mass drift {drift:.3e} exceeds {config.mass_tolerance:.1e} "
                             f"at t = {state.t:.6g}")
    leak = boundary_fraction(state.values, config.boundary_cells)
    if leak > config.boundary_tolerance:
        raise BoundaryLeakError(f"boundary-band mass fraction {leak:.3e} exceeds "
                                f"{config.boundary_tolerance:.1e} at t = {state.t:.6g}; enlarge the domain "
                                "or refine the grid")


def _sample_schedule(config: SolverConfig) -> list[tuple[int, float]]:
    """Event list of (base step index, extra time) pairs, in time order.

    Regular samples sit at whole steps n*dt; snapshot times falling between
    steps are reached with a shortened step and get an offset > 0.
    """
    dt = config.dt
    n_total = int(math.floor(config.t_final / dt + 1e-9))
    events = {(n, 0.0) for n in range(config.sample_every, n_total + 1, config.sample_every)}
    for s in config.snapshot_times:
        n = int(math.floor(s / dt + 1e-9))
        offset = s - n * dt
        if abs(offset) <= 1e-9 * dt or offset <= 0:
            events.add((n, 0.0))
        elif abs(offset - dt) <= 1e-9 * dt:
            events.add((n + 1, 0.0))
        else:
            events.add((n, offset))
    return sorted(events)


def evolve(initial: WignerState, params: ModelParams, config: SolverConfig,
           on_sample: Callable[[WignerState, RhsParts], None] | None = None,
           violations: list[str] | None = None) -> WignerState:
    """Integrate from ``initial.t`` to ``t_final`` with fixed steps.

    ``on_sample`` receives the state and freshly evaluated right-hand-side
    parts at every ``sample_every``-th step and at every snapshot time.
    Monitors run at the same cadence.  With ``monitor_policy="record"`` a
    failing monitor does not stop the run; the first message of each kind
    is appended to ``violations`` instead.
    """
    grid = initial.grid
    stepper = Stepper(grid, params, config.scheme, config.dealias)
    dt = config.dt
    t0 = initial.t
    n_total = int(math.floor(config.t_final / dt + 1e-9))
    values = np.array(initial.values)
    n = 0

    def emit(vals: np.ndarray, t: float) -> None:
        state = WignerState(PhaseSpaceField(grid, vals), t, initial.mass0)
        try:
            check_monitors(state, config)
        except (MassDriftError, BoundaryLeakError) as exc:
            if config.monitor_policy == "raise":
                raise
            kind = type(exc).__name__
            if violations is not None and not any(v.startswith(kind) for v in violations):
                violations.append(f"{kind}: {exc}")
        if on_sample is not None:
            _, parts = rhs(state, params, config.dealias)
            on_sample(state, parts)

    for n_event, offset in _sample_schedule(config):
        while n < n_event:
            values = stepper.advance(values, t0 + n * dt, dt)
            n += 1
            if not _finite(values):
                raise StabilityError(n, t0 + n * dt)
        if offset == 0.0:
            emit(values, t0 + n * dt)
        else:
            partial = stepper.advance(values, t0 + n * dt, offset)
            if not _finite(partial):
                raise StabilityError(n, t0 + n * dt + offset)
            emit(partial, t0 + n * dt + offset)
    while n < n_total:
        values = stepper.advance(values, t0 + n * dt, dt)
        n += 1
        if not _finite(values):
            raise StabilityError(n, t0 + n * dt)
    t_end = t0 + n_total * dt
    rest = config.t_final - n_total * dt
    if rest > 1e-9 * dt:
        values = stepper.advance(values, t_end, rest)
        if not _finite(values):
            raise StabilityError(n_total + 1, t0 + config.t_final)
        t_end = t0 + config.t_final
    elif n_total == 0:
        return initial
    return WignerState(PhaseSpaceField(grid, values), t_end, initial.mass0)


def suggest_dt(grid: PhaseSpaceGrid, params: ModelParams, scheme: str = "rk4") -> float:
    """Stable explicit step: min over per-term limits, divided by a safety factor 2."""
    duff, bath = params.duffing, params.bath
    q, p = grid.q, grid.p
    kq, kp = grid.k_max("q"), grid.k_max("p")
    poly = duff.polynomial(0.0)
    force_static = np.abs(poly.deriv(1)(q) - poly.deriv(1)(0.0))
    max_force = float(np.max(force_static)) + abs(duff.A)
    adv_rate = float(np.max(np.abs(p))) / duff.m * kq + max_force * kp
    limits = [math.inf]
    if adv_rate > 0:
        limits.append(_IMAG_BOUND[scheme] / adv_rate)
    moyal_rate = 0.0
    for order, coef in moyal_coefficients(duff, bath.hbar, 0.0):
        moyal_rate += float(np.max(np.abs(coef(q)))) * kp ** order
    if moyal_rate > 0:
        limits.append(_IMAG_BOUND[scheme] / moyal_rate)
    if bath.D > 0:
        diff_rate = bath.D * kp ** 2
        if bath.coupling == "symmetric":
            diff_rate += bath.D * kq ** 2
        limits.append(_REAL_BOUND[scheme] / diff_rate)
    return min(limits) / _SAFETY
