"""Initial states, (hbar, D) sweeps, scaling collapse and the saturation fit."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.special import erfc

from .diagnostics import GCurve, make_record, period_average
from .grid import PhaseSpaceField, PhaseSpaceGrid, WignerState, make_grid
from .operators import BathParams, DuffingParams, ModelParams, rhs
from .propagator import SolverConfig, evolve, suggest_dt

log = logging.getLogger(__name__)

SIGMA_Q2_MAX = 0.05
MIN_SIGMA_CELLS = 3.0
LEAK_LIMIT = 1e-12


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class InitialSpec:
    hbar: float
    q0: float = 0.0
    p0: float = 0.0
    sigma_q2: float = SIGMA_Q2_MAX

    def __post_init__(self):
        if not 0 < self.sigma_q2 <= SIGMA_Q2_MAX:
            raise ValueError(f"sigma_q2 must lie in (0, {SIGMA_Q2_MAX}] to stay localised, got {self.sigma_q2}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")

    @property
    def sigma_q(self) -> float:
        return math.sqrt(self.sigma_q2)

    @property
    def sigma_p(self) -> float:
        # minimum uncertainty: sigma_q * sigma_p = hbar / 2
        return self.hbar / (2.0 * self.sigma_q)


def _outside_fraction(center: float, sigma: float, lo: float, hi: float) -> float:
    s = sigma * math.sqrt(2.0)
    return 0.5 * (erfc((hi - center) / s) + erfc((center - lo) / s))


def gaussian_initial(grid: PhaseSpaceGrid, spec: InitialSpec) -> WignerState:
    """Minimum-uncertainty Gaussian Wigner function with unit mass at t = 0."""
    sq, sp = spec.sigma_q, spec.sigma_p
    if sq < MIN_SIGMA_CELLS * grid.dq or sp < MIN_SIGMA_CELLS * grid.dp:
        raise ValueError(
            f"initial Gaussian under-resolved: sigma_q={sq:.4g} (dq={grid.dq:.4g}), "
            f"sigma_p={sp:.4g} (dp={grid.dp:.4g}); need sigma >= {MIN_SIGMA_CELLS:g} cells")
    leak = (_outside_fraction(spec.q0, sq, grid.q_min, grid.q_max)
            + _outside_fraction(spec.p0, sp, grid.p_min, grid.p_max))
    if leak >= LEAK_LIMIT:
        raise ValueError(f"initial Gaussian leaks {leak:.2e} of its mass outside the domain")
    q, p = grid.mesh()
    values = np.exp(-(q - spec.q0) ** 2 / (2 * sq ** 2) - (p - spec.p0) ** 2 / (2 * sp ** 2))
    values = values / (2.0 * math.pi * sq * sp)
    return WignerState.initial(PhaseSpaceField(grid, values))


@dataclass(frozen=True)
class SharedSetup:
    """Numerics and model constants common to every point of a sweep."""

    grid: PhaseSpaceGrid = field(default_factory=lambda: make_grid(-6, 6, -12, 12, 256, 256))
    duffing: DuffingParams = field(default_factory=DuffingParams)
    coupling: str = "momentum_only"
    q0: float = 0.0
    p0: float = 0.0
    sigma_q2: float = SIGMA_Q2_MAX
    t_final: float = 20.0
    samples_per_period: int = 64
    dt: float | None = None
    scheme: str = "rk4"
    snapshot_times: tuple[float, ...] = ()
    mass_tolerance: float = 1e-6
    boundary_tolerance: float = 1e-8
    dealias: bool = False
    monitor_policy: str = "raise"

    def model(self, hbar: float, D: float) -> ModelParams:
        return ModelParams(self.duffing, BathParams(hbar, D, self.coupling))

    def initial_spec(self, hbar: float) -> InitialSpec:
        return InitialSpec(hbar, self.q0, self.p0, self.sigma_q2)

    @property
    def sample_interval(self) -> float:
        return self.duffing.period / self.samples_per_period

    def fit_dt(self, dt_max: float) -> tuple[float, int]:
        """Largest dt <= dt_max dividing the sample interval, with steps per sample."""
        every = max(1, math.ceil(self.sample_interval / dt_max - 1e-12))
        return self.sample_interval / every, every

    def solver_config(self, params: ModelParams) -> SolverConfig:
        dt_max = self.dt if self.dt is not None else suggest_dt(self.grid, params, self.scheme)
        dt, every = self.fit_dt(dt_max)
        # t_final is always sampled so curves end where the run ends.
        sample_at = tuple(sorted(set(self.snapshot_times) | {self.t_final}))
        return SolverConfig(dt=dt, t_final=self.t_final, scheme=self.scheme, sample_every=every,
                            snapshot_times=sample_at, mass_tolerance=self.mass_tolerance,
                            boundary_tolerance=self.boundary_tolerance, dealias=self.dealias,
                            monitor_policy=self.monitor_policy)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["grid"] = self.grid.to_dict()
        d["duffing"] = {k: getattr(self.duffing, k) for k in ("m", "B", "C", "A", "omega")}
        d["snapshot_times"] = list(self.snapshot_times)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SharedSetup":
        d = dict(d)
        d["grid"] = make_grid(**d["grid"])
        d["duffing"] = DuffingParams(**d["duffing"])
        d["snapshot_times"] = tuple(d.get("snapshot_times", ()))
        return cls(**d)


@dataclass
class PointResult:
    raw: GCurve
    averaged: GCurve
    snapshots: dict[float, WignerState]
    final: WignerState
    config: SolverConfig
    violations: list[str] = field(default_factory=list)


def run_point(hbar: float, D: float, shared: SharedSetup) -> PointResult:
    """Evolve one (hbar, D) point and collect its diagnostic curves."""
    params = shared.model(hbar, D)
    initial = gaussian_initial(shared.grid, shared.initial_spec(hbar))
    config = shared.solver_config(params)
    curve = GCurve(params)
    snapshots: dict[float, WignerState] = {}
    snap_set = set(shared.snapshot_times)

    _, parts0 = rhs(initial, params, config.dealias)
    curve.append(make_record(initial, parts0, hbar))
    if 0.0 in snap_set:
        snapshots[0.0] = initial

    def on_sample(state: WignerState, parts) -> None:
        curve.append(make_record(state, parts, hbar))
        for s in snap_set:
            if abs(state.t - s) <= 1e-9 * max(1.0, s):
                snapshots[s] = state

    log.info("run_point hbar=%g D=%g zeta0=%g dt=%.3g steps=%d", hbar, D, params.zeta0,
             config.dt, int(round(config.t_final / config.dt)))
    violations: list[str] = []
    final = evolve(initial, params, config, on_sample, violations)
    for v in violations:
        log.warning("hbar=%g D=%g: %s", hbar, D, v)
    averaged = period_average(curve, shared.duffing.period)
    return PointResult(curve, averaged, snapshots, final, config, violations)


def zeta_key(hbar: float, D: float) -> float:
    return float(f"{hbar * hbar / D:.12g}")


@dataclass
class SweepPlan:
    points: list[tuple[float, float]]
    shared: SharedSetup = field(default_factory=SharedSetup)

    @property
    def grouping(self) -> dict[float, list[tuple[float, float]]]:
        groups: dict[float, list[tuple[float, float]]] = {}
        for hbar, D in self.points:
            groups.setdefault(zeta_key(hbar, D), []).append((hbar, D))
        return groups

    def with_common_dt(self) -> "SweepPlan":
        """Pin one dt (the most restrictive suggestion) so all points share numerics."""
        if not self.points or self.shared.dt is not None:
            return self
        s = self.shared
        dt = min(suggest_dt(s.grid, s.model(h, D), s.scheme) for h, D in self.points)
        return SweepPlan(list(self.points), replace(s, dt=s.fit_dt(dt)[0]))


def pair_family(zeta0: float, hbar: float, count: int = 2, scale: float = 2.0) -> list[tuple[float, float]]:
    """Points with equal zeta0: hbar -> s*hbar, D -> s^2 D."""
    D = hbar * hbar / zeta0
    return [(hbar * scale ** j, D * scale ** (2 * j)) for j in range(count)]


def make_plan(base: dict[float, float], shared: SharedSetup | None = None,
              count: int = 2, scale: float = 2.0) -> SweepPlan:
    """Plan with ``count`` same-zeta0 points per entry of ``base`` (zeta0 -> first hbar)."""
    points = []
    for zeta0, hbar in base.items():
        points.extend(pair_family(zeta0, hbar, count, scale))
    return SweepPlan(points, shared or SharedSetup())


def point_label(hbar: float, D: float) -> str:
    return f"hbar{hbar:.6g}_D{D:.6g}".replace("+", "")


@dataclass
class SweepResult:
    curves: dict[float, list[GCurve]]
    ran: int = 0
    skipped: int = 0
    failures: dict[str, str] = field(default_factory=dict)
    violations: dict[str, list[str]] = field(default_factory=dict)

    def summary(self) -> str:
        line = f"{self.ran} jobs run, {self.skipped} skipped"
        if self.failures:
            line += f", {len(self.failures)} failed: " + "; ".join(
                f"{k}: {v}" for k, v in sorted(self.failures.items()))
        return line


def _sweep_job(hbar: float, D: float, shared: SharedSetup, outdir: str) -> str:
    from . import fileio

    result = run_point(hbar, D, shared)
    base = Path(outdir) / point_label(hbar, D)
    fileio.write_point(result, shared, base)
    return str(base)


def run_sweep(plan: SweepPlan, outdir: str | os.PathLike, workers: int = 1,
              resume: bool = True) -> SweepResult:
    """Run every point not already on disk; returns curves grouped by zeta0.

    Each point is persisted as soon as it finishes, so an interrupted sweep
    picks up where it stopped.  A failing point is recorded and skipped.
    """
    from . import fileio

    plan = plan.with_common_dt()
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    result = SweepResult({})
    todo = []
    for hbar, D in plan.points:
        base = outdir / point_label(hbar, D)
        if resume and fileio.point_complete(base, plan.shared, hbar, D):
            result.skipped += 1
        else:
            todo.append((hbar, D))
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_sweep_job, h, D, plan.shared, str(outdir)): (h, D) for h, D in todo}
            for fut, (h, D) in futures.items():
                try:
                    fut.result()
                    result.ran += 1
                except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
                    result.failures[point_label(h, D)] = f"{type(exc).__name__}: {exc}"
    else:
        for h, D in todo:
            try:
                _sweep_job(h, D, plan.shared, str(outdir))
                result.ran += 1
            except Exception as exc:  # noqa: BLE001
                log.warning("point %s failed: %s", point_label(h, D), exc)
                result.failures[point_label(h, D)] = f"{type(exc).__name__}: {exc}"
    for hbar, D in plan.points:
        base = outdir / point_label(hbar, D)
        if point_label(hbar, D) in result.failures:
            continue
        curve, header = fileio.read_curve_with_header(fileio.curve_path(base))
        if header["config"].get("violations"):
            result.violations[point_label(hbar, D)] = list(header["config"]["violations"])
        result.curves.setdefault(zeta_key(hbar, D), []).append(curve)
    return result


def averaged(curve: GCurve, period: float | None = None) -> GCurve:
    return period_average(curve, period or curve.params.duffing.period)


def relative_l2(t_a: np.ndarray, a: np.ndarray, t_b: np.ndarray, b: np.ndarray,
                t_range: tuple[float, float] | None = None) -> float:
    """||a - b|| / sqrt(||a|| ||b||) in L2(dt) over the shared time range."""
    lo = max(t_a[0], t_b[0])
    hi = min(t_a[-1], t_b[-1])
    if t_range is not None:
        lo, hi = max(lo, t_range[0]), min(hi, t_range[1])
    t = np.union1d(t_a[(t_a >= lo) & (t_a <= hi)], t_b[(t_b >= lo) & (t_b <= hi)])
    ya = np.interp(t, t_a, a)
    yb = np.interp(t, t_b, b)
    norm = lambda y: math.sqrt(np.trapezoid(y * y, t))  # noqa: E731
    return norm(ya - yb) / math.sqrt(norm(ya) * norm(yb))


def collapse_curves(curves: list[GCurve]) -> tuple[list[GCurve], dict[float, float]]:
    """Divide each curve's g by its own maximum; report the per-zeta0 maxima."""
    normalized = []
    maxima: dict[float, list[float]] = {}
    for c in curves:
        g = c.g
        peak = float(g.max()) if len(g) else 0.0
        if not peak > 0:
            raise ValueError(f"curve at zeta0={c.zeta0:g} has non-positive maximum {peak}")
        normalized.append(c.with_columns({"g": g / peak}))
        maxima.setdefault(float(f"{c.zeta0:.12g}"), []).append(peak)
    return normalized, {z: float(np.mean(v)) for z, v in maxima.items()}


def collapse_band(normalized: list[GCurve], t_final: float | None = None) -> float:
    """Half-width of the band holding all normalised curves after the latest peak."""
    t_start = max(float(c.t[np.argmax(c.g)]) for c in normalized)
    t_end = min(float(c.t[-1]) for c in normalized)
    if t_final is not None:
        t_end = min(t_end, t_final)
    t = np.unique(np.concatenate([c.t[(c.t >= t_start) & (c.t <= t_end)] for c in normalized]))
    stack = np.array([np.interp(t, c.t, c.g) for c in normalized])
    return float(0.5 * np.max(stack.max(axis=0) - stack.min(axis=0)))


@dataclass(frozen=True)
class FitResult:
    a: float
    b: float
    residual: float

    def model(self, zeta0):
        return saturation_model(zeta0, self.a, self.b)


def saturation_model(zeta0, a: float, b: float):
    z = np.asarray(zeta0, dtype=np.float64)
    return a * -np.expm1(-b * z * z)


def fit_saturation(max_values: dict[float, float], zeta_max: float = 2.0,
                   a_grid: np.ndarray | None = None, b_grid: np.ndarray | None = None) -> FitResult:
    """Least-squares fit of a*(1 - exp(-b*zeta0^2)) to peak G values with zeta0 <= zeta_max.

    A coarse log-spaced grid search seeds a bounded trust-region refinement.
    """
    pts = sorted((z, y) for z, y in max_values.items() if z <= zeta_max * (1 + 1e-12))
    if len(pts) < 4:
        raise FitError(f"need at least 4 distinct zeta0 <= {zeta_max:g}, got {len(pts)}")
    z = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.ptp(y) == 0 or not np.all(np.isfinite(y)):
        raise FitError("degenerate data: all peak values equal")
    a_grid = np.logspace(-2, 4, 121) if a_grid is None else a_grid
    b_grid = np.logspace(-5, 2, 141) if b_grid is None else b_grid
    shape = -np.expm1(-np.outer(b_grid, z * z))  # (nb, nz)
    sse = ((a_grid[:, None, None] * shape[None, :, :] - y) ** 2).sum(axis=2)
    ia, ib = np.unravel_index(np.argmin(sse), sse.shape)
    a, b = float(a_grid[ia]), float(b_grid[ib])

    fit = least_squares(lambda x: saturation_model(z, x[0], x[1]) - y, x0=[a, b],
                        bounds=([0.0, 0.0], [np.inf, np.inf]), method="trf",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10_000)
    a, b = (float(v) for v in fit.x)
    cost = float(fit.fun @ fit.fun)
    if not (a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b)):
        raise FitError(f"fit produced invalid parameters a={a}, b={b}")
    return FitResult(a, b, math.sqrt(cost / len(z)))


def peak_of_average(curve: GCurve) -> float:
    return float(averaged(curve).g.max())
