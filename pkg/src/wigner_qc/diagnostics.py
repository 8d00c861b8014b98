"""The G(t) measure, period averaging, purity, and per-term magnitudes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import PhaseSpaceField, PhaseSpaceGrid, WignerState, integrate, l2_functional
from .operators import ModelParams, RhsParts

ZERO_EVOLUTION_FLOOR = 1e-30
RECORD_COLUMNS = ("t", "g", "tr_lc2", "tr_lq2", "tr_t2", "tr_rhs2", "purity", "entropy_s2", "mass")


class ZeroEvolutionError(ArithmeticError):
    """G is 0/0 for a stationary distribution."""


@dataclass(frozen=True)
class DiagnosticRecord:
    t: float
    g: float
    tr_lc2: float
    tr_lq2: float
    tr_t2: float
    tr_rhs2: float
    purity: float
    entropy_s2: float
    mass: float

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in RECORD_COLUMNS)


@dataclass
class GCurve:
    params: ModelParams
    samples: list[DiagnosticRecord] = field(default_factory=list)

    def __post_init__(self):
        ts = [s.t for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("curve samples must be strictly increasing in t")

    @property
    def zeta0(self) -> float:
        return self.params.zeta0

    def __len__(self) -> int:
        return len(self.samples)

    def column(self, name: str) -> np.ndarray:
        if name not in RECORD_COLUMNS:
            raise KeyError(name)
        return np.array([getattr(s, name) for s in self.samples], dtype=np.float64)

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    @property
    def g(self) -> np.ndarray:
        return self.column("g")

    def append(self, record: DiagnosticRecord) -> None:
        if self.samples and record.t <= self.samples[-1].t:
            raise ValueError(f"sample at t={record.t} does not follow t={self.samples[-1].t}")
        self.samples.append(record)

    def with_columns(self, columns: dict[str, np.ndarray]) -> "GCurve":
        """Copy of the curve with selected columns replaced."""
        rows = []
        for i, s in enumerate(self.samples):
            rows.append(replace(s, **{k: float(v[i]) for k, v in columns.items()}))
        return GCurve(self.params, rows)


def g_measure(parts: RhsParts, grid: PhaseSpaceGrid | None = None) -> float:
    """Tr[L_q^2] / Tr[(d rho/dt)^2]."""
    num, den = _g_terms(parts)
    return num / den


def _g_terms(parts: RhsParts) -> tuple[float, float]:
    lc, lq, tt = parts
    total = PhaseSpaceField(lc.grid, lc.values + lq.values + tt.values)
    den = l2_functional(total)
    if den < ZERO_EVOLUTION_FLOOR:
        raise ZeroEvolutionError(f"Tr[(d rho/dt)^2] = {den:.3e}; G is undefined")
    return l2_functional(lq), den


def term_magnitudes(parts: RhsParts, grid: PhaseSpaceGrid | None = None) -> tuple[float, float, float]:
    return l2_functional(parts.lc), l2_functional(parts.lq), l2_functional(parts.tt)


def purity_entropy(state: WignerState, hbar: float) -> tuple[float, float]:
    """Purity 2*pi*hbar * integral(rho^2), normalised so pure states read 1, and S2 = ln P."""
    purity = 2.0 * math.pi * hbar * l2_functional(state.field)
    if not purity > 0:
        raise ValueError(f"purity must be positive, got {purity}")
    return purity, math.log(purity)


def make_record(state: WignerState, parts: RhsParts, hbar: float) -> DiagnosticRecord:
    tr_lc2, tr_lq2, tr_t2 = term_magnitudes(parts)
    num, den = _g_terms(parts)
    purity, s2 = purity_entropy(state, hbar)
    return DiagnosticRecord(t=state.t, g=num / den, tr_lc2=tr_lc2, tr_lq2=tr_lq2, tr_t2=tr_t2,
                            tr_rhs2=den, purity=purity, entropy_s2=s2, mass=integrate(state.field))


def windowed_average(t: np.ndarray, y: np.ndarray, period: float) -> np.ndarray:
    """Centred trapezoidal average of y over [t - period/2, t + period/2], clipped to the data."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    # Cumulative trapezoid lets every window be a difference of two values.
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))])

    def integral_to(x):
        i = np.clip(np.searchsorted(t, x, side="right") - 1, 0, len(t) - 2)
        frac = x - t[i]
        h = t[i + 1] - t[i]
        slope = (y[i + 1] - y[i]) / h
        return cum[i] + y[i] * frac + 0.5 * slope * frac ** 2

    lo = np.maximum(t - 0.5 * period, t[0])
    hi = np.minimum(t + 0.5 * period, t[-1])
    return (integral_to(hi) - integral_to(lo)) / (hi - lo)


def period_average(curve: GCurve, period: float, min_per_period: int = 8) -> GCurve:
    """Every column except t replaced by its one-period centred running mean."""
    t = curve.t
    if len(t) < 2 or t[-1] - t[0] < period * (1 - 1e-9):
        raise ValueError(f"curve spans {t[-1] - t[0] if len(t) else 0:.4g}, less than one period {period:.4g}")
    cadence = period / np.max(np.diff(t))
    if cadence < min_per_period * (1 - 1e-9):
        raise ValueError(f"sampling cadence {cadence:.2f}/period is below {min_per_period}")
    cols = {c: windowed_average(t, curve.column(c), period) for c in RECORD_COLUMNS if c != "t"}
    return curve.with_columns(cols)


@dataclass(frozen=True)
class StageProfile:
    """Shape summary of a period-averaged G curve (rise, peak, decay, plateau)."""

    t_peak: float
    g_peak: float
    unique_peak: bool
    decay_factor: float  # peak / minimum after the peak
    peak_decay_slope: float  # steepest one-period slope of ln G after the peak (negative)
    final_slope: float  # least-squares slope of ln G over the final quarter

    @property
    def rises(self) -> bool:
        return self.t_peak > 0

    @property
    def plateau_ratio(self) -> float:
        return abs(self.final_slope) / abs(self.peak_decay_slope) if self.peak_decay_slope else math.inf

    def passes(self, decay: float = 2.0, plateau: float = 0.1) -> bool:
        return (self.rises and self.unique_peak and self.decay_factor >= decay
                and self.plateau_ratio < plateau)


def stage_profile(t: np.ndarray, g: np.ndarray, window: float) -> StageProfile:
    t = np.asarray(t, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    i_peak = int(np.argmax(g))
    unique = bool(np.count_nonzero(g == g[i_peak]) == 1)
    after = g[i_peak:]
    decay_factor = float(g[i_peak] / after.min()) if after.min() > 0 else math.inf
    logg = np.log(np.clip(g, 1e-300, None))
    steepest = 0.0
    t_after = t[i_peak:]
    for start in t_after:
        sel = (t >= start) & (t <= start + window)
        if start + window > t[-1] or np.count_nonzero(sel) < 3:
            break
        slope = np.polyfit(t[sel], logg[sel], 1)[0]
        steepest = min(steepest, slope)
    quarter = t >= t[0] + 0.75 * (t[-1] - t[0])
    final = float(np.polyfit(t[quarter], logg[quarter], 1)[0]) if np.count_nonzero(quarter) >= 2 else 0.0
    return StageProfile(float(t[i_peak]), float(g[i_peak]), unique, decay_factor, float(steepest), final)
