"""Right-hand side of the Wigner master equation for a driven Duffing oscillator.

    d rho/dt = L_c + L_q + T

L_c is the Poisson bracket {H, rho} = V'(q,t) d_p rho - (p/m) d_q rho, i.e. the
classical Liouville flow q' = p/m, p' = -V'.  With this convention a packet
with positive momentum advects toward +q.

L_q is the Moyal series

    sum_{n>=1} hbar^{2n} (-1)^n / (2^{2n} (2n+1)!) V^{(2n+1)}(q) d_p^{2n+1} rho

which terminates for polynomial potentials (n = 1 only for the quartic
Duffing well).  T is momentum diffusion D d_p^2 rho, optionally plus
D d_q^2 rho in the symmetric coupling mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.fft as sfft
from numpy.polynomial import Polynomial

from .grid import (PhaseSpaceField, PhaseSpaceGrid, WignerState, derivative_multiplier,
                   spectral_derivative)

COUPLINGS = ("momentum_only", "symmetric")


class NonTerminatingSeriesError(ValueError):
    """The potential is not a polynomial, so the Moyal series has no last term."""


def _require_finite(**values):
    for name, v in values.items():
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v}")


@dataclass(frozen=True)
class DuffingParams:
    """H = p^2/2m - B q^2 + (C/2) q^4 + A q cos(omega t)."""

    m: float = 1.0
    B: float = 10.0
    C: float = 1.0
    A: float = 1.0
    omega: float = 5.35

    def __post_init__(self):
        _require_finite(m=self.m, B=self.B, C=self.C, A=self.A, omega=self.omega)
        if self.m <= 0:
            raise ValueError(f"mass m must be positive, got {self.m}")
        if self.C <= 0:
            raise ValueError(f"quartic coefficient C must be positive, got {self.C}")
        if self.omega <= 0:
            raise ValueError(f"drive frequency omega must be positive, got {self.omega}")

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    def polynomial(self, t: float) -> Polynomial:
        """V(q, t) as a polynomial in q."""
        return Polynomial([0.0, self.A * math.cos(self.omega * t), -self.B, 0.0, 0.5 * self.C])

    def energy(self, q, p, t: float = 0.0):
        return p ** 2 / (2.0 * self.m) + self.polynomial(t)(q)


@dataclass(frozen=True)
class BathParams:
    hbar: float
    D: float
    coupling: str = "momentum_only"

    def __post_init__(self):
        _require_finite(hbar=self.hbar, D=self.D)
        if self.hbar <= 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        if self.D < 0:
            raise ValueError(f"diffusion D must be non-negative, got {self.D}")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}, got {self.coupling!r}")

    @property
    def zeta0(self) -> float:
        if self.D == 0:
            raise ZeroDivisionError("zeta0 = hbar^2/D is undefined for D = 0")
        return self.hbar ** 2 / self.D


@dataclass(frozen=True)
class ModelParams:
    duffing: DuffingParams = field(default_factory=DuffingParams)
    bath: BathParams = field(default_factory=lambda: BathParams(0.1, 0.01))

    @property
    def zeta0(self) -> float:
        return self.bath.zeta0

    def with_bath(self, hbar: float | None = None, D: float | None = None) -> "ModelParams":
        b = self.bath
        return ModelParams(self.duffing, BathParams(b.hbar if hbar is None else hbar,
                                                    b.D if D is None else D, b.coupling))


def potential_derivative(duffing: DuffingParams, t: float, order: int, q):
    """Exact ``order``-th q-derivative of the potential at time ``t``."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    _require_finite(t=float(t))
    return duffing.polynomial(t).deriv(order)(q)


def moyal_coefficients(potential, hbar: float, t: float) -> list[tuple[int, Polynomial]]:
    """Non-vanishing terms of the Moyal series as (p-derivative order, q-polynomial).

    The loop runs until the potential derivative is identically zero; it
    never truncates a non-zero term.
    """
    if not hasattr(potential, "polynomial"):
        raise NonTerminatingSeriesError(
            f"{type(potential).__name__} is not a polynomial potential; "
            "its Moyal series does not terminate")
    poly = potential.polynomial(t)
    terms = []
    n = 1
    while True:
        order = 2 * n + 1
        dv = poly.deriv(order)
        if not np.any(dv.coef):
            break
        prefactor = hbar ** (2 * n) * (-1) ** n / (2 ** (2 * n) * math.factorial(order))
        terms.append((order, prefactor * dv))
        n += 1
    return terms


@dataclass(frozen=True, eq=False)
class TermCoefficients:
    """q-dependent coefficient columns of the three terms at one time."""

    t: float
    force: np.ndarray  # V'(q, t)
    moyal: tuple[tuple[int, np.ndarray], ...]
    velocity: np.ndarray  # p / m


@lru_cache(maxsize=16)
def term_coefficients(grid: PhaseSpaceGrid, params: ModelParams, t: float) -> TermCoefficients:
    q = grid.q
    force = potential_derivative(params.duffing, t, 1, q)
    moyal = tuple((order, np.asarray(poly(q), dtype=np.float64))
                  for order, poly in moyal_coefficients(params.duffing, params.bath.hbar, t))
    arrays = [force, grid.p / params.duffing.m] + [c for _, c in moyal]
    for a in arrays:
        a.flags.writeable = False
    return TermCoefficients(float(t), force, moyal, arrays[1])


def liouville_term(state: WignerState, params: ModelParams, dealias: bool = False) -> PhaseSpaceField:
    """L_c = V'(q,t) d_p rho - (p/m) d_q rho."""
    rho = state.field
    c = term_coefficients(rho.grid, params, state.t)
    dp = spectral_derivative(rho, "p", 1, dealias).values
    dq = spectral_derivative(rho, "q", 1, dealias).values
    return PhaseSpaceField(rho.grid, c.force[:, None] * dp - c.velocity[None, :] * dq)


def quantum_term(state: WignerState, params: ModelParams, dealias: bool = False) -> PhaseSpaceField:
    """Terminated Moyal sum L_q."""
    rho = state.field
    c = term_coefficients(rho.grid, params, state.t)
    out = np.zeros(rho.grid.shape)
    if not c.moyal:
        return PhaseSpaceField(rho.grid, out)
    spec = sfft.rfft(rho.values, axis=1)
    kp = rho.grid.wavenumbers("p")
    for order, coef in c.moyal:
        mult = derivative_multiplier(kp, order, dealias)
        out += coef[:, None] * sfft.irfft(spec * mult[None, :], n=rho.grid.n_p, axis=1)
    return PhaseSpaceField(rho.grid, out)


def diffusion_term(state: WignerState, params: ModelParams, dealias: bool = False) -> PhaseSpaceField:
    rho = state.field
    D = params.bath.D
    if D == 0:
        return PhaseSpaceField.zeros(rho.grid)
    out = D * spectral_derivative(rho, "p", 2, dealias).values
    if params.bath.coupling == "symmetric":
        out = out + D * spectral_derivative(rho, "q", 2, dealias).values
    return PhaseSpaceField(rho.grid, out)


class RhsParts(NamedTuple):
    lc: PhaseSpaceField
    lq: PhaseSpaceField
    tt: PhaseSpaceField


def rhs(state: WignerState, params: ModelParams,
        dealias: bool = False) -> tuple[PhaseSpaceField, RhsParts]:
    parts = RhsParts(liouville_term(state, params, dealias),
                     quantum_term(state, params, dealias),
                     diffusion_term(state, params, dealias))
    total = PhaseSpaceField(state.grid, parts.lc.values + parts.lq.values + parts.tt.values)
    return total, parts


class RhsKernel:
    """Fused evaluation of the full right-hand side on raw arrays.

    Every p-derivative term has a coefficient depending on q only, so the
    whole p-part is one diagonal multiplier in (q, k_p).  Used by the time
    stepper; agrees with :func:`rhs` to rounding error.
    """

    def __init__(self, grid: PhaseSpaceGrid, params: ModelParams, dealias: bool = False):
        self.grid = grid
        self.params = params
        self.dealias = dealias
        kp = grid.wavenumbers("p")
        kq = grid.wavenumbers("q")
        self._dp1 = derivative_multiplier(kp, 1, dealias)[None, :]
        self._dq1 = derivative_multiplier(kq, 1, dealias)[:, None]
        coefs = term_coefficients(grid, params, 0.0)
        # Only the force column carries the drive; the rest is time independent.
        static = np.zeros((grid.n_q, kp.size), dtype=np.complex128)
        for order, coef in coefs.moyal:
            static += coef[:, None] * derivative_multiplier(kp, order, dealias)[None, :]
        D = params.bath.D
        if D:
            static += D * derivative_multiplier(kp, 2, dealias)[None, :]
        self._static = static
        self._q_diff = None
        if D and params.bath.coupling == "symmetric":
            self._q_diff = D * derivative_multiplier(kq, 2, dealias)[:, None]
        self._velocity = grid.p[None, :] / params.duffing.m
        self._mult_cache: dict[float, np.ndarray] = {}

    def p_multiplier(self, t: float) -> np.ndarray:
        mult = self._mult_cache.get(t)
        if mult is None:
            force = potential_derivative(self.params.duffing, t, 1, self.grid.q)
            mult = force[:, None] * self._dp1 + self._static
            if len(self._mult_cache) >= 4:
                self._mult_cache.pop(next(iter(self._mult_cache)))
            self._mult_cache[t] = mult
        return mult

    def __call__(self, values: np.ndarray, t: float) -> np.ndarray:
        g = self.grid
        out = sfft.irfft(sfft.rfft(values, axis=1) * self.p_multiplier(t), n=g.n_p, axis=1)
        spec_q = sfft.rfft(values, axis=0)
        out -= self._velocity * sfft.irfft(spec_q * self._dq1, n=g.n_q, axis=0)
        if self._q_diff is not None:
            out += sfft.irfft(spec_q * self._q_diff, n=g.n_q, axis=0)
        return out
