"""Periodic phase-space lattice, fields on it, and spectral calculus.

Fields are stored as real arrays of shape ``(n_q, n_p)`` (row = q index,
column = p index).  Derivatives are taken with real-to-complex FFTs along a
single axis, so the inverse transform is real by construction: the only
place an imaginary component can arise is the Nyquist bin, which ``irfft``
discards.  Odd-order derivatives zero that bin explicitly so that the
derivative of a real field stays an odd operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

AXES = {"q": 0, "p": 1}
MIN_POINTS = 16


class FieldError(ValueError):
    """Raised for non-finite or mis-shaped field data."""


@dataclass(frozen=True)
class PhaseSpaceGrid:
    q_min: float
    q_max: float
    p_min: float
    p_max: float
    n_q: int
    n_p: int

    def __post_init__(self):
        extents = (self.q_min, self.q_max, self.p_min, self.p_max)
        if not all(math.isfinite(float(x)) for x in extents):
            raise ValueError(f"grid extents must be finite, got {extents}")
        if not self.q_max > self.q_min:
            raise ValueError(f"q_max ({self.q_max}) must exceed q_min ({self.q_min})")
        if not self.p_max > self.p_min:
            raise ValueError(f"p_max ({self.p_max}) must exceed p_min ({self.p_min})")
        for name in ("n_q", "n_p"):
            n = getattr(self, name)
            if int(n) != n or n < MIN_POINTS:
                raise ValueError(f"{name} must be an integer >= {MIN_POINTS}, got {n}")

    @property
    def dq(self) -> float:
        return (self.q_max - self.q_min) / self.n_q

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.n_p

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_q, self.n_p)

    @property
    def cell(self) -> float:
        """Area element dq*dp."""
        return self.dq * self.dp

    @property
    def area(self) -> float:
        return (self.q_max - self.q_min) * (self.p_max - self.p_min)

    @cached_property
    def q(self) -> np.ndarray:
        return self.q_min + np.arange(self.n_q) * self.dq

    @cached_property
    def p(self) -> np.ndarray:
        return self.p_min + np.arange(self.n_p) * self.dp

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Broadcastable (q, p) coordinate columns of shape (n_q, 1) and (1, n_p)."""
        return self.q[:, None], self.p[None, :]

    def wavenumbers(self, axis: str) -> np.ndarray:
        """Non-negative angular wavenumbers of the real FFT along ``axis``."""
        n, d = (self.n_q, self.dq) if axis == "q" else (self.n_p, self.dp)
        return 2.0 * np.pi * sfft.rfftfreq(n, d)

    def k_max(self, axis: str) -> float:
        return float(self.wavenumbers(axis).max())

    def to_dict(self) -> dict:
        return {
            "q_min": self.q_min, "q_max": self.q_max,
            "p_min": self.p_min, "p_max": self.p_max,
            "n_q": self.n_q, "n_p": self.n_p,
        }


def make_grid(q_min: float, q_max: float, p_min: float, p_max: float,
              n_q: int, n_p: int) -> PhaseSpaceGrid:
    return PhaseSpaceGrid(float(q_min), float(q_max), float(p_min), float(p_max),
                          int(n_q), int(n_p))


def _checked(values: np.ndarray) -> np.ndarray:
    if not np.isfinite(values).all():
        raise FieldError("field contains non-finite values")
    return values


@dataclass(frozen=True, eq=False)
class PhaseSpaceField:
    """Real samples on a grid.  The array is made read-only on construction."""

    grid: PhaseSpaceGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.shape != self.grid.shape:
            raise FieldError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        _checked(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: PhaseSpaceGrid) -> "PhaseSpaceField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: PhaseSpaceGrid, func) -> "PhaseSpaceField":
        q, p = grid.mesh()
        return cls(grid, np.broadcast_to(func(q, p), grid.shape))

    def _coerce(self, other) -> np.ndarray | float:
        if isinstance(other, PhaseSpaceField):
            if other.grid != self.grid:
                raise FieldError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return PhaseSpaceField(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return PhaseSpaceField(self.grid, self.values - self._coerce(other))

    def __mul__(self, other):
        return PhaseSpaceField(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __neg__(self):
        return PhaseSpaceField(self.grid, -self.values)

    def norm(self) -> float:
        """L2 norm, sqrt of :func:`l2_functional`."""
        return math.sqrt(l2_functional(self))


@dataclass(frozen=True, eq=False)
class WignerState:
    field: PhaseSpaceField
    t: float
    mass0: float

    @classmethod
    def initial(cls, field: PhaseSpaceField, t: float = 0.0) -> "WignerState":
        return cls(field, float(t), integrate(field))

    @property
    def grid(self) -> PhaseSpaceGrid:
        return self.field.grid

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    def mass(self) -> float:
        return integrate(self.field)


def integrate(f: PhaseSpaceField) -> float:
    """Phase-space integral (trace) of a field on the periodic lattice."""
    s = math.fsum(_checked(f.values).sum(axis=1))
    return s * f.grid.cell


def l2_functional(f: PhaseSpaceField) -> float:
    """Integral of the squared field."""
    v = _checked(f.values)
    return float(np.einsum("ij,ij->", v, v)) * f.grid.cell


def dealias_mask(k: np.ndarray) -> np.ndarray:
    """2/3-rule mask for a real-FFT wavenumber vector."""
    return (np.abs(k) <= (2.0 / 3.0) * np.abs(k).max()).astype(np.float64)


def derivative_multiplier(k: np.ndarray, order: int, dealias: bool = False) -> np.ndarray:
    """Fourier symbol (ik)^order on rfft bins; Nyquist dropped for odd orders."""
    mult = (1j * k) ** order
    if order % 2 == 1 and len(k) > 1:
        mult[-1] = 0.0
    if dealias:
        mult = mult * dealias_mask(k)
    return mult


def apply_multiplier(values: np.ndarray, mult: np.ndarray, axis: int) -> np.ndarray:
    """Multiply the rfft of ``values`` along ``axis`` by ``mult`` and transform back."""
    n = values.shape[axis]
    spec = sfft.rfft(values, axis=axis)
    shape = [1, 1]
    shape[axis] = -1
    return sfft.irfft(spec * np.reshape(mult, shape), n=n, axis=axis)


def spectral_derivative(f: PhaseSpaceField, axis: str, order: int,
                        dealias: bool = False) -> PhaseSpaceField:
    """Fourier derivative of ``order`` (1..3) along ``axis`` ('q' or 'p')."""
    if axis not in AXES:
        raise ValueError(f"axis must be 'q' or 'p', got {axis!r}")
    if order not in (1, 2, 3):
        raise ValueError(f"derivative order must be 1, 2 or 3, got {order}")
    values = _checked(f.values)
    mult = derivative_multiplier(f.grid.wavenumbers(axis), order, dealias)
    return PhaseSpaceField(f.grid, apply_multiplier(values, mult, AXES[axis]))
