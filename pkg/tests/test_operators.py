import math
from dataclasses import dataclass

import numpy as np
import pytest
from numpy.polynomial import Polynomial

from wigner_qc.grid import PhaseSpaceField, integrate, make_grid
from wigner_qc.operators import (BathParams, DuffingParams, ModelParams, NonTerminatingSeriesError,
                                 RhsKernel, diffusion_term, liouville_term, moyal_coefficients,
                                 potential_derivative, quantum_term, rhs)

from conftest import gaussian_field, state_of

PAPER_DUFFING = DuffingParams(m=1, B=10, C=1, A=1, omega=5.35)


@dataclass(frozen=True)
class FreeParticle(DuffingParams):
    """V = 0; bypasses the C > 0 bound that only the Duffing well needs."""

    def __post_init__(self):
        pass

    def polynomial(self, t):
        return Polynomial([0.0])


@dataclass(frozen=True)
class SexticWell(DuffingParams):
    def polynomial(self, t):
        return Polynomial([0.0, 0.0, -1.0, 0.0, 0.5, 0.0, 0.1])


class CosinePotential:
    m = 1.0


def params(hbar=0.1, D=0.01, duffing=PAPER_DUFFING, coupling="momentum_only"):
    return ModelParams(duffing, BathParams(hbar, D, coupling))


def test_potential_derivative_examples():
    assert potential_derivative(PAPER_DUFFING, 0.0, 1, 1.0) == pytest.approx(-17.0)
    for q in (-2.0, 0.3, 4.0):
        for t in (0.0, 1.3):
            assert potential_derivative(PAPER_DUFFING, t, 3, q) == pytest.approx(12 * q)
            assert potential_derivative(PAPER_DUFFING, t, 5, q) == 0.0


def test_potential_derivative_rejects_order_zero():
    with pytest.raises(ValueError):
        potential_derivative(PAPER_DUFFING, 0.0, 0, 1.0)


def test_duffing_validation():
    with pytest.raises(ValueError):
        DuffingParams(C=0.0)
    with pytest.raises(ValueError):
        DuffingParams(m=-1.0)
    with pytest.raises(ValueError):
        DuffingParams(omega=0.0)
    with pytest.raises(ValueError):
        BathParams(hbar=0.0, D=0.1)
    with pytest.raises(ValueError):
        BathParams(hbar=0.1, D=-1.0)
    with pytest.raises(ZeroDivisionError):
        BathParams(0.1, 0.0).zeta0
    assert BathParams(0.01, 5e-4).zeta0 == pytest.approx(0.2)
    assert BathParams(0.125, 1.5625e-3).zeta0 == pytest.approx(10.0)


def test_moyal_series_terminates_for_quartic():
    terms = moyal_coefficients(PAPER_DUFFING, 0.1, 0.0)
    assert [order for order, _ in terms] == [3]
    # -(hbar^2/24) * 12 C q = -(hbar^2 C / 2) q
    assert terms[0][1](2.0) == pytest.approx(-(0.01 / 2) * 2.0)


def test_moyal_series_keeps_every_nonzero_term():
    terms = moyal_coefficients(SexticWell(), 0.2, 0.0)
    assert [order for order, _ in terms] == [3, 5]
    # n = 2: hbar^4 / (16 * 5!) * V^(5), V^(5) = 0.1 * 720 q
    assert terms[1][1](1.0) == pytest.approx(0.2 ** 4 / (16 * 120) * 72.0)


def test_non_polynomial_potential_is_refused(small_grid):
    with pytest.raises(NonTerminatingSeriesError):
        moyal_coefficients(CosinePotential(), 0.1, 0.0)


def test_liouville_of_constant_is_zero(small_grid):
    s = state_of(PhaseSpaceField(small_grid, np.full(small_grid.shape, 0.3)))
    assert np.max(np.abs(liouville_term(s, params()).values)) < 1e-12


def test_terms_integrate_to_zero(default_grid):
    s = state_of(gaussian_field(default_grid, 0.4, -0.5, 0.4, 0.7), t=0.37)
    p = params(0.3, 0.02, coupling="symmetric")
    norm = s.field.norm()
    for term in (liouville_term, quantum_term, diffusion_term):
        assert abs(integrate(term(s, p))) <= 1e-10 * norm


def _free_params():
    return params(1e-200, 0.0, FreeParticle(m=1.0))


def test_free_particle_advection_follows_characteristics():
    g = make_grid(-6, 6, -6, 6, 256, 128)
    rho0 = gaussian_field(g, -1.0, 1.5, 0.4, 0.5)
    s = state_of(rho0)
    lc = liouville_term(s, _free_params())

    def exact(dt):
        return gaussian_field(g, -1.0, 1.5, 0.4, 0.5).values if dt == 0 else \
            PhaseSpaceField.from_function(
                g, lambda q, p: np.exp(-((q - p * dt) + 1.0) ** 2 / (2 * 0.4 ** 2) - (p - 1.5) ** 2 / (2 * 0.5 ** 2))
                / (2 * math.pi * 0.4 * 0.5)).values

    errs = []
    for dt in (0.02, 0.01, 0.005):
        euler = rho0.values + dt * lc.values
        errs.append(np.max(np.abs(euler - exact(dt))))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    assert all(3.6 < r < 4.4 for r in ratios), ratios
    # right-moving packet: density grows ahead of the centre (q > q0)
    ahead = np.argmin(np.abs(g.q - (-0.6)))
    behind = np.argmin(np.abs(g.q - (-1.4)))
    jp = np.argmin(np.abs(g.p - 1.5))
    assert lc.values[ahead, jp] > 0 > lc.values[behind, jp]


def test_quantum_term_vanishes_as_hbar_goes_to_zero(default_grid):
    s = state_of(gaussian_field(default_grid, 0.0, 0.0, 0.3, 0.4))
    assert np.max(np.abs(quantum_term(s, params(1e-200, 0.01)).values)) == 0.0


def test_quantum_term_matches_closed_form_gaussian(default_grid):
    g = default_grid
    q0, p0, sq, sp = 0.2, 0.5, 0.5, 0.6
    s = state_of(gaussian_field(g, q0, p0, sq, sp))
    lq = quantum_term(s, params(0.1, 0.01)).values
    q, p = g.mesh()
    x = p - p0
    third = s.values * (3 * x / sp ** 4 - x ** 3 / sp ** 6)
    expect = -(0.005 * q) * third
    assert np.max(np.abs(lq - expect)) <= 1e-6 * np.max(np.abs(expect))


def test_quantum_term_trace_is_zero(default_grid):
    s = state_of(gaussian_field(default_grid, 1.0, -2.0, 0.3, 0.5))
    lq = quantum_term(s, params(0.125, 1e-3))
    assert abs(integrate(lq)) <= 1e-10 * s.field.norm()


def test_quantum_term_scales_as_hbar_squared(default_grid):
    s = state_of(gaussian_field(default_grid, 1.0, -2.0, 0.3, 0.5))
    a = quantum_term(s, params(0.05, 1e-3)).values
    b = quantum_term(s, params(0.1, 1e-3)).values
    assert np.max(np.abs(b - 4 * a)) <= 1e-14 * np.max(np.abs(b))


def test_diffusion_term_closed_form(default_grid):
    g = default_grid
    p0, sp = -0.5, 0.7
    s = state_of(gaussian_field(g, 0.0, p0, 0.5, sp))
    D = 0.03
    tt = diffusion_term(s, params(0.1, D)).values
    _, p = g.mesh()
    expect = D * s.values * ((p - p0) ** 2 / sp ** 4 - 1 / sp ** 2)
    assert np.max(np.abs(tt - expect)) < 1e-8
    assert np.max(np.abs(diffusion_term(s, params(0.1, 0.0)).values)) == 0.0


def test_symmetric_coupling_adds_q_diffusion(default_grid):
    s = state_of(gaussian_field(default_grid, 0.0, 0.0, 0.5, 0.7))
    mom = diffusion_term(s, params(0.1, 0.02)).values
    sym = diffusion_term(s, params(0.1, 0.02, coupling="symmetric")).values
    q, _ = default_grid.mesh()
    expect_q = 0.02 * s.values * (q ** 2 / 0.25 ** 2 - 1 / 0.25)
    assert np.max(np.abs(sym - mom - expect_q)) < 1e-8


def test_diffusion_dissipates(default_grid):
    rng = np.random.default_rng(3)
    base = gaussian_field(default_grid, 0.5, 1.0, 0.4, 0.6).values
    rho = PhaseSpaceField(default_grid, base * (1 + 0.3 * rng.normal(size=base.shape)))
    tt = diffusion_term(state_of(rho), params(0.1, 0.05, coupling="symmetric"))
    assert integrate(rho * tt) <= 0


def test_rhs_total_is_sum_of_parts(default_grid):
    s = state_of(gaussian_field(default_grid, 0.5, 1.0, 0.4, 0.6), t=0.8)
    total, parts = rhs(s, params(0.1, 0.01))
    assert np.array_equal(total.values, parts.lc.values + parts.lq.values + parts.tt.values)
    t_classical, parts_c = rhs(s, params(1e-200, 0.0))
    assert np.array_equal(t_classical.values, liouville_term(s, params(1e-200, 0.0)).values)


def test_fused_kernel_agrees_with_parts(default_grid):
    s = state_of(gaussian_field(default_grid, 0.5, 1.0, 0.4, 0.6), t=0.8)
    for coupling in ("momentum_only", "symmetric"):
        p = params(0.2, 0.01, coupling=coupling)
        total, _ = rhs(s, p)
        fused = RhsKernel(default_grid, p)(np.array(s.values), s.t)
        assert np.max(np.abs(fused - total.values)) <= 1e-12 * np.max(np.abs(total.values))


def test_thermal_state_is_stationary():
    # exp(-H/T0) is a function of H only, hence a Liouville equilibrium for A = 0.
    g = make_grid(-6, 6, -12, 12, 256, 256)
    duff = DuffingParams(A=0.0)
    q, p = g.mesh()
    h = duff.energy(q, p)
    rho = PhaseSpaceField(g, np.exp(-(h - h.min()) / 2.0))
    s = state_of(rho)
    total, _ = rhs(s, params(1e-200, 0.0, duff))
    assert total.norm() <= 1e-6 * rho.norm()


def test_liouville_commutes_with_parity():
    g = make_grid(-6, 6, -12, 12, 128, 128)
    idx_q = (-np.arange(g.n_q)) % g.n_q
    idx_p = (-np.arange(g.n_p)) % g.n_p
    rng = np.random.default_rng(7)
    base = gaussian_field(g, 0.7, -1.2, 0.5, 0.8).values * (1 + 0.1 * rng.normal(size=g.shape))
    rho = PhaseSpaceField(g, base)
    flipped = PhaseSpaceField(g, base[np.ix_(idx_q, idx_p)])
    p = params(0.1, 0.0, DuffingParams(A=0.0))
    a = liouville_term(state_of(flipped), p).values
    b = liouville_term(state_of(rho), p).values[np.ix_(idx_q, idx_p)]
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(b))
