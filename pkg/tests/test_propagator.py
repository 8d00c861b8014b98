import math

import numpy as np
import pytest

from wigner_qc.grid import PhaseSpaceField, WignerState, make_grid
from wigner_qc.operators import BathParams, DuffingParams, ModelParams
from wigner_qc.propagator import (BoundaryLeakError, MassDriftError, SolverConfig, StabilityError,
                                  check_monitors, evolve, step, suggest_dt)

from conftest import gaussian_field, state_of
from test_operators import FreeParticle


def model(hbar=0.1, D=0.01, **duffing):
    return ModelParams(DuffingParams(**duffing), BathParams(hbar, D))


def test_step_fixed_point(small_grid):
    s = state_of(PhaseSpaceField(small_grid, np.full(small_grid.shape, 0.25)), t=1.0)
    out = step(s, model(1e-200, 0.0), 0.01)
    assert out.t == pytest.approx(1.01)
    assert np.max(np.abs(out.values - s.values)) < 1e-14


def _run(state, params, dt, n, scheme="rk4"):
    for _ in range(n):
        state = step(state, params, dt, scheme)
    return state.values


def test_rk4_convergence_order():
    g = make_grid(-6, 6, -12, 12, 64, 64)
    s = state_of(gaussian_field(g, 0.5, 0.5, 0.6, 1.0))
    p = model(0.3, 0.05)
    T = 16 * suggest_dt(g, p)
    u = [_run(s, p, T / n, n) for n in (8, 16, 32)]
    order = math.log2(np.max(np.abs(u[0] - u[1])) / np.max(np.abs(u[1] - u[2])))
    assert order >= 3.8


def test_rk2_is_second_order():
    g = make_grid(-6, 6, -12, 12, 64, 64)
    s = state_of(gaussian_field(g, 0.5, 0.5, 0.6, 1.0))
    p = model(0.3, 0.05)
    T = 4 * suggest_dt(g, p)
    u = [_run(s, p, T / n, n, "rk2") for n in (8, 16, 32)]
    order = math.log2(np.max(np.abs(u[0] - u[1])) / np.max(np.abs(u[1] - u[2])))
    assert 1.8 <= order <= 2.3


def test_pure_diffusion_variance_law():
    g = make_grid(-6, 6, -12, 12, 32, 256)
    sp = 0.6
    s = state_of(gaussian_field(g, 0.0, 0.0, 1.0, sp))
    D = 0.02
    params = ModelParams(FreeParticle(m=1e12), BathParams(1e-200, D))
    dt = 0.01
    out = _run(s, params, dt, 100)
    marginal = out.sum(axis=0) * g.dq
    pgrid = g.p
    mass = marginal.sum() * g.dp
    var = (marginal * pgrid ** 2).sum() * g.dp / mass
    assert var == pytest.approx(sp ** 2 + 2 * D * 1.0, rel=1e-3)


def test_drive_stage_times_rk4_vs_rk2():
    # Drive-dominated: force is mostly A cos(omega t), so wrong stage times would
    # cost the schemes their order.
    g = make_grid(-6, 6, -12, 12, 32, 128)
    s = state_of(gaussian_field(g, 0.0, 0.0, 1.0, 0.8))
    params = ModelParams(DuffingParams(m=1e12, B=0.0, C=1e-9, A=20.0, omega=5.35), BathParams(1e-200, 0.0))
    T = 0.3
    ref = _run(s, params, T / 256, 256)

    def err(n, scheme):
        return np.max(np.abs(_run(s, params, T / n, n, scheme) - ref))

    rk4_ratio = err(8, "rk4") / err(16, "rk4")
    rk2_ratio = err(16, "rk2") / err(32, "rk2")
    assert rk4_ratio >= 10
    assert 3.0 <= rk2_ratio < 10
    assert err(16, "rk4") < err(16, "rk2")


def test_evolve_zero_time_returns_initial(small_grid):
    s = state_of(gaussian_field(small_grid, 0, 0, 0.6, 1.0))
    calls = []
    out = evolve(s, model(), SolverConfig(dt=0.01, t_final=0.0), lambda st, parts: calls.append(st.t))
    assert out is s
    assert calls == []


def test_sample_count_and_snapshot_hits(small_grid):
    s = state_of(gaussian_field(small_grid, 0, 0, 0.6, 1.0))
    cfg = SolverConfig(dt=0.001, t_final=0.01, sample_every=3, snapshot_times=(0.0035, 0.006, 0.01),
                       boundary_tolerance=1.0)
    times = []
    out = evolve(s, model(0.2, 0.02), cfg, lambda st, parts: times.append(st.t))
    # regular samples at 0.003, 0.006, 0.009; 0.0035 and 0.01 are extra hits, 0.006 coincides
    assert len(times) == math.floor(0.01 / (0.001 * 3)) + 2
    assert times == pytest.approx([0.003, 0.0035, 0.006, 0.009, 0.01])
    assert out.t == pytest.approx(0.01)


def test_snapshot_shortening_does_not_shift_cadence(small_grid):
    s = state_of(gaussian_field(small_grid, 0, 0, 0.6, 1.0))
    p = model(0.2, 0.02)
    plain = evolve(s, p, SolverConfig(dt=0.001, t_final=0.05, sample_every=5, boundary_tolerance=1.0))
    with_snap = evolve(s, p, SolverConfig(dt=0.001, t_final=0.05, sample_every=5, snapshot_times=(0.0173,),
                                          boundary_tolerance=1.0))
    assert np.array_equal(plain.values, with_snap.values)


def test_evolve_is_deterministic(small_grid):
    s = state_of(gaussian_field(small_grid, 0.3, 0.2, 0.6, 1.0))
    cfg = SolverConfig(dt=0.0005, t_final=0.02, sample_every=4, boundary_tolerance=1.0)
    a = evolve(s, model(0.2, 0.02), cfg)
    b = evolve(s, model(0.2, 0.02), cfg)
    assert np.array_equal(a.values, b.values)


def test_stability_error_reports_step(small_grid):
    s = state_of(gaussian_field(small_grid, 0, 0, 0.6, 1.0))
    with pytest.raises(StabilityError) as info:
        evolve(s, model(0.2, 0.02), SolverConfig(dt=0.5, t_final=400.0, sample_every=1000))
    assert info.value.step_index > 0


def test_mass_drift_monitor(small_grid):
    f = gaussian_field(small_grid, 0, 0, 0.6, 1.0)
    drifted = WignerState(f, 0.0, 1.01)
    with pytest.raises(MassDriftError):
        check_monitors(drifted, SolverConfig(dt=0.1, t_final=1.0))


def test_boundary_leak_monitor(small_grid):
    f = gaussian_field(small_grid, 5.5, 0, 0.4, 1.0)
    with pytest.raises(BoundaryLeakError):
        check_monitors(state_of(f), SolverConfig(dt=0.1, t_final=1.0))


def test_mass_is_conserved_by_evolution(small_grid):
    s = state_of(gaussian_field(small_grid, 0.3, 0.2, 0.6, 1.0))
    p = model(0.2, 0.02)
    out = evolve(s, p, SolverConfig(dt=suggest_dt(small_grid, p), t_final=0.2, mass_tolerance=1e-12,
                                    boundary_tolerance=1.0))
    assert abs(out.mass() - s.mass0) <= 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt=0.0, t_final=1.0)
    with pytest.raises(ValueError):
        SolverConfig(dt=2.0, t_final=1.0)
    with pytest.raises(ValueError):
        SolverConfig(dt=0.1, t_final=1.0, scheme="euler")
    with pytest.raises(ValueError):
        SolverConfig(dt=0.1, t_final=1.0, snapshot_times=(2.0,))


def test_suggest_dt_pure_advection():
    g = make_grid(-1, 1, -1, 1, 32, 32)
    p = ModelParams(DuffingParams(A=0.0), BathParams(1e-200, 0.0))
    force = np.abs(-20 * g.q + 2 * g.q ** 3).max()
    rate = np.abs(g.p).max() * g.k_max("q") + force * g.k_max("p")
    assert suggest_dt(g, p) == pytest.approx(2 * math.sqrt(2) / rate / 2)


def test_suggest_dt_diffusion_scaling():
    p = ModelParams(FreeParticle(m=1e12), BathParams(1e-200, 10.0))
    a = suggest_dt(make_grid(-6, 6, -12, 12, 64, 128), p)
    b = suggest_dt(make_grid(-6, 6, -12, 12, 64, 256), p)
    assert b == pytest.approx(a / 4, rel=0.03)


def test_suggested_dt_is_stable_for_many_steps():
    g = make_grid(-6, 6, -12, 12, 128, 128)
    p = ModelParams(DuffingParams(), BathParams(0.125, 1.5625e-3))
    s = state_of(gaussian_field(g, 0.0, 0.0, math.sqrt(0.05), 0.125 / (2 * math.sqrt(0.05))))
    dt = suggest_dt(g, p)
    cfg = SolverConfig(dt=dt, t_final=10_000 * dt, sample_every=10_000, boundary_tolerance=1.0)
    evolve(s, p, cfg)
