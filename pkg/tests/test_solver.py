import math

import numpy as np
import pytest

from torusdns.errors import (
    CflViolation,
    NonFinite,
    ValidationError,
    WindowUnavailable,
)
from torusdns.solver import (
    ForcingSpec,
    InitSpec,
    SolverConfig,
    build_force,
    build_initial,
    energy_budget,
    get_stepper,
    make_state,
    random_divfree_field,
    run,
    shear_mode,
    step,
    taylor_green,
)
from torusdns.spectral import SpectralVelocity, TorusGrid, write_snapshot

from conftest import make_field


def basic_config(grid, nu=0.02, dt=1e-3, t_end=0.1, **kw):
    return SolverConfig(grid=grid, nu=nu, dt=dt, t_end=t_end, **kw)


def march(state, config, n, force=None):
    stepper = get_stepper(config.grid, config.nu, config.dt)
    for _ in range(n):
        state = step(state, config, force, stepper)
    return state


def test_shear_mode_exact_decay(grid32):
    nu, dt = 0.02, 1e-3
    cfg = basic_config(grid32, nu=nu, dt=dt)
    state = march(make_state(shear_mode(grid32, 1.0, 1)), cfg, 200)
    amp = 2.0 * abs(state.u.coeffs[0, 0, 1, 0])
    exact = math.exp(-nu * grid32.kappa0**2 * state.t)
    assert abs(amp - exact) <= 1e-10 * exact


def test_zero_stays_zero(grid32):
    cfg = basic_config(grid32)
    u0 = SpectralVelocity(grid32, np.zeros((3, 32, 32, 32), dtype=complex))
    state = march(make_state(u0), cfg, 20)
    assert np.max(np.abs(state.u.coeffs)) == 0.0


def test_unforced_energy_nonincreasing(grid32):
    cfg = basic_config(grid32, nu=0.02, dt=2e-3)
    state = make_state(make_field(grid32, seed=5, amplitude=0.4))
    stepper = get_stepper(grid32, cfg.nu, cfg.dt)
    for _ in range(20):
        before = state.history.energy[-1]
        state = step(state, cfg, None, stepper)
        after = state.history.energy[-1]
        assert after <= before * (1.0 + 1e-10)


def test_one_step_energy_drop_matches_richardson(grid32):
    # time-discretization error of the one-step energy, estimated by
    # comparing against two half steps
    nu = 0.02
    u0 = make_field(grid32, seed=6, amplitude=0.4)
    cfg_full = basic_config(grid32, nu=nu, dt=2e-3)
    cfg_half = basic_config(grid32, nu=nu, dt=1e-3)
    full = march(make_state(u0.copy()), cfg_full, 1)
    half = march(make_state(u0.copy()), cfg_half, 2)
    e_full = full.history.energy[-1]
    e_half = half.history.energy[-1]
    assert abs(e_full - e_half) <= 1e-8 * e_half


def test_temporal_order_forced_linear():
    # shear initial data + shear forcing: the advective term vanishes, the
    # viscous factor is exact, so the error isolates the RK3 quadrature
    grid = TorusGrid(16, 1.0)
    nu = 0.02
    spec = ForcingSpec(kind="kolmogorov", amplitude=0.7, k_f=1)
    force = build_force(spec, grid)
    lam = nu * grid.kappa0**2

    def exact(t):
        return math.exp(-lam * t) + 0.7 / lam * (1.0 - math.exp(-lam * t))

    errs = []
    for dt in (0.01, 0.005, 0.0025):
        cfg = basic_config(grid, nu=nu, dt=dt, t_end=0.5, forcing=spec)
        state = march(make_state(shear_mode(grid, 1.0, 1), force), cfg,
                      int(round(0.5 / dt)), force)
        amp = 2.0 * float(np.imag(-state.u.coeffs[0, 0, 1, 0]))
        errs.append(abs(amp - exact(state.t)))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 2.7


def test_cfl_violation_raises(grid32):
    cfg = basic_config(grid32, dt=0.05)  # limit is 0.5*dx = 0.015625 at |u|=1
    state = make_state(shear_mode(grid32, 1.0, 1))
    with pytest.raises(CflViolation):
        march(state, cfg, 1)


def test_nonfinite_raises(grid32):
    cfg = basic_config(grid32)
    c = np.zeros((3, 32, 32, 32), dtype=complex)
    c[0, 0, 1, 0] = np.inf
    state = make_state(SpectralVelocity(grid32, c))
    with pytest.raises(NonFinite):
        march(state, cfg, 1)


def test_step_preserves_invariants(grid32):
    cfg = basic_config(grid32, dt=2e-3)
    state = make_state(make_field(grid32, seed=8, amplitude=0.4))
    stepper = get_stepper(grid32, cfg.nu, cfg.dt)
    for _ in range(5):
        state = step(state, cfg, None, stepper)
        state.u.check(tol=1e-13)


def test_run_t_end_zero_single_record(grid32, tmp_path):
    cfg = basic_config(grid32, t_end=0.0, init=InitSpec(kind="taylor-green"))
    out = list(run(cfg, outdir=tmp_path))
    assert len(out) == 1
    assert out[0][0].t == 0.0
    snaps = list((tmp_path / "snapshots").glob("*.nse"))
    assert len(snaps) == 1


def test_run_deterministic(grid32):
    cfg = basic_config(
        grid32, dt=2e-3, t_end=0.02,
        init=InitSpec(kind="random", amplitude=0.3, k_peak=3.0),
        forcing=ForcingSpec(kind="kolmogorov", amplitude=0.5, k_f=1),
    )
    a = [rec for _, rec in run(cfg)]
    b = [rec for _, rec in run(cfg)]
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        assert ra.t == rb.t and ra.energy == rb.energy and ra.q == rb.q
        assert np.array_equal(ra.shells.l2, rb.shells.l2)


def test_taylor_green_self_convergence():
    # N=32 vs N=64 energy curves over t in [0,1]
    nu, dt, amp = 0.05, 0.01, 0.5
    energies = {}
    for n in (32, 64):
        grid = TorusGrid(n, 1.0)
        cfg = basic_config(grid, nu=nu, dt=dt, t_end=1.0)
        state = make_state(taylor_green(grid, amplitude=amp))
        stepper = get_stepper(grid, nu, dt)
        series = [state.history.energy[-1]]
        for _ in range(cfg.n_steps()):
            state = step(state, cfg, None, stepper)
            series.append(state.history.energy[-1])
        energies[n] = np.array(series)
    rel = np.max(np.abs(energies[32] - energies[64]) / energies[64])
    assert rel <= 1e-4


def test_energy_budget_zero_solution(grid32):
    u0 = SpectralVelocity(grid32, np.zeros((3, 32, 32, 32), dtype=complex))
    cfg = basic_config(grid32)
    state = march(make_state(u0), cfg, 10)
    rep = energy_budget(state.history, 0.0, state.t, cfg.nu)
    assert rep.residual == 0.0 and rep.satisfied and rep.abs_satisfied


def test_energy_budget_shear_closed_form(grid32):
    nu, dt = 0.02, 1e-3
    cfg = basic_config(grid32, nu=nu, dt=dt)
    state = march(make_state(shear_mode(grid32, 1.0, 1)), cfg, 500)
    rep = energy_budget(state.history, 0.0, state.t, nu)
    assert abs(rep.residual) <= 1e-8 * rep.scale


def test_energy_budget_window_unavailable(grid32):
    cfg = basic_config(grid32)
    state = march(make_state(shear_mode(grid32, 1.0, 1)), cfg, 5)
    with pytest.raises(WindowUnavailable):
        energy_budget(state.history, 0.0, 1.0, cfg.nu)
    with pytest.raises(WindowUnavailable):
        energy_budget(state.history, -1.0, state.t, cfg.nu)


def test_forcing_validation():
    with pytest.raises(ValidationError):
        ForcingSpec(kind="kolmogorov", amplitude=1.0, k_f=9).validate()
    with pytest.raises(ValidationError):
        ForcingSpec(kind="nope").validate()
    with pytest.raises(ValidationError):
        ForcingSpec(kind="custom").validate()
    ForcingSpec(kind="kolmogorov", amplitude=1.0, k_f=2).validate()


def test_custom_force_from_snapshot(grid32, tmp_path):
    f = make_field(grid32, seed=33, amplitude=0.2, k_peak=2.0)
    # confine support to shells q <= 2 (|k| <= 8)
    from torusdns.lp import get_lp

    lp = get_lp(grid32)
    low = lp.low(f, 2)
    path = tmp_path / "force.nse"
    write_snapshot(path, low, nu=0.0)
    spec = ForcingSpec(kind="custom", path=str(path))
    coeffs = build_force(spec, grid32)
    scale = np.max(np.abs(low.coeffs))
    assert np.max(np.abs(coeffs - low.coeffs)) <= 1e-12 * scale


def test_custom_force_support_check(grid32, tmp_path):
    f = make_field(grid32, seed=34, amplitude=0.2, k_peak=9.0)  # high shells
    path = tmp_path / "force_high.nse"
    write_snapshot(path, f, nu=0.0)
    spec = ForcingSpec(kind="custom", path=str(path))
    with pytest.raises(ValidationError):
        build_force(spec, grid32)


def test_random_field_properties(grid32):
    a = random_divfree_field(grid32, seed=4, amplitude=0.7)
    b = random_divfree_field(grid32, seed=4, amplitude=0.7)
    assert np.array_equal(a.coeffs, b.coeffs)
    a.check()
    assert abs(a.l2_norm() - 0.7) <= 1e-12


def test_build_initial_kinds(grid32, tmp_path):
    cfg = basic_config(grid32, init=InitSpec(kind="zero"))
    assert np.max(np.abs(build_initial(cfg).coeffs)) == 0.0
    u = make_field(grid32, seed=2)
    path = tmp_path / "init.nse"
    write_snapshot(path, u, nu=0.1)
    cfg2 = basic_config(grid32, init=InitSpec(kind="snapshot", path=str(path)))
    got = build_initial(cfg2)
    assert got.time == 0.0
    scale = np.max(np.abs(u.coeffs))
    assert np.max(np.abs(got.coeffs - u.coeffs)) <= 1e-12 * scale


def test_config_validation_errors(grid32):
    with pytest.raises(ValidationError):
        basic_config(grid32, nu=-1.0).validate()
    with pytest.raises(ValidationError):
        basic_config(grid32, dt=0.0).validate()
    with pytest.raises(ValidationError):
        SolverConfig(grid=grid32, nu=0.1, dt=1e-3, t_end=1.0, delta=0.0).validate()
    with pytest.raises(ValidationError):
        SolverConfig(grid=grid32, nu=0.1, dt=1e-3, t_end=1.0, delta=1.5).validate()
    with pytest.raises(ValidationError):
        SolverConfig(grid=grid32, nu=0.1, dt=1e-3, t_end=1.0, c0=0.0).validate()
    with pytest.raises(ValidationError):
        basic_config(grid32, dealias="3/2").validate()


def test_grashof_consistency_kolmogorov(grid32):
    # diagnostics G matches the closed-form H^-1 norm of the Kolmogorov force
    from torusdns import diagnostics as diag

    nu, amp = 0.1, 0.5
    force = build_force(ForcingSpec(kind="kolmogorov", amplitude=amp, k_f=1), grid32)
    rep = diag.grashof(force, nu, grid32)
    hand = amp * grid32.length**2.5 / math.sqrt(2.0)
    assert abs(rep.h_minus1 - hand) <= 1e-10 * hand
    assert abs(rep.g - hand / (nu**2 * math.sqrt(grid32.kappa0))) <= 1e-10 * rep.g
