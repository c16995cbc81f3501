"""Time integration of the incompressible NSE on the torus.

Scheme: Williamson low-storage RK3 for the advective term and forcing, with
the exact viscous integrating factor exp(-nu |2 pi k / L|^2 tau) applied
between stages, so the stiff term carries no time-discretization error.
"""

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.integrate import simpson

from .errors import (
    CflViolation,
    GridMismatch,
    NonFinite,
    ValidationError,
    WindowUnavailable,
)
from .spectral import (
    PhysicalField,
    SpectralVelocity,
    TorusGrid,
    _grid_cache,
    advection_coeffs,
    leray_project,
    project_coeffs,
    to_spectral,
    velocity_from_snapshot,
    write_snapshot,
)

CFL_CONSTANT = 0.5

# Williamson 3-stage low-storage RK3; stage times 0, 1/3, 3/4.
_RK_A = (0.0, -5.0 / 9.0, -153.0 / 128.0)
_RK_B = (1.0 / 3.0, 15.0 / 16.0, 8.0 / 15.0)
_RK_C = (0.0, 1.0 / 3.0, 3.0 / 4.0)


# ---------------------------------------------------------------------------
# Forcing and initial conditions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForcingSpec:
    """Deterministic, time-independent body force.

    kind 'kolmogorov' is A sin(2 pi k_f x2 / L) e1; 'custom' reads a snapshot
    container and uses its (projected) samples as the force field. The force
    is zero-mean, divergence-free, and supported in shells q <= 2.
    """

    kind: str = "none"
    amplitude: float = 0.0
    k_f: int = 1
    path: str = ""

    def validate(self):
        if self.kind not in ("none", "kolmogorov", "custom"):
            raise ValidationError(f"forcing.kind: unknown kind {self.kind!r}")
        if self.kind == "kolmogorov":
            if not self.amplitude >= 0:
                raise ValidationError("forcing.amplitude must be >= 0")
            if not 1 <= self.k_f <= 8:
                raise ValidationError(
                    "forcing.k_f must be in [1, 8] (force supported in shells q <= 2)"
                )
        if self.kind == "custom" and not self.path:
            raise ValidationError("forcing.file required for kind=custom")


@lru_cache(maxsize=32)
def build_force(spec: ForcingSpec, grid: TorusGrid):
    """Force coefficient tensor for a grid, or None when unforced."""
    if spec.kind == "none" or (spec.kind == "kolmogorov" and spec.amplitude == 0.0):
        return None
    n = grid.n
    if spec.kind == "kolmogorov":
        c = np.zeros((3, n, n, n), dtype=complex)
        # A sin(2 pi k_f y / L) in component x: -+ iA/2 at k = (0, +-k_f, 0)
        c[0, 0, spec.k_f % n, 0] = -0.5j * spec.amplitude
        c[0, 0, (-spec.k_f) % n, 0] = 0.5j * spec.amplitude
        return c
    u, _ = velocity_from_snapshot(spec.path)
    if u.grid != grid:
        raise ValidationError(f"forcing.file grid {u.grid} != run grid {grid}")
    _check_force_support(grid, u.coeffs)
    return u.coeffs


def _check_force_support(grid, coeffs):
    from .lp import get_lp

    lp = get_lp(grid)
    l2 = np.sqrt(lp.block_l2_sq(coeffs))
    total = float(np.max(l2))
    high = [l2[q + 1] for q in range(3, lp.q_max + 1)]
    if total > 0 and high and max(high) > 1e-12 * total:
        raise ValidationError("custom force has support above shell q=2")


@dataclass(frozen=True)
class InitSpec:
    """Initial condition: zero, Taylor-Green, seeded random field, or snapshot."""

    kind: str = "random"
    amplitude: float = 0.5
    k_peak: float = 3.0
    path: str = ""

    def validate(self):
        if self.kind not in ("zero", "taylor-green", "random", "snapshot"):
            raise ValidationError(f"solver.init: unknown kind {self.kind!r}")
        if self.kind == "snapshot" and not self.path:
            raise ValidationError("solver.init_path required for init=snapshot")
        if self.kind == "random" and not self.k_peak > 0:
            raise ValidationError("solver.init_k_peak must be positive")


def random_divfree_field(grid, seed=0, k_peak=3.0, amplitude=0.5, time=0.0):
    """Seeded random divergence-free field, E(k) ~ k^4 exp(-2 k^2 / k_p^2).

    Physical white noise (Hermitian by construction) shaped by the radial
    envelope, projected, then rescaled to ||u||_2 = amplitude.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((3, grid.n, grid.n, grid.n))
    c = to_spectral(PhysicalField(grid, noise))
    kmag = _grid_cache(grid)["kmag_int"]
    envelope = kmag * np.exp(-(kmag**2) / k_peak**2)  # sqrt(E(k)/k^2)
    u = leray_project(c * envelope, grid, time=time)
    norm = u.l2_norm()
    if norm > 0:
        u.coeffs *= amplitude / norm
    return u


def taylor_green(grid, amplitude=1.0, time=0.0):
    """Classical Taylor-Green vortex scaled to the box."""
    x = np.arange(grid.n) * (2.0 * np.pi / grid.n)
    sx, cx = np.sin(x)[:, None, None], np.cos(x)[:, None, None]
    sy, cy = np.sin(x)[None, :, None], np.cos(x)[None, :, None]
    cz = np.cos(x)[None, None, :]
    vals = np.empty((3, grid.n, grid.n, grid.n))
    vals[0] = amplitude * sx * cy * cz
    vals[1] = -amplitude * cx * sy * cz
    vals[2] = 0.0
    return leray_project(to_spectral(PhysicalField(grid, vals)), grid, time=time)


def shear_mode(grid, amplitude=1.0, k=1, time=0.0):
    """u = (A sin(2 pi k x2 / L), 0, 0): the advective term vanishes exactly."""
    n = grid.n
    c = np.zeros((3, n, n, n), dtype=complex)
    c[0, 0, k % n, 0] = -0.5j * amplitude
    c[0, 0, (-k) % n, 0] = 0.5j * amplitude
    return SpectralVelocity(grid, c, time)


def build_initial(config, grid=None):
    grid = grid or config.grid
    spec = config.init
    if spec.kind == "zero":
        return SpectralVelocity(
            grid, np.zeros((3, grid.n, grid.n, grid.n), dtype=complex)
        )
    if spec.kind == "taylor-green":
        return taylor_green(grid, amplitude=spec.amplitude)
    if spec.kind == "snapshot":
        u, _ = velocity_from_snapshot(spec.path)
        if u.grid != grid:
            raise ValidationError("init snapshot grid does not match run grid")
        u.time = 0.0
        return u
    return random_divfree_field(
        grid, seed=config.seed, k_peak=spec.k_peak, amplitude=spec.amplitude
    )


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    """Everything one trajectory needs; see config.py for file keys/defaults."""

    grid: TorusGrid
    nu: float
    dt: float
    t_end: float
    forcing: ForcingSpec = ForcingSpec()
    init: InitSpec = InitSpec()
    delta: float = 0.5
    c0: float = 0.1
    window_t: float = 0.25
    snapshot_stride: int = 50
    diag_stride: int = 10
    transient: float | None = None  # None -> 5/(nu kappa_0^2)
    seed: int = 0
    dealias: str = "2/3"
    oversample: int = 1
    cb: float | None = None  # Bernstein constant override

    def validate(self):
        if not self.nu > 0:
            raise ValidationError("solver.nu must be positive")
        if not self.dt > 0:
            raise ValidationError("solver.dt must be positive")
        if self.t_end < 0:
            raise ValidationError("solver.t_end must be >= 0")
        if not 0.0 < self.delta <= 1.0:
            raise ValidationError(
                "solver.delta must lie in (0, 1] (a fixed small positive parameter)"
            )
        if not self.c0 > 0:
            raise ValidationError("solver.c0 must be positive")
        if not self.window_t > 0:
            raise ValidationError("diagnostics.window_t must be positive")
        if self.snapshot_stride < 1 or self.diag_stride < 1:
            raise ValidationError("strides must be >= 1")
        if self.transient is not None and self.transient < 0:
            raise ValidationError("diagnostics.transient must be >= 0")
        if self.dealias != "2/3":
            raise ValidationError("solver.dealias: only the 2/3 rule is supported")
        if self.oversample not in (1, 2):
            raise ValidationError("diagnostics.oversample must be 1 or 2")
        if self.cb is not None and not self.cb > 0:
            raise ValidationError("diagnostics.cb must be positive")
        self.forcing.validate()
        self.init.validate()
        return self

    @property
    def sigma(self):
        return (self.delta - 1.0) / 2.0

    def transient_time(self):
        if self.transient is not None:
            return self.transient
        return 5.0 / (self.nu * self.grid.kappa0**2)

    def n_steps(self):
        return int(round(self.t_end / self.dt))


# ---------------------------------------------------------------------------
# Trajectory state, stepping, energy budget
# ---------------------------------------------------------------------------


class History:
    """Per-step scalar series: time, energy, enstrophy, force work.

    maxlen=None keeps the whole run (desk scale); a bounded ring buffer must
    still cover at least one averaging window.
    """

    def __init__(self, maxlen=None):
        self.t = deque(maxlen=maxlen)
        self.energy = deque(maxlen=maxlen)
        self.enstrophy = deque(maxlen=maxlen)
        self.force_work = deque(maxlen=maxlen)

    def append(self, t, energy, enstrophy, force_work):
        if self.t and not t > self.t[-1]:
            raise ValueError("history timestamps must strictly increase")
        self.t.append(t)
        self.energy.append(energy)
        self.enstrophy.append(enstrophy)
        self.force_work.append(force_work)

    def arrays(self):
        return (
            np.array(self.t),
            np.array(self.energy),
            np.array(self.enstrophy),
            np.array(self.force_work),
        )


@dataclass
class TrajectoryState:
    u: SpectralVelocity
    step_index: int = 0
    history: History = field(default_factory=History)

    @property
    def t(self):
        return self.u.time


def _force_work(u, force_coeffs):
    if force_coeffs is None:
        return 0.0
    return float(
        u.grid.length**3
        * np.sum(
            force_coeffs.real * u.coeffs.real + force_coeffs.imag * u.coeffs.imag
        )
    )


def make_state(u, force_coeffs=None, history_maxlen=None):
    state = TrajectoryState(u=u, history=History(maxlen=history_maxlen))
    energy, enstrophy = u.energy_enstrophy()
    state.history.append(u.time, energy, enstrophy, _force_work(u, force_coeffs))
    return state


class _Stepper:
    """Precomputed viscous factors for one (grid, nu, dt)."""

    def __init__(self, grid, nu, dt):
        self.grid = grid
        self.nu = nu
        self.dt = dt
        ksq = _grid_cache(grid)["ksq_phys"]
        gaps = (_RK_C[1] - _RK_C[0], _RK_C[2] - _RK_C[1], 1.0 - _RK_C[2])
        self.factors = [np.exp(-nu * ksq * (g * dt)) for g in gaps]

    def advance(self, coeffs, force_coeffs):
        """One step. All viscous factors are decaying (applied stage-to-stage)."""
        dt = self.dt
        state = coeffs.copy()
        q = np.zeros_like(coeffs)
        linf0 = 0.0
        for i in range(3):
            if i > 0:
                state *= self.factors[i - 1]
                q *= self.factors[i - 1]
            adv, linf = advection_coeffs(SpectralVelocity(self.grid, state, 0.0))
            if i == 0:
                linf0 = linf
                if not np.isfinite(linf):
                    raise NonFinite("velocity coefficients became non-finite")
                if linf > 0 and dt > CFL_CONSTANT * self.grid.dx / linf:
                    raise CflViolation(
                        f"dt={dt:.3e} exceeds CFL limit "
                        f"{CFL_CONSTANT * self.grid.dx / linf:.3e} (max|u|={linf:.3e})"
                    )
            rhs = project_coeffs(self.grid, -adv)
            if force_coeffs is not None:
                rhs += force_coeffs
            q *= _RK_A[i]
            q += dt * rhs
            state += _RK_B[i] * q
        state *= self.factors[2]
        if not np.all(np.isfinite(state)):
            raise NonFinite("velocity coefficients became non-finite")
        return state, linf0


_STEPPERS = {}


def get_stepper(grid, nu, dt):
    key = (grid, nu, dt)
    st = _STEPPERS.get(key)
    if st is None:
        st = _Stepper(grid, nu, dt)
        _STEPPERS[key] = st
    return st


def step(state, config, force_coeffs=None, stepper=None):
    """Advance one time step; appends the new scalar row to the history."""
    if force_coeffs is None:
        force_coeffs = build_force(config.forcing, config.grid)
    if stepper is None:
        stepper = get_stepper(config.grid, config.nu, config.dt)
    new_coeffs, _ = stepper.advance(state.u.coeffs, force_coeffs)
    t_new = state.u.time + config.dt
    u_new = SpectralVelocity(state.u.grid, new_coeffs, t_new)
    new_state = TrajectoryState(
        u=u_new, step_index=state.step_index + 1, history=state.history
    )
    energy, enstrophy = u_new.energy_enstrophy()
    new_state.history.append(t_new, energy, enstrophy, _force_work(u_new, force_coeffs))
    return new_state


@dataclass
class BudgetReport:
    """Energy-inequality residual over [t0, t1] (lhs - rhs of the budget)."""

    t0: float
    t1: float
    residual: float
    scale: float
    tolerance: float
    satisfied: bool  # residual <= tol*scale (the inequality direction)
    abs_satisfied: bool  # |residual| <= tol*scale (discrete near-equality)
    dissipation: float
    force_work: float


def energy_budget(history, t0, t1, nu, rel_tol=1e-6):
    """Evaluate E(t1) - [E(t0) - nu int ||grad u||^2 + int (f,u)] from history.

    Integrals use composite Simpson over the stored per-step series. The
    window endpoints snap to the nearest stored samples.
    """
    t, energy, enstrophy, force_work = history.arrays()
    if len(t) < 2:
        raise WindowUnavailable("history holds fewer than two samples")
    eps = 1e-9 * max(abs(t0), abs(t1), 1.0)
    if t0 < t[0] - eps or t1 > t[-1] + eps or not t1 > t0:
        raise WindowUnavailable(
            f"[{t0}, {t1}] not covered by history [{t[0]}, {t[-1]}]"
        )
    i0 = int(np.argmin(np.abs(t - t0)))
    i1 = int(np.argmin(np.abs(t - t1)))
    if i1 <= i0:
        raise WindowUnavailable("window contains no history interval")
    dissipation = float(nu * simpson(enstrophy[i0 : i1 + 1], x=t[i0 : i1 + 1]))
    work = float(simpson(force_work[i0 : i1 + 1], x=t[i0 : i1 + 1]))
    residual = float(energy[i1] - (energy[i0] - dissipation + work))
    scale = max(float(energy[i0]), dissipation)
    return BudgetReport(
        t0=float(t[i0]),
        t1=float(t[i1]),
        residual=residual,
        scale=scale,
        tolerance=rel_tol,
        satisfied=residual <= rel_tol * scale,
        abs_satisfied=abs(residual) <= rel_tol * scale,
        dissipation=dissipation,
        force_work=work,
    )


def run(config, initial=None, outdir=None):
    """Generator of (TrajectoryState, DiagnosticsRecord) at diag_stride.

    Snapshots are written under outdir/snapshots at snapshot_stride (plus the
    initial and final states); partial output persists if a step fails.
    Deterministic for a given config and seed.
    """
    from . import diagnostics
    from .lp import get_lp

    config.validate()
    grid = config.grid
    lp = get_lp(grid)
    force = build_force(config.forcing, grid)
    if initial is None:
        initial = build_initial(config)
    elif initial.grid != grid:
        raise GridMismatch("initial condition grid does not match config grid")
    stepper = get_stepper(grid, config.nu, config.dt)
    state = make_state(initial, force)

    snapdir = None
    if outdir is not None:
        snapdir = Path(outdir) / "snapshots"
        snapdir.mkdir(parents=True, exist_ok=True)
        write_snapshot(snapdir / "snap_00000000.nse", state.u, config.nu)

    def record_for(u):
        return diagnostics.compute_record(
            u, config.nu, config.delta, config.c0, lp=lp, oversample=config.oversample
        )

    yield state, record_for(state.u)
    n = config.n_steps()
    for i in range(1, n + 1):
        state = step(state, config, force, stepper)
        if snapdir is not None and (i % config.snapshot_stride == 0 or i == n):
            write_snapshot(snapdir / f"snap_{i:08d}.nse", state.u, config.nu)
        if i % config.diag_stride == 0 or i == n:
            yield state, record_for(state.u)
