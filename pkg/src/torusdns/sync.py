"""Two-trajectory synchronization harness.

A reference trajectory u and a perturbed trajectory v advance together; after
every step the modes of v below the adaptive shell Q(t) (where
Lambda(t) = max(Lambda_u, Lambda_v) = lambda_Q) are overwritten by u's, and
the difference w = u - v is tracked in the H^s norm with
s = min(-1/2 + delta/4, 0). The measured decay is compared against the rate
nu * kappa_0^(2+2s).

Enforcement profiles:
  replace  v = u on supp chi(2^(-Q-1) k): the low-mode equality holds exactly
           (all blocks q <= Q of u and v coincide to machine precision).
  blend    v += chi(2^(-Q-1) k) (u - v): coefficient-level smooth blend; the
           transition annulus is only damped, kept for sensitivity studies.
  sharp    v = u on |k| <= 2^Q: sharp Galerkin cutoff variant.
"""

import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .errors import GridMismatch, InsufficientData, ValidationError
from .diagnostics import determining_wavenumber
from .lp import get_lp
from .solver import (
    SolverConfig,
    build_force,
    build_initial,
    get_stepper,
    make_state,
    random_divfree_field,
    step,
)
from .spectral import SpectralVelocity, project_coeffs, wavenumber_magnitude


@dataclass(frozen=True)
class SyncConfig:
    """Sync experiment on top of a base SolverConfig.

    base.t_end is the synchronized horizon measured from the end of the
    transient; perturb_shell = None picks Q_typ + 1 from the spun-up state.
    """

    base: SolverConfig
    perturb_shell: int | None = None
    perturb_amp: float = 1e-2
    enforce: str = "adaptive"  # adaptive | off | fixed:<Q>
    enforce_profile: str = "replace"  # replace | blend | sharp
    measure_stride: int = 1

    @property
    def sigma(self):
        return self.base.sigma

    @property
    def s_exponent(self):
        return min(-0.5 + self.base.delta / 4.0, 0.0)

    def enforce_mode(self):
        """('adaptive', None) | ('off', None) | ('fixed', Q)."""
        if self.enforce in ("adaptive", "off"):
            return self.enforce, None
        if self.enforce.startswith("fixed:"):
            return "fixed", int(self.enforce.split(":", 1)[1])
        raise ValidationError(f"sync.enforce: unknown mode {self.enforce!r}")

    def validate(self):
        self.base.validate()
        if self.perturb_amp < 0:
            raise ValidationError("sync.perturb_amp must be >= 0")
        if self.perturb_shell is not None and self.perturb_shell < 0:
            raise ValidationError("sync.perturb_shell must be >= 0")
        mode, q_fixed = self.enforce_mode()
        if mode == "fixed" and q_fixed < 0:
            raise ValidationError("sync.enforce fixed shell must be >= 0")
        if self.enforce_profile not in ("replace", "blend", "sharp"):
            raise ValidationError(
                f"sync.enforce_profile: unknown profile {self.enforce_profile!r}"
            )
        if self.measure_stride < 1:
            raise ValidationError("sync.measure_stride must be >= 1")
        s, sigma = self.s_exponent, self.sigma
        if not (-1.0 - sigma < s < sigma):
            raise ValidationError(
                f"s exponent {s} outside (-1-sigma, sigma) = "
                f"({-1.0 - sigma}, {sigma})"
            )
        return self


@dataclass
class SyncRecord:
    t: float
    q: int
    lam: float
    w_hs: float
    w_l2: float
    enforced: bool
    enforce_energy_delta: float  # relative 0.5||v||^2 change from enforcement


def enforce_low_modes(u_coeffs, v_coeffs, big_q, lp, profile="replace"):
    """Overwrite v's low modes with u's below shell Q; returns new v coeffs."""
    chi = lp.low_mask(big_q)
    if profile == "replace":
        out = np.where(chi > 0.0, u_coeffs, v_coeffs)
    elif profile == "blend":
        out = v_coeffs + chi * (u_coeffs - v_coeffs)
    elif profile == "sharp":
        sharp = wavenumber_magnitude(lp.grid) <= 2.0**big_q
        out = np.where(sharp, u_coeffs, v_coeffs)
    else:
        raise ValidationError(f"unknown enforcement profile {profile!r}")
    return project_coeffs(lp.grid, out)


def sync_step(u_state, v_state, config, force_coeffs=None, lp=None, stepper=None,
              want_lambda=True):
    """Advance both trajectories one step, enforce, and emit a SyncRecord."""
    base = config.base
    if u_state.u.grid != v_state.u.grid:
        raise GridMismatch("sync trajectories live on different grids")
    if abs(u_state.t - v_state.t) > 1e-12 * max(1.0, abs(u_state.t)):
        raise ValueError("sync trajectories are at different times")
    if lp is None:
        lp = get_lp(base.grid)
    if force_coeffs is None:
        force_coeffs = build_force(base.forcing, base.grid)
    if stepper is None:
        stepper = get_stepper(base.grid, base.nu, base.dt)

    u_new = step(u_state, base, force_coeffs, stepper)
    v_new = step(v_state, base, force_coeffs, stepper)

    mode, q_fixed = config.enforce_mode()
    lam, big_q = math.nan, -1
    if mode == "adaptive" or want_lambda:
        lam_u, q_u = determining_wavenumber(
            u_new.u, base.nu, base.delta, base.c0, lp=lp, oversample=base.oversample
        )
        lam_v, q_v = determining_wavenumber(
            v_new.u, base.nu, base.delta, base.c0, lp=lp, oversample=base.oversample
        )
        lam, big_q = max(lam_u, lam_v), max(q_u, q_v)

    energy_delta = 0.0
    enforced = mode != "off"
    if enforced:
        q_enf = q_fixed if mode == "fixed" else big_q
        before = v_new.u.energy()
        v_new.u.coeffs = enforce_low_modes(
            u_new.u.coeffs, v_new.u.coeffs, q_enf, lp, config.enforce_profile
        )
        after = v_new.u.energy()
        energy_delta = (after - before) / before if before > 0 else 0.0

    w = u_new.u.coeffs - v_new.u.coeffs
    w_l2 = float(np.sqrt(base.grid.length**3 * np.sum(np.abs(w) ** 2)))
    w_hs = lp.sobolev_norm(w, config.s_exponent)
    record = SyncRecord(
        t=u_new.t,
        q=big_q,
        lam=lam,
        w_hs=w_hs,
        w_l2=w_l2,
        enforced=enforced,
        enforce_energy_delta=energy_delta,
    )
    return u_new, v_new, record


def perturb(u, q_shell, amplitude, seed, lp=None):
    """Add a random divergence-free disturbance confined to shells >= q_shell,
    scaled to ||p||_2 = amplitude * ||u||_2."""
    if lp is None:
        lp = get_lp(u.grid)
    if amplitude == 0.0:
        return u.copy()
    noise = random_divfree_field(
        u.grid, seed=seed, k_peak=u.grid.dealias_limit / 1.5, amplitude=1.0,
        time=u.time,
    )
    high = noise.coeffs * (1.0 - lp.low_mask(q_shell - 1))
    p = SpectralVelocity(u.grid, project_coeffs(u.grid, high), u.time)
    norm = p.l2_norm()
    if norm == 0.0:
        raise ValidationError(f"perturbation shells >= {q_shell} are empty")
    p.coeffs *= amplitude * u.l2_norm() / norm
    return SpectralVelocity(u.grid, u.coeffs + p.coeffs, u.time)


@dataclass
class FitReport:
    """Least-squares decay rate of log ||w||_Hs^2 vs the proved bound."""

    status: str  # 'ok' | 'noise_floor'
    fitted_rate: float
    bound_rate: float
    margin: float  # fitted/bound - 1
    ok: bool
    n_used: int
    t0: float


def decay_fit(records, t0, nu, kappa0, s, floor=1e-14, min_records=10,
              slack=0.05):
    """Fit the decay of w past t0 and compare with nu * kappa_0^(2+2s).

    Records at or below the noise floor are excluded; if everything past t0
    sits at the floor the experiment counts as a pass (status 'noise_floor').
    """
    bound = nu * kappa0 ** (2.0 + 2.0 * s)
    past = [r for r in records if r.t >= t0 - 1e-12]
    if len(past) < min_records:
        raise InsufficientData(
            f"only {len(past)} records past t0={t0} (need {min_records})"
        )
    live = [r for r in past if r.w_hs > floor]
    if len(live) < min_records:
        if max(r.w_hs for r in past) <= floor:
            return FitReport(
                status="noise_floor", fitted_rate=math.nan, bound_rate=bound,
                margin=math.inf, ok=True, n_used=0, t0=t0,
            )
        raise InsufficientData(
            f"only {len(live)} records above the noise floor (need {min_records})"
        )
    t = np.array([r.t for r in live])
    y = 2.0 * np.log([r.w_hs for r in live])
    slope = float(np.polyfit(t, y, 1)[0])
    fitted = -slope
    margin = fitted / bound - 1.0
    return FitReport(
        status="ok",
        fitted_rate=fitted,
        bound_rate=bound,
        margin=margin,
        ok=fitted >= bound * (1.0 - slack),
        n_used=len(live),
        t0=t0,
    )


def pointwise_decay_check(records, t0, rate, slack=0.05, floor=1e-14):
    """||w(t)||_Hs^2 <= ||w(t0)||_Hs^2 e^{-rate (t-t0)} at every measured t.

    Records where both sides sit at the noise floor pass; returns
    (all_ok, worst_margin, n_checked, n_floor).
    """
    past = [r for r in records if r.t >= t0 - 1e-12]
    if not past:
        return True, math.inf, 0, 0
    w0_sq = past[0].w_hs ** 2
    worst = math.inf
    n_checked = n_floor = 0
    all_ok = True
    for r in past[1:]:
        rhs = w0_sq * math.exp(-rate * (r.t - t0))
        lhs = r.w_hs ** 2
        if r.w_hs <= floor:
            n_floor += 1
            continue
        n_checked += 1
        ok = lhs <= rhs * (1.0 + slack)
        margin = 1.0 - lhs / rhs if rhs > 0 else -math.inf
        worst = min(worst, margin)
        all_ok = all_ok and ok
    return all_ok, worst, n_checked, n_floor


@dataclass
class SyncResult:
    records: list
    fit: FitReport | None
    t_sync_start: float
    t0: float
    q_pert: int | None
    u_state: object
    v_state: object
    max_energy_delta: float  # max |enforcement energy change| over the run


def run_sync(config, initial=None, progress=None):
    """Spin up past the transient, perturb, then advance the slaved pair.

    Finite-horizon surrogate: the theorem's hypothesis (matching for all
    t < 0) is approximated by enforcing from the end of the transient on.
    """
    config.validate()
    base = config.base
    grid = base.grid
    lp = get_lp(grid)
    force = build_force(base.forcing, grid)
    stepper = get_stepper(grid, base.nu, base.dt)

    u0 = initial if initial is not None else build_initial(base)
    u_state = make_state(u0, force)
    n_spin = int(math.ceil(base.transient_time() / base.dt - 1e-9))
    for _ in range(n_spin):
        u_state = step(u_state, base, force, stepper)
    t_sync_start = u_state.t

    q_pert = config.perturb_shell
    if q_pert is None and config.perturb_amp > 0:
        _, q_typ = determining_wavenumber(
            u_state.u, base.nu, base.delta, base.c0, lp=lp,
            oversample=base.oversample,
        )
        q_pert = min(q_typ + 1, lp.q_max)
    if config.perturb_amp > 0:
        v0 = perturb(u_state.u, q_pert, config.perturb_amp, base.seed + 7777, lp=lp)
    else:
        v0 = u_state.u.copy()
    v_state = make_state(v0, force)

    records = []
    max_delta = 0.0
    n_sync = base.n_steps()
    for i in range(1, n_sync + 1):
        want = i % config.measure_stride == 0 or i == n_sync
        u_state, v_state, rec = sync_step(
            u_state, v_state, config, force, lp, stepper, want_lambda=want
        )
        max_delta = max(max_delta, abs(rec.enforce_energy_delta))
        if want:
            records.append(rec)
        if progress is not None:
            progress(i, n_sync, rec)

    t0 = t_sync_start + base.window_t
    fit = None
    if records:
        try:
            fit = decay_fit(
                records, t0, base.nu, grid.kappa0, config.s_exponent
            )
        except InsufficientData:
            fit = None
    return SyncResult(
        records=records,
        fit=fit,
        t_sync_start=t_sync_start,
        t0=t0,
        q_pert=q_pert,
        u_state=u_state,
        v_state=v_state,
        max_energy_delta=max_delta,
    )


def control_experiment(config, q_fixed, initial=None):
    """Same harness with enforcement below a fixed shell Q_fixed.

    For Q_fixed well below the typical Q(t), non-decay is an informative (not
    failing) outcome; the caller inspects the returned records/fit.
    """
    fixed = dc_replace(config, enforce=f"fixed:{q_fixed}")
    return run_sync(fixed, initial=initial)
