"""Littlewood-Paley dyadic decomposition, block norms, Sobolev norms.

Shell convention: the cutoff acts on the integer wave vector k, so block q
covers 3*2^(q-2) < |k| <= 2^(q+1); lambda_q = 2^q/L converts a shell index to
a wavenumber. Block -1 holds only the mean mode (zero for velocities).

The highest nonempty shell on a dealiased grid is q_max = ceil(log2(N//3));
blocks above it vanish identically. The dyadic partition of unity
chi + sum_{q<=q_max} phi_q == 1 holds exactly on the dealiased lattice (where
every representable field lives); corner modes beyond it are always zero.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AllZero
from .spectral import (
    SpectralVelocity,
    gradient_coeffs,
    linf_of_coeffs,
    project_coeffs,
    wavenumber_magnitude,
)


def _psi(x):
    """Smooth step: 0 for x<=0, 1 for x>=1, C-infinity monotone between."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    out[x >= 1.0] = 1.0
    mid = (x > 0.0) & (x < 1.0)
    if np.any(mid):
        xm = x[mid]
        g = np.exp(-1.0 / xm)
        g1 = np.exp(-1.0 / (1.0 - xm))
        out[mid] = g / (g + g1)
    return out


class CutoffProfile:
    """Radial cutoff chi: 1 on |xi|<=3/4, 0 on |xi|>=1, smooth monotone between.

    chi(xi) = psi(4*(1-|xi|)) with the standard exp(-1/x) mollifier, and
    phi(xi) = chi(xi/2) - chi(xi) >= 0 supported on 3/4 <= |xi| <= 2.
    """

    def chi(self, r):
        return _psi(4.0 * (1.0 - np.asarray(r, dtype=float)))

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        return self.chi(r / 2.0) - self.chi(r)


DEFAULT_PROFILE = CutoffProfile()


@dataclass
class LPDecomposition:
    """Per-shell data for one field: blocks (optional) and their norms."""

    grid: object
    q_max: int
    lambdas: np.ndarray  # lambda_q for q = -1 .. q_max
    l2: np.ndarray  # ||u_q||_2 per shell
    linf: np.ndarray  # ||u_q||_inf per shell
    blocks: list = field(default=None, repr=False)
    q_min: int = -1

    def shell_index(self, q):
        return q - self.q_min


def max_shell(grid):
    """Largest shell intersecting the dealiased set: ceil(log2(N//3))."""
    return math.ceil(math.log2(grid.dealias_limit))


class LittlewoodPaley:
    """Dyadic projections and norms on one grid; masks are cached."""

    def __init__(self, grid, profile=DEFAULT_PROFILE):
        self.grid = grid
        self.profile = profile
        self.q_max = max_shell(grid)
        self.shells = range(-1, self.q_max + 1)
        self.lambdas = np.array([2.0**q / grid.length for q in self.shells])
        self._kmag = wavenumber_magnitude(grid)
        self._low = {}
        self._phi = {}
        self._phi_sq_stack = None

    # -- masks ---------------------------------------------------------------

    def low_mask(self, q):
        """chi(2^(-q-1) k): multiplier of the low-pass field u_{<=q}."""
        m = self._low.get(q)
        if m is None:
            m = self.profile.chi(self._kmag / 2.0 ** (q + 1))
            self._low[q] = m
        return m

    def phi_mask(self, q):
        """Multiplier of block q (phi_q for q>=0, chi for q=-1)."""
        if q < -1:
            raise ValueError(f"shell index must be >= -1, got {q}")
        m = self._phi.get(q)
        if m is None:
            if q == -1:
                m = self.low_mask(-1)
            else:
                m = self.low_mask(q) - self.low_mask(q - 1)
            self._phi[q] = m
        return m

    def _phi_sq(self):
        if self._phi_sq_stack is None:
            self._phi_sq_stack = np.stack(
                [self.phi_mask(q) ** 2 for q in self.shells]
            ).reshape(len(self.lambdas), -1)
        return self._phi_sq_stack

    # -- projections ----------------------------------------------------------

    def block(self, u, q):
        """Block u_q; shells above q_max are identically zero."""
        if q > self.q_max:
            return SpectralVelocity(u.grid, np.zeros_like(u.coeffs), u.time)
        return SpectralVelocity(u.grid, u.coeffs * self.phi_mask(q), u.time)

    def low(self, u, q):
        """Low-pass u_{<=q} via the closed-form chi multiplier."""
        return SpectralVelocity(u.grid, u.coeffs * self.low_mask(q), u.time)

    # -- norms ----------------------------------------------------------------

    def block_l2_sq(self, coeffs):
        """||u_q||_2^2 for every shell, computed spectrally (no transforms)."""
        power = np.sum(np.abs(coeffs) ** 2, axis=0).reshape(-1)
        return self.grid.length**3 * (self._phi_sq() @ power)

    def block_linf(self, u, oversample=1):
        """||u_q||_inf for every shell (collocation-grid max per block)."""
        out = np.empty(len(self.lambdas))
        for i, q in enumerate(self.shells):
            out[i] = linf_of_coeffs(
                self.grid, u.coeffs * self.phi_mask(q), oversample=oversample
            )
        return out

    def decompose(self, u, with_blocks=False, oversample=1):
        l2 = np.sqrt(self.block_l2_sq(u.coeffs))
        linf = self.block_linf(u, oversample=oversample)
        blocks = [self.block(u, q) for q in self.shells] if with_blocks else None
        return LPDecomposition(
            grid=self.grid,
            q_max=self.q_max,
            lambdas=self.lambdas.copy(),
            l2=l2,
            linf=linf,
            blocks=blocks,
        )

    def sobolev_norm(self, u, s):
        """H^s norm (sum_q lambda_q^{2s} ||u_q||_2^2)^(1/2); any real s."""
        coeffs = u.coeffs if isinstance(u, SpectralVelocity) else u
        l2sq = self.block_l2_sq(coeffs)
        return float(np.sqrt(np.sum(self.lambdas ** (2.0 * s) * l2sq)))

    def h_minus1_norm(self, coeffs):
        """||f||_{H^-1} = (sum_q lambda_q^{-2} ||f_q||_2^2)^(1/2)."""
        return self.sobolev_norm(coeffs, -1.0)

    def grad_low_linf(self, u, q, oversample=1):
        """||grad u_{<=q}||_inf: max |d_j u_i| of the low-pass field."""
        low = self.low(u, q)
        return linf_of_coeffs(
            self.grid, gradient_coeffs(low), oversample=oversample
        )


_LP_CACHE = {}


def get_lp(grid, profile=None):
    """Shared LittlewoodPaley instance per grid (masks are expensive)."""
    if profile is not None:
        return LittlewoodPaley(grid, profile)
    lp = _LP_CACHE.get(grid)
    if lp is None:
        lp = LittlewoodPaley(grid)
        _LP_CACHE[grid] = lp
    return lp


# ---------------------------------------------------------------------------
# Bernstein-constant calibration
# ---------------------------------------------------------------------------


@dataclass
class BernsteinCalibration:
    """Result of calibrating C_B over a set of sample fields."""

    c_b: float
    worst_sample: int
    worst_shell: int
    blocks_seen: int
    lower_violations: list  # (sample, shell, ratio < 1) entries


def calibrate_bernstein(samples, lp=None, oversample=1):
    """Estimate C_B = max over samples/shells of ||u_q||_inf^2/(lambda_q^3 ||u_q||_2^2).

    Also checks the lower half of the Bernstein sandwich,
    lambda_0^3 ||u_q||_2^2 <= ||u_q||_inf^2, and reports violations.
    Empty blocks (and all-zero samples) are skipped.
    """
    best = 0.0
    worst = (-1, -1)
    seen = 0
    violations = []
    for idx, u in enumerate(samples):
        if lp is None or lp.grid != u.grid:
            lp = get_lp(u.grid)
        dec = lp.decompose(u, oversample=oversample)
        total = float(np.max(dec.l2))
        if total == 0.0:
            continue
        lam0 = u.grid.lambda0
        for i, q in enumerate(lp.shells):
            if dec.l2[i] <= 1e-14 * total:
                continue
            seen += 1
            ratio = dec.linf[i] ** 2 / (dec.lambdas[i] ** 3 * dec.l2[i] ** 2)
            if ratio > best:
                best = ratio
                worst = (idx, q)
            lower = dec.linf[i] ** 2 / (lam0**3 * dec.l2[i] ** 2)
            if lower < 1.0:
                violations.append((idx, q, lower))
    if seen == 0:
        raise AllZero("every calibration sample is zero")
    return BernsteinCalibration(
        c_b=best,
        worst_sample=worst[0],
        worst_shell=worst[1],
        blocks_seen=seen,
        lower_violations=violations,
    )


def calibration_fields(grid, seed=1234, n_random=4):
    """Deterministic calibration suite: random fields, single modes, packets.

    The wave packets (constant-direction coefficients across a whole shell)
    nearly saturate Bernstein's inequality and pin down C_B; random fields and
    single cosine pairs populate the low-ratio end.
    """
    from .solver import random_divfree_field  # local import, no cycle

    lp = get_lp(grid)
    fields = []
    for i in range(n_random):
        fields.append(
            random_divfree_field(grid, seed=seed + i, k_peak=grid.dealias_limit / 2)
        )
    kmax = grid.dealias_limit
    n = grid.n
    for q in range(0, lp.q_max + 1):
        k = 2**q
        if k <= kmax:
            c = np.zeros((3, n, n, n), dtype=complex)
            c[1, k % n, 0, 0] = 0.5
            c[1, (-k) % n, 0, 0] = 0.5
            fields.append(SpectralVelocity(grid, c))
        packet = np.zeros((3, n, n, n), dtype=complex)
        packet[0] = lp.phi_mask(q)
        packet[1] = 0.5 * lp.phi_mask(q)
        v = SpectralVelocity(grid, project_coeffs(grid, packet))
        if v.l2_norm() > 0:
            fields.append(v)
    return fields


_CB_CACHE = {}


def default_bernstein_constant(grid, seed=1234):
    """C_B from the standard calibration suite; cached per grid."""
    key = (grid, seed)
    if key not in _CB_CACHE:
        cal = calibrate_bernstein(calibration_fields(grid, seed=seed))
        _CB_CACHE[key] = cal.c_b
    return _CB_CACHE[key]


def write_shell_csv(path, decomposition, config_hash="none"):
    """Shell-spectrum CSV: q, lambda_q, block_l2, block_linf (one row per shell)."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["q", "lambda_q", "block_l2", "block_linf"])
        for i, q in enumerate(range(decomposition.q_min, decomposition.q_max + 1)):
            writer.writerow(
                [
                    q,
                    repr(float(decomposition.lambdas[i])),
                    repr(float(decomposition.l2[i])),
                    repr(float(decomposition.linf[i])),
                ]
            )
