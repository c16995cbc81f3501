"""Torus geometry, spectral transforms, Leray projection, dealiased advection.

Conventions used everywhere in the package:

* Wave vectors are integer triples k; the physical wavenumber is (2*pi/L)*k.
* Coefficients are true Fourier coefficients: u(x) = sum_k uhat(k) e^{i(2pi/L)k.x},
  i.e. uhat = fftn(u)/N^3.
* L2 norm carries the continuum normalization ||u||_2^2 = L^3 * sum_k |uhat(k)|^2
  (= (L/N)^3 * sum_x |u(x)|^2, exact for band-limited fields).
* L-infinity norms are the max absolute component value on the collocation grid.
* Dealiasing is the 2/3 rule: coefficients with any |k_i| > floor(N/3) are zero.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as _fft

from .errors import GridMismatch, NonFinite, SnapshotFormatError

ENV_THREADS = "TORUSDNS_THREADS"


_DEFAULT_WORKERS = None


def fft_workers():
    """FFT worker count; set the TORUSDNS_THREADS env variable to override.

    Results are reproducible across worker counts (pocketfft splits work over
    independent 1D transforms).
    """
    raw = os.environ.get(ENV_THREADS)
    if raw:
        return max(1, int(raw))
    global _DEFAULT_WORKERS
    if _DEFAULT_WORKERS is None:
        _DEFAULT_WORKERS = min(2, os.cpu_count() or 1)
    return _DEFAULT_WORKERS


@dataclass(frozen=True)
class TorusGrid:
    """Cubic periodic box: n collocation points per axis, period length."""

    n: int
    length: float

    def __post_init__(self):
        if self.n < 16 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")
        if not self.length > 0:
            raise ValueError(f"length must be positive, got {self.length}")

    @property
    def lambda0(self):
        return 1.0 / self.length

    @property
    def kappa0(self):
        return 2.0 * np.pi / self.length

    @property
    def dx(self):
        return self.length / self.n

    @property
    def dealias_limit(self):
        return self.n // 3


_GRID_ARRAYS: dict = {}


def _grid_cache(grid):
    arrays = _GRID_ARRAYS.get(grid)
    if arrays is None:
        n = grid.n
        k1 = np.fft.fftfreq(n, d=1.0 / n)  # integer wave numbers
        kx = k1[:, None, None]
        ky = k1[None, :, None]
        kz = k1[None, None, :]
        ksq = kx * kx + ky * ky + kz * kz
        m = grid.dealias_limit
        dealias = (np.abs(kx) <= m) & (np.abs(ky) <= m) & (np.abs(kz) <= m)
        safe = np.where(ksq > 0, ksq, 1.0)
        fac = 2.0j * np.pi / grid.length
        arrays = {
            "k": (kx, ky, kz),
            "ik": (fac * kx, fac * ky, fac * kz),
            "kmag_int": np.sqrt(ksq),
            "dealias": dealias,
            "inv_ksq_int": np.where(ksq > 0, 1.0 / safe, 0.0),
            "ksq_phys": ksq * (2.0 * np.pi / grid.length) ** 2,
        }
        _GRID_ARRAYS[grid] = arrays
    return arrays


def integer_wavevectors(grid):
    """Broadcastable integer wave-number arrays (kx, ky, kz)."""
    return _grid_cache(grid)["k"]


def dealias_mask(grid):
    return _grid_cache(grid)["dealias"]


def wavenumber_magnitude(grid):
    """|k| on the integer lattice (wavenumber in units of 1/L is |k|/L)."""
    return _grid_cache(grid)["kmag_int"]


@dataclass
class SpectralVelocity:
    """Divergence-free, zero-mean, dealiased velocity coefficients.

    coeffs has shape (3, n, n, n), complex128, Hermitian-symmetric so the
    physical field is real.
    """

    grid: TorusGrid
    coeffs: np.ndarray = field(repr=False)
    time: float = 0.0

    def copy(self):
        return SpectralVelocity(self.grid, self.coeffs.copy(), self.time)

    def l2_norm(self):
        return float(np.sqrt(self.grid.length**3 * np.sum(np.abs(self.coeffs) ** 2)))

    def energy(self):
        """Kinetic energy 0.5*||u||_2^2."""
        return 0.5 * self.l2_norm() ** 2

    def enstrophy(self):
        """||grad u||_2^2 with the physical gradient (2*pi/L)k."""
        ksq = _grid_cache(self.grid)["ksq_phys"]
        return float(self.grid.length**3 * np.sum(ksq * np.abs(self.coeffs) ** 2))

    def energy_enstrophy(self):
        """(energy, enstrophy) in one pass over the coefficients."""
        power = np.sum(self.coeffs.real**2 + self.coeffs.imag**2, axis=0)
        vol = self.grid.length**3
        ksq = _grid_cache(self.grid)["ksq_phys"]
        return 0.5 * vol * float(np.sum(power)), vol * float(np.sum(ksq * power))

    def inner(self, other):
        """L2 inner product (self, other) under the continuum normalization."""
        _same_grid(self.grid, other.grid)
        return float(
            self.grid.length**3 * np.sum(np.real(self.coeffs * np.conj(other.coeffs)))
        )

    def linf_norm(self, oversample=1):
        """Max absolute component value on the (optionally refined) grid."""
        return linf_of_coeffs(self.grid, self.coeffs, oversample=oversample)

    def divergence_residual(self):
        """max_k |k.uhat(k)| relative to max_k |k|*|uhat(k)| (0 for zero field)."""
        kx, ky, kz = integer_wavevectors(self.grid)
        div = kx * self.coeffs[0] + ky * self.coeffs[1] + kz * self.coeffs[2]
        kmag = _grid_cache(self.grid)["kmag_int"]
        scale = float(np.max(kmag * np.max(np.abs(self.coeffs), axis=0)))
        if scale == 0.0:
            return 0.0
        return float(np.max(np.abs(div))) / scale

    def check(self, tol=1e-13):
        """Assert the type invariants (Hermitian, zero-mean, div-free, dealiased)."""
        c = self.coeffs
        if not np.all(np.isfinite(c)):
            raise NonFinite("non-finite coefficient in velocity field")
        assert c.shape == (3, self.grid.n, self.grid.n, self.grid.n)
        scale = max(float(np.max(np.abs(c))), 1e-300)
        assert float(np.max(np.abs(c[:, 0, 0, 0]))) <= tol * scale, "mean is not zero"
        assert self.divergence_residual() <= tol, "field is not divergence-free"
        mask = dealias_mask(self.grid)
        outside = float(np.max(np.abs(c * ~mask), initial=0.0))
        assert outside == 0.0, "aliased modes present"
        flipped = np.roll(np.conj(c[:, ::-1, ::-1, ::-1]), 1, axis=(1, 2, 3))
        assert float(np.max(np.abs(c - flipped))) / scale <= 1e-12, "not Hermitian"
        return self


@dataclass
class PhysicalField:
    """3-component real samples on the uniform grid, shape (3, n, n, n)."""

    grid: TorusGrid
    values: np.ndarray = field(repr=False)


def _same_grid(a, b):
    if a != b:
        raise GridMismatch(f"grids differ: {a} vs {b}")


def to_physical(u):
    """Inverse transform; the (tiny) imaginary residue is checked and dropped."""
    w = _fft.ifftn(u.coeffs, axes=(1, 2, 3), workers=fft_workers())
    w *= u.grid.n**3
    scale = float(np.max(np.abs(w)))
    if scale > 0:
        resid = float(np.max(np.abs(w.imag))) / scale
        if resid > 1e-12:
            raise NonFinite(f"imaginary residue {resid:.3e} exceeds 1e-12")
    return PhysicalField(u.grid, np.ascontiguousarray(w.real))


def to_spectral(f):
    """Forward transform to a raw coefficient tensor (not projected)."""
    c = _fft.fftn(f.values, axes=(1, 2, 3), workers=fft_workers())
    c /= f.grid.n**3
    return c


def _ifft_real(grid, coeffs):
    # fast path: trusts Hermitian input, returns real samples
    w = _fft.ifftn(coeffs, axes=(-3, -2, -1), workers=fft_workers())
    return w.real * grid.n**3


def linf_of_coeffs(grid, coeffs, oversample=1):
    """Grid max of |components|; oversample=2 refines the evaluation lattice."""
    if oversample == 1:
        return float(np.max(np.abs(_ifft_real(grid, coeffs))))
    n = grid.n
    m = oversample * n
    h = n // 2
    big = np.zeros(coeffs.shape[:-3] + (m, m, m), dtype=complex)
    dst = np.r_[0:h, m - h : m]
    src = np.r_[0:h, n - h : n]
    big[..., dst[:, None, None], dst[None, :, None], dst[None, None, :]] = coeffs[
        ..., src[:, None, None], src[None, :, None], src[None, None, :]
    ]
    w = _fft.ifftn(big, axes=(-3, -2, -1), workers=fft_workers())
    return float(np.max(np.abs(w.real))) * m**3


def gradient_coeffs(u):
    """Spectral gradient: array (3, 3, n, n, n) with [i, j] = (d_j u_i)-hat."""
    kx, ky, kz = integer_wavevectors(u.grid)
    fac = 2j * np.pi / u.grid.length
    out = np.empty((3, 3) + u.coeffs.shape[1:], dtype=complex)
    for i in range(3):
        out[i, 0] = fac * kx * u.coeffs[i]
        out[i, 1] = fac * ky * u.coeffs[i]
        out[i, 2] = fac * kz * u.coeffs[i]
    return out


def gradient_linf(u, oversample=1):
    """Max absolute entry of grad u on the collocation grid."""
    return linf_of_coeffs(u.grid, gradient_coeffs(u), oversample=oversample)


def project_coeffs(grid, coeffs):
    """In-place-free Leray projection of a raw coefficient tensor.

    Zeroes the mean mode (projection onto zero-mean fields) and applies the
    2/3-rule mask, so the result satisfies every SpectralVelocity invariant.
    """
    kx, ky, kz = integer_wavevectors(grid)
    cache = _grid_cache(grid)
    kdotu = kx * coeffs[0]
    kdotu += ky * coeffs[1]
    kdotu += kz * coeffs[2]
    kdotu *= cache["inv_ksq_int"]
    out = coeffs.copy()
    out[0] -= kx * kdotu
    out[1] -= ky * kdotu
    out[2] -= kz * kdotu
    out *= cache["dealias"]
    out[:, 0, 0, 0] = 0.0
    return out


def leray_project(coeffs, grid, time=0.0):
    """Project a coefficient tensor onto divergence-free velocities.

    uhat(k) <- uhat(k) - k (k.uhat(k))/|k|^2 for k != 0; idempotent and
    self-adjoint in the L2 inner product.
    """
    if isinstance(coeffs, SpectralVelocity):
        grid, time, coeffs = coeffs.grid, coeffs.time, coeffs.coeffs
    return SpectralVelocity(grid, project_coeffs(grid, coeffs), time)


def advection_coeffs(u):
    """Dealiased advection product: ((u.grad)u)-hat, plus max|u| as a bonus.

    Pseudo-spectral: d_j u_i applied in spectral space, products on the grid,
    2/3-rule mask on the result (inputs are already dealiased by invariant, so
    masking the quadratic product keeps it alias-free). Returns
    (coefficient tensor, max|u| on the grid).
    """
    grid = u.grid
    n = grid.n
    cache = _grid_cache(grid)
    ik = cache["ik"]
    c = u.coeffs
    batch = np.empty((12, n, n, n), dtype=complex)
    batch[0:3] = c
    for i in range(3):
        for j in range(3):
            np.multiply(c[i], ik[j], out=batch[3 + 3 * i + j])
    phys = _ifft_real(grid, batch)
    vel = phys[0:3]
    linf = float(np.max(np.abs(vel)))
    prod = np.empty((3, n, n, n))
    for i in range(3):
        g = phys[3 + 3 * i : 6 + 3 * i]
        np.multiply(vel[0], g[0], out=prod[i])
        prod[i] += vel[1] * g[1]
        prod[i] += vel[2] * g[2]
    adv = _fft.fftn(prod, axes=(1, 2, 3), workers=fft_workers())
    adv /= n**3
    adv *= cache["dealias"]
    return adv, linf


def nonlinear_term(u):
    """-P((u.grad)u), dealiased; energy-neutral up to roundoff."""
    adv, _ = advection_coeffs(u)
    return leray_project(-adv, u.grid, u.time)


# ---------------------------------------------------------------------------
# Binary snapshot format
#
# magic "NSE3DSNP" | u32 version=1 | u32 N | f64 L | f64 nu | f64 t |
# 3*N^3 f64 physical samples, component-major, x-fastest row-major.
# All integers and floats little-endian.
# ---------------------------------------------------------------------------

SNAPSHOT_MAGIC = b"NSE3DSNP"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<II3d")


def write_snapshot(path, u, nu):
    """Write a velocity field as physical samples in the binary container."""
    phys = to_physical(u)
    samples = np.transpose(phys.values, (0, 3, 2, 1))  # x-fastest per component
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(_HEADER.pack(SNAPSHOT_VERSION, u.grid.n, u.grid.length, nu, u.time))
        fh.write(np.ascontiguousarray(samples, dtype="<f8").tobytes())


def read_snapshot(path):
    """Read a snapshot; returns (grid, nu, t, PhysicalField).

    Rejects wrong magic bytes or an unsupported version.
    """
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != SNAPSHOT_MAGIC:
            raise SnapshotFormatError(f"bad magic {magic!r} in {path}")
        version, n, length, nu, t = _HEADER.unpack(fh.read(_HEADER.size))
        if version != SNAPSHOT_VERSION:
            raise SnapshotFormatError(f"unsupported snapshot version {version}")
        raw = fh.read(3 * n**3 * 8)
        if len(raw) != 3 * n**3 * 8:
            raise SnapshotFormatError(f"truncated snapshot {path}")
    grid = TorusGrid(n, length)
    samples = np.frombuffer(raw, dtype="<f8").reshape(3, n, n, n)
    values = np.ascontiguousarray(np.transpose(samples, (0, 3, 2, 1)))
    return grid, nu, t, PhysicalField(grid, values)


def velocity_from_snapshot(path):
    """Read a snapshot and rebuild the SpectralVelocity (projected, dealiased)."""
    grid, nu, t, phys = read_snapshot(path)
    return leray_project(to_spectral(phys), grid, time=t), nu
