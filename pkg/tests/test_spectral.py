import numpy as np
import pytest

from torusdns.errors import SnapshotFormatError
from torusdns.spectral import (
    PhysicalField,
    SpectralVelocity,
    TorusGrid,
    dealias_mask,
    integer_wavevectors,
    leray_project,
    linf_of_coeffs,
    nonlinear_term,
    read_snapshot,
    to_physical,
    to_spectral,
    velocity_from_snapshot,
    write_snapshot,
)
from torusdns.solver import shear_mode

from conftest import make_field


def test_grid_invariants():
    g = TorusGrid(32, 2.0)
    assert g.kappa0 == 2.0 * np.pi * g.lambda0
    assert g.dealias_limit == 10
    with pytest.raises(ValueError):
        TorusGrid(24, 1.0)  # not a power of two
    with pytest.raises(ValueError):
        TorusGrid(8, 1.0)  # too small
    with pytest.raises(ValueError):
        TorusGrid(32, 0.0)


def test_to_physical_single_cosine_pair():
    g = TorusGrid(32, 2.0)
    c = np.zeros((3, 32, 32, 32), dtype=complex)
    c[0, 1, 0, 0] = 0.5
    c[0, -1 % 32, 0, 0] = 0.5
    u = SpectralVelocity(g, c)
    f = to_physical(u)
    x = np.arange(32) * g.dx
    expected = np.cos(2.0 * np.pi * x / g.length)[:, None, None]
    assert np.max(np.abs(f.values[0] - expected)) < 1e-14
    assert np.max(np.abs(f.values[1:])) == 0.0


def test_to_physical_zero(grid32):
    u = SpectralVelocity(grid32, np.zeros((3, 32, 32, 32), dtype=complex))
    assert np.max(np.abs(to_physical(u).values)) == 0.0


def test_round_trip_random(grid32):
    for seed in range(5):
        u = make_field(grid32, seed=seed)
        back = to_spectral(to_physical(u))
        scale = np.max(np.abs(u.coeffs))
        assert np.max(np.abs(back - u.coeffs)) <= 1e-12 * scale


def test_to_spectral_cosine_and_constant(grid32):
    n = grid32.n
    x = np.arange(n) * grid32.dx
    vals = np.zeros((3, n, n, n))
    vals[0] = np.cos(2.0 * np.pi * x / grid32.length)[:, None, None]
    c = to_spectral(PhysicalField(grid32, vals))
    assert abs(c[0, 1, 0, 0] - 0.5) < 1e-13
    assert abs(c[0, -1 % n, 0, 0] - 0.5) < 1e-13
    c[0, 1, 0, 0] = 0.0
    c[0, -1 % n, 0, 0] = 0.0
    assert np.max(np.abs(c)) < 1e-13

    const = to_spectral(PhysicalField(grid32, np.full((3, n, n, n), 2.5)))
    assert abs(const[0, 0, 0, 0] - 2.5) < 1e-13


def test_parseval(grid32):
    u = make_field(grid32, seed=9)
    f = to_physical(u)
    grid_sum = float(np.sum(f.values**2)) / grid32.n**3
    coeff_sum = float(np.sum(np.abs(u.coeffs) ** 2))
    assert abs(grid_sum - coeff_sum) <= 1e-12 * coeff_sum


def test_leray_unchanged_on_divfree(grid32, field32):
    p = leray_project(field32.coeffs, grid32)
    scale = np.max(np.abs(field32.coeffs))
    assert np.max(np.abs(p.coeffs - field32.coeffs)) <= 1e-15 * scale


def test_leray_kills_gradients(grid32, rng):
    kx, ky, kz = integer_wavevectors(grid32)
    n = grid32.n
    g = rng.standard_normal((n, n, n)) + 1j * rng.standard_normal((n, n, n))
    grad = np.stack([kx * g, ky * g, kz * g])
    out = leray_project(grad, grid32)
    assert np.max(np.abs(out.coeffs)) <= 1e-13 * np.max(np.abs(grad))


def test_leray_idempotent_and_divfree_100_random(grid32, rng):
    n = grid32.n
    for _ in range(100):
        c = rng.standard_normal((3, n, n, n)) + 1j * rng.standard_normal((3, n, n, n))
        once = leray_project(c, grid32)
        assert once.divergence_residual() <= 1e-13
        twice = leray_project(once.coeffs, grid32)
        scale = max(np.max(np.abs(once.coeffs)), 1e-300)
        assert np.max(np.abs(twice.coeffs - once.coeffs)) <= 1e-13 * scale


def test_leray_self_adjoint(grid32, rng):
    n = grid32.n
    a = rng.standard_normal((3, n, n, n)) + 1j * rng.standard_normal((3, n, n, n))
    b = rng.standard_normal((3, n, n, n)) + 1j * rng.standard_normal((3, n, n, n))
    pa, pb = leray_project(a, grid32), leray_project(b, grid32)

    def inner(x, y):
        return float(np.real(np.sum(x * np.conj(y)))) * grid32.length**3

    lhs, rhs = inner(pa.coeffs, b), inner(a, pb.coeffs)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1.0)


def test_nonlinear_shear_mode_exactly_zero(grid32):
    u = shear_mode(grid32, amplitude=2.3, k=2)
    out = nonlinear_term(u)
    assert np.max(np.abs(out.coeffs)) == 0.0


def test_nonlinear_zero(grid32):
    u = SpectralVelocity(grid32, np.zeros((3, 32, 32, 32), dtype=complex))
    assert np.max(np.abs(nonlinear_term(u).coeffs)) == 0.0


def test_nonlinear_skew_symmetry(grid32):
    for seed in range(5):
        u = make_field(grid32, seed=seed, amplitude=1.0)
        nl = nonlinear_term(u)
        num = abs(nl.inner(u))
        denom = u.l2_norm() * np.sqrt(u.enstrophy()) * u.linf_norm()
        assert num <= 1e-10 * denom


def test_nonlinear_output_invariants(field32):
    out = nonlinear_term(field32)
    out.check(tol=1e-13)


def test_velocity_check_rejects_divergence(grid32, rng):
    n = grid32.n
    c = rng.standard_normal((3, n, n, n)) + 1j * rng.standard_normal((3, n, n, n))
    u = SpectralVelocity(grid32, c)
    with pytest.raises(AssertionError):
        u.check()


def test_snapshot_round_trip_bit_exact(tmp_path, grid32, field32):
    path = tmp_path / "a.nse"
    write_snapshot(path, field32, nu=0.07)
    grid, nu, t, phys = read_snapshot(path)
    assert grid == grid32 and nu == 0.07 and t == field32.time
    # stored samples survive the read byte for byte
    assert np.array_equal(phys.values, to_physical(field32).values)
    # serialization is deterministic: same field, same bytes
    path2 = tmp_path / "b.nse"
    write_snapshot(path2, field32, nu=0.07)
    assert path.read_bytes() == path2.read_bytes()
    # reconstructing the velocity goes through FFTs: exact to roundoff only
    u2, _ = velocity_from_snapshot(path)
    scale = np.max(np.abs(field32.coeffs))
    assert np.max(np.abs(u2.coeffs - field32.coeffs)) <= 1e-12 * scale


def test_snapshot_rejects_bad_magic_and_version(tmp_path, grid32, field32):
    path = tmp_path / "a.nse"
    write_snapshot(path, field32, nu=0.07)
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad_magic.nse"
    bad.write_bytes(b"XX" + raw[2:])
    with pytest.raises(SnapshotFormatError):
        read_snapshot(bad)
    rawv = bytearray(raw)
    rawv[8] = 99  # version field
    badv = tmp_path / "bad_version.nse"
    badv.write_bytes(bytes(rawv))
    with pytest.raises(SnapshotFormatError):
        read_snapshot(badv)


def test_reproducible_across_worker_counts(grid32, field32, monkeypatch):
    monkeypatch.setenv("TORUSDNS_THREADS", "1")
    one = nonlinear_term(field32).coeffs
    monkeypatch.setenv("TORUSDNS_THREADS", "2")
    two = nonlinear_term(field32).coeffs
    scale = max(float(np.max(np.abs(one))), 1e-300)
    assert np.max(np.abs(one - two)) <= 1e-13 * scale


def test_linf_oversample_close_for_smooth_block(grid32, field32):
    coarse = linf_of_coeffs(grid32, field32.coeffs, oversample=1)
    fine = linf_of_coeffs(grid32, field32.coeffs, oversample=2)
    assert fine >= coarse - 1e-12
    assert fine <= 2.0 * coarse  # band-limited fields cannot hide much mass


def test_dealias_mask_shape(grid32):
    m = dealias_mask(grid32)
    kx, ky, kz = integer_wavevectors(grid32)
    lim = grid32.dealias_limit
    inside = (np.abs(kx) <= lim) & (np.abs(ky) <= lim) & (np.abs(kz) <= lim)
    assert np.array_equal(m, inside)
