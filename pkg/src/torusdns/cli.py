"""Command-line interface: simulate | diagnose | sync | calibrate | oracle.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 check-mode
failure. Errors print one machine-readable line `error: <Kind>: <message>`
to stderr. The only environment variable honored is TORUSDNS_THREADS (FFT
worker count); it never changes results beyond 1e-13 reproducibility.
"""

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import replace as dc_replace
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, lp as lp_mod, solver, sync as sync_mod
from .config import config_hash, emit_config, fnv1a64, parse_config
from .errors import (
    CheckFailure,
    ConfigError,
    NumericalError,
    TorusDnsError,
    ValidationError,
)
from .solver import SolverConfig, build_force
from .spectral import velocity_from_snapshot
from .sync import SyncConfig

DIAG_COLUMNS = [
    "t", "energy", "enstrophy", "Lambda", "Q",
    "d_window", "eps_window", "kappa_d_window", "G",
]
WINDOW_COLUMNS = [
    "t_start", "T", "avg_enstrophy", "d", "eps", "kappa_d",
    "avg_Lambda", "avg_Lambda_log", "G", "C_emp",
    "enstrophy_margin", "kappa_margin",
    "avg_Lambda_log_raw", "enstrophy_ok", "kappa_ok",
]
SYNC_COLUMNS = ["t", "Q", "Lambda", "w_Hs", "w_L2", "enforced"]


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class CsvSink:
    """CSV with a config-hash comment line and a header row; flushed per row."""

    def __init__(self, path, columns, cfg_hash):
        self.path = Path(path)
        self.fh = open(path, "w", newline="")
        self.fh.write(f"# config_hash={cfg_hash}\n")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(columns)
        self.fh.flush()

    def row(self, values):
        self.writer.writerow([_fmt(v) for v in values])
        self.fh.flush()

    def close(self):
        self.fh.close()


def read_csv(path):
    """(columns, rows-of-floats) skipping comment lines."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    rows = [[float(x) for x in row] for row in reader]
    return header, rows


class Manifest:
    """Records every emitted file with its byte size and FNV-1a checksum."""

    def __init__(self, outdir, cfg_hash):
        self.outdir = Path(outdir)
        self.cfg_hash = cfg_hash
        self.started_at = time.time()
        self.files = []

    def add(self, path):
        path = Path(path)
        data = path.read_bytes()
        self.files.append(
            {
                "path": str(path.relative_to(self.outdir)),
                "bytes": len(data),
                "fnv1a64": f"{fnv1a64(data):016x}",
            }
        )

    def write(self):
        payload = {
            "config_hash": self.cfg_hash,
            "code_version": __version__,
            "started_at": self.started_at,
            "finished_at": time.time(),
            "files": sorted(self.files, key=lambda f: f["path"]),
        }
        with open(self.outdir / "manifest.json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def verify_manifest(outdir):
    """Re-read a manifest and recompute checksums; returns mismatch list."""
    outdir = Path(outdir)
    with open(outdir / "manifest.json") as fh:
        payload = json.load(fh)
    bad = []
    for entry in payload["files"]:
        p = outdir / entry["path"]
        if not p.exists():
            bad.append((entry["path"], "missing"))
            continue
        data = p.read_bytes()
        if len(data) != entry["bytes"] or f"{fnv1a64(data):016x}" != entry["fnv1a64"]:
            bad.append((entry["path"], "checksum"))
    return bad


def _prepare_outdir(outdir, config):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    text = emit_config(config)
    (outdir / "config.ini").write_text(text)
    return outdir, config_hash(config)


def _bernstein_constant(cfg):
    if cfg.cb is not None:
        return cfg.cb
    return lp_mod.default_bernstein_constant(cfg.grid)


def _window_row(ws):
    eb, kb = ws.enstrophy_bound, ws.kappa_bound
    return [
        ws.t_start, ws.window, ws.avg_enstrophy, ws.d, ws.eps, ws.kappa_d,
        ws.avg_lambda, ws.avg_lambda_log, ws.g, ws.c_emp,
        eb.margin, kb.margin, ws.avg_lambda_log_raw, eb.ok, kb.ok,
    ]


def _emit_shell_csvs(outdir, cfg, cfg_hash, manifest):
    shell_dir = outdir / "shells"
    snapdir = outdir / "snapshots"
    lp = lp_mod.get_lp(cfg.grid)
    shell_dir.mkdir(exist_ok=True)
    for snap in sorted(snapdir.glob("snap_*.nse")):
        u, _ = velocity_from_snapshot(snap)
        dec = lp.decompose(u, oversample=cfg.oversample)
        path = shell_dir / (snap.stem.replace("snap_", "shells_") + ".csv")
        lp_mod.write_shell_csv(path, dec, config_hash=cfg_hash)
        manifest.add(path)


def cmd_simulate(args):
    cfg = parse_config(args.config)
    if isinstance(cfg, SyncConfig):
        raise ValidationError("config has a [sync] section; use the sync subcommand")
    outdir, cfg_hash = _prepare_outdir(args.out, cfg)
    manifest = Manifest(outdir, cfg_hash)
    manifest.add(outdir / "config.ini")
    c_b = _bernstein_constant(cfg)
    force = build_force(cfg.forcing, cfg.grid)
    g_report = diagnostics.grashof(force, cfg.nu, cfg.grid, window_t=cfg.window_t)
    acc = diagnostics.WindowAccumulator(
        nu=cfg.nu, c_b=c_b, g=g_report.g, kappa0=cfg.grid.kappa0,
        window_t=cfg.window_t, transient=cfg.transient_time(),
    )
    diag = CsvSink(outdir / "diagnostics.csv", DIAG_COLUMNS, cfg_hash)
    windows = CsvSink(outdir / "windows.csv", WINDOW_COLUMNS, cfg_hash)
    last = None
    n_windows = 0
    try:
        for state, rec in solver.run(cfg, outdir=outdir):
            ws = acc.add(rec)
            if ws is not None:
                last = ws
                n_windows += 1
                windows.row(_window_row(ws))
            diag.row(
                [
                    rec.t, rec.energy, rec.enstrophy, rec.lam, rec.q,
                    last.d if last else math.nan,
                    last.eps if last else math.nan,
                    last.kappa_d if last else math.nan,
                    g_report.g,
                ]
            )
    finally:
        diag.close()
        windows.close()
        manifest.add(outdir / "diagnostics.csv")
        manifest.add(outdir / "windows.csv")
        for snap in sorted((outdir / "snapshots").glob("snap_*.nse")):
            manifest.add(snap)
        _emit_shell_csvs(outdir, cfg, cfg_hash, manifest)
        manifest.write()
    print(f"simulate: t_end={cfg.t_end} windows={n_windows} out={outdir}")
    return 0


def cmd_diagnose(args):
    rundir = Path(args.rundir)
    cfg_path = args.config or rundir / "config.ini"
    cfg = parse_config(cfg_path)
    if isinstance(cfg, SyncConfig):
        cfg = cfg.base
    outdir = Path(args.out) if args.out else rundir / "diagnose"
    outdir.mkdir(parents=True, exist_ok=True)
    cfg_hash = config_hash(cfg)
    manifest = Manifest(outdir, cfg_hash)
    lp = lp_mod.get_lp(cfg.grid)
    c_b = _bernstein_constant(cfg)
    force = build_force(cfg.forcing, cfg.grid)
    g_report = diagnostics.grashof(force, cfg.nu, cfg.grid, window_t=cfg.window_t)
    acc = diagnostics.WindowAccumulator(
        nu=cfg.nu, c_b=c_b, g=g_report.g, kappa0=cfg.grid.kappa0,
        window_t=cfg.window_t, transient=cfg.transient_time(),
    )
    snaps = sorted((rundir / "snapshots").glob("snap_*.nse"))
    if not snaps:
        raise ValidationError(f"no snapshots under {rundir}")
    diag = CsvSink(outdir / "diagnostics.csv", DIAG_COLUMNS, cfg_hash)
    windows = CsvSink(outdir / "windows.csv", WINDOW_COLUMNS, cfg_hash)
    shell_dir = outdir / "shells"
    shell_dir.mkdir(exist_ok=True)
    last = None
    try:
        for snap in snaps:
            u, _ = velocity_from_snapshot(snap)
            rec = diagnostics.compute_record(
                u, cfg.nu, cfg.delta, cfg.c0, lp=lp, oversample=cfg.oversample
            )
            ws = acc.add(rec)
            if ws is not None:
                last = ws
                windows.row(_window_row(ws))
            diag.row(
                [
                    rec.t, rec.energy, rec.enstrophy, rec.lam, rec.q,
                    last.d if last else math.nan,
                    last.eps if last else math.nan,
                    last.kappa_d if last else math.nan,
                    g_report.g,
                ]
            )
            path = shell_dir / (snap.stem.replace("snap_", "shells_") + ".csv")
            lp_mod.write_shell_csv(path, rec.shells, config_hash=cfg_hash)
            manifest.add(path)
    finally:
        diag.close()
        windows.close()
        manifest.add(outdir / "diagnostics.csv")
        manifest.add(outdir / "windows.csv")
        manifest.write()
    print(f"diagnose: snapshots={len(snaps)} out={outdir}")
    return 0


def cmd_sync(args):
    cfg = parse_config(args.config)
    if isinstance(cfg, SolverConfig):
        cfg = SyncConfig(base=cfg)
    if args.perturb_shell is not None:
        shell = None if args.perturb_shell == "auto" else int(args.perturb_shell)
        cfg = dc_replace(cfg, perturb_shell=shell)
    if args.perturb_amp is not None:
        cfg = dc_replace(cfg, perturb_amp=args.perturb_amp)
    if args.enforce is not None:
        cfg = dc_replace(cfg, enforce=args.enforce)
    cfg.validate()
    outdir, cfg_hash = _prepare_outdir(args.out, cfg)
    manifest = Manifest(outdir, cfg_hash)
    manifest.add(outdir / "config.ini")
    sink = CsvSink(outdir / "sync.csv", SYNC_COLUMNS, cfg_hash)
    try:
        result = sync_mod.run_sync(cfg)
        for rec in result.records:
            sink.row([rec.t, rec.q, rec.lam, rec.w_hs, rec.w_l2, rec.enforced])
    finally:
        sink.close()
        manifest.add(outdir / "sync.csv")
    fit = result.fit
    rate = cfg.base.nu * cfg.base.grid.kappa0 ** (2.0 + 2.0 * cfg.s_exponent)
    ok, worst, n_checked, n_floor = sync_mod.pointwise_decay_check(
        result.records, result.t0, rate
    )
    report = {
        "note": "finite-horizon surrogate",
        "s_exponent": cfg.s_exponent,
        "bound_rate": rate,
        "t_sync_start": result.t_sync_start,
        "t0": result.t0,
        "perturb_shell": result.q_pert,
        "max_enforce_energy_delta": result.max_energy_delta,
        "pointwise_ok": ok,
        "pointwise_worst_margin": None if math.isinf(worst) else worst,
        "pointwise_checked": n_checked,
        "pointwise_floor": n_floor,
        "fit": None
        if fit is None
        else {
            "status": fit.status,
            "fitted_rate": None if math.isnan(fit.fitted_rate) else fit.fitted_rate,
            "bound_rate": fit.bound_rate,
            "margin": None if math.isinf(fit.margin) else fit.margin,
            "ok": fit.ok,
            "n_used": fit.n_used,
        },
    }
    with open(outdir / "decay_report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add(outdir / "decay_report.json")
    manifest.write()
    status = "none" if fit is None else fit.status
    print(f"sync: records={len(result.records)} fit={status} out={outdir}")
    return 0


def cmd_calibrate(args):
    cfg = parse_config(args.config)
    if isinstance(cfg, SyncConfig):
        cfg = cfg.base
    outdir, cfg_hash = _prepare_outdir(args.out, cfg)
    manifest = Manifest(outdir, cfg_hash)
    manifest.add(outdir / "config.ini")
    fields = lp_mod.calibration_fields(cfg.grid)
    cal = lp_mod.calibrate_bernstein(fields, oversample=cfg.oversample)
    path = outdir / "calibration.txt"
    with open(path, "w") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        fh.write(f"c_b = {cal.c_b!r}\n")
        fh.write(f"blocks_seen = {cal.blocks_seen}\n")
        fh.write(f"worst_sample = {cal.worst_sample}\n")
        fh.write(f"worst_shell = {cal.worst_shell}\n")
        fh.write(f"lower_violations = {len(cal.lower_violations)}\n")
    manifest.add(path)
    manifest.write()
    print(f"calibrate: c_b={cal.c_b!r} blocks={cal.blocks_seen}")
    return 0


def cmd_oracle(args):
    rundir = Path(args.rundir)
    cfg_path = args.config or rundir / "config.ini"
    cfg = parse_config(cfg_path)
    if isinstance(cfg, SyncConfig):
        cfg = cfg.base
    header, rows = read_csv(rundir / "diagnostics.csv")
    it, ilam, iq = header.index("t"), header.index("Lambda"), header.index("Q")
    snaps = sorted((rundir / "snapshots").glob("snap_*.nse"))
    if not snaps:
        raise ValidationError(f"no snapshots under {rundir}")
    checked = mismatches = unmatched = 0
    tol = cfg.dt / 4.0
    for snap in snaps:
        u, _ = velocity_from_snapshot(snap)
        match = [r for r in rows if abs(r[it] - u.time) <= tol]
        if not match:
            unmatched += 1
            continue
        lam, q = diagnostics.oracle_determining_wavenumber(
            u, cfg.nu, cfg.delta, cfg.c0
        )
        stored_lam, stored_q = match[0][ilam], int(match[0][iq])
        checked += 1
        if stored_q != q or abs(stored_lam - lam) > 1e-12 * max(lam, 1.0):
            mismatches += 1
            print(
                f"mismatch at t={u.time}: oracle Q={q} Lambda={lam!r}, "
                f"stored Q={stored_q} Lambda={stored_lam!r}"
            )
    print(f"oracle: checked={checked} mismatches={mismatches} unmatched={unmatched}")
    if mismatches:
        raise CheckFailure(f"{mismatches} determining-wavenumber mismatches")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="torusdns",
        description="Pseudo-spectral 3D NSE with determining-wavenumber diagnostics",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate one trajectory, emit CSVs/snapshots")
    p.add_argument("config")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="recompute diagnostics from stored snapshots")
    p.add_argument("rundir")
    p.add_argument("-c", "--config", default=None)
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sync", help="two-trajectory synchronization experiment")
    p.add_argument("config")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--perturb-shell", default=None)
    p.add_argument("--perturb-amp", type=float, default=None)
    p.add_argument(
        "--enforce", default=None, help="adaptive | fixed:<Q> | off"
    )
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("calibrate", help="calibrate the Bernstein constant C_B")
    p.add_argument("config")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("oracle", help="brute-force re-check of stored Lambda/Q")
    p.add_argument("rundir")
    p.add_argument("-c", "--config", default=None)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except CheckFailure as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    except TorusDnsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
