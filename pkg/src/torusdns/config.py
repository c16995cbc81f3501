"""Structured text configuration: key = value under [grid] [solver] [forcing]
[diagnostics] and optionally [sync].

Units are implied by L and nu (lengths in units of the box size scale, times
in the units fixed by nu's length^2/time). All defaults are documented in
DEFAULTS below; unknown sections or keys are rejected. A file containing a
[sync] section parses to a SyncConfig, otherwise to a SolverConfig.
"""

import configparser
import io

from .errors import ParseError, ValidationError
from .solver import ForcingSpec, InitSpec, SolverConfig
from .spectral import TorusGrid
from .sync import SyncConfig

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a (manifest checksums and config hashes; not security)."""
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


# section -> key -> (type tag, default); REQUIRED means no default.
REQUIRED = object()
AUTO = object()  # emitted/parsed as the literal string 'auto'

DEFAULTS = {
    "grid": {
        "n": ("int", REQUIRED),
        "l": ("float", REQUIRED),
    },
    "solver": {
        "nu": ("float", REQUIRED),
        "dt": ("float", AUTO),  # auto: L/(2N), the CFL step at unit velocity
        "t_end": ("float", 1.0),
        "delta": ("float", 0.5),
        "c0": ("float", 0.1),
        "seed": ("int", 0),
        "dealias": ("str", "2/3"),
        "init": ("str", "random"),
        "init_amplitude": ("float", 0.5),
        "init_k_peak": ("float", 3.0),
        "init_path": ("str", ""),
    },
    "forcing": {
        "kind": ("str", "none"),
        "amplitude": ("float", 0.0),
        "k_f": ("int", 1),
        "file": ("str", ""),
    },
    "diagnostics": {
        "window_t": ("float", AUTO),  # auto: t_end / 4
        "snapshot_stride": ("int", 50),
        "diag_stride": ("int", 10),
        "transient": ("float", AUTO),  # auto: 5/(nu kappa_0^2)
        "oversample": ("int", 1),
        "cb": ("float", AUTO),  # auto: per-grid calibrated C_B
    },
    "sync": {
        "perturb_shell": ("int", AUTO),  # auto: Q_typ + 1 from the pilot state
        "perturb_amp": ("float", 1e-2),
        "enforce": ("str", "adaptive"),
        "enforce_profile": ("str", "replace"),
        "measure_stride": ("int", 1),
    },
}


def _convert(section, key, raw, kind):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ValidationError(
            f"{section}.{key}: cannot parse {raw!r} as {kind}"
        ) from None


def _read_ini(text):
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), strict=True
    )
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ParseError(str(exc)) from None
    return parser


def parse_config(path):
    """Parse a config file into SolverConfig or SyncConfig (validated)."""
    with open(path, "r") as fh:
        return parse_config_text(fh.read())


def parse_config_text(text):
    parser = _read_ini(text)
    values = {}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ValidationError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in DEFAULTS[section]:
                raise ValidationError(f"unknown key {section}.{key}")
    for section, keys in DEFAULTS.items():
        if section == "sync" and not parser.has_section("sync"):
            continue
        for key, (kind, default) in keys.items():
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                if raw.strip() == "auto" and default is AUTO:
                    values[(section, key)] = None
                else:
                    values[(section, key)] = _convert(section, key, raw, kind)
            else:
                if default is REQUIRED:
                    raise ValidationError(f"missing required key {section}.{key}")
                values[(section, key)] = None if default is AUTO else default

    grid = TorusGrid(values[("grid", "n")], values[("grid", "l")])
    dt = values[("solver", "dt")]
    if dt is None:
        dt = grid.length / (2.0 * grid.n)
    t_end = values[("solver", "t_end")]
    window_t = values[("diagnostics", "window_t")]
    if window_t is None:
        window_t = t_end / 4.0 if t_end > 0 else 1.0
    forcing = ForcingSpec(
        kind=values[("forcing", "kind")],
        amplitude=values[("forcing", "amplitude")],
        k_f=values[("forcing", "k_f")],
        path=values[("forcing", "file")],
    )
    init = InitSpec(
        kind=values[("solver", "init")],
        amplitude=values[("solver", "init_amplitude")],
        k_peak=values[("solver", "init_k_peak")],
        path=values[("solver", "init_path")],
    )
    base = SolverConfig(
        grid=grid,
        nu=values[("solver", "nu")],
        dt=dt,
        t_end=t_end,
        forcing=forcing,
        init=init,
        delta=values[("solver", "delta")],
        c0=values[("solver", "c0")],
        window_t=window_t,
        snapshot_stride=values[("diagnostics", "snapshot_stride")],
        diag_stride=values[("diagnostics", "diag_stride")],
        transient=values[("diagnostics", "transient")],
        seed=values[("solver", "seed")],
        dealias=values[("solver", "dealias")],
        oversample=values[("diagnostics", "oversample")],
        cb=values[("diagnostics", "cb")],
    ).validate()
    if not parser.has_section("sync"):
        return base
    return SyncConfig(
        base=base,
        perturb_shell=values[("sync", "perturb_shell")],
        perturb_amp=values[("sync", "perturb_amp")],
        enforce=values[("sync", "enforce")],
        enforce_profile=values[("sync", "enforce_profile")],
        measure_stride=values[("sync", "measure_stride")],
    ).validate()


def _fmt_value(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_config(config):
    """Canonical text form; parse(emit(c)) reproduces c and its hash."""
    sync = isinstance(config, SyncConfig)
    base = config.base if sync else config
    out = io.StringIO()

    def section(name, rows):
        out.write(f"[{name}]\n")
        for key, value in rows:
            out.write(f"{key} = {_fmt_value(value)}\n")
        out.write("\n")

    section("grid", [("n", base.grid.n), ("l", base.grid.length)])
    section(
        "solver",
        [
            ("nu", base.nu),
            ("dt", base.dt),
            ("t_end", base.t_end),
            ("delta", base.delta),
            ("c0", base.c0),
            ("seed", base.seed),
            ("dealias", base.dealias),
            ("init", base.init.kind),
            ("init_amplitude", base.init.amplitude),
            ("init_k_peak", base.init.k_peak),
            ("init_path", base.init.path),
        ],
    )
    section(
        "forcing",
        [
            ("kind", base.forcing.kind),
            ("amplitude", base.forcing.amplitude),
            ("k_f", base.forcing.k_f),
            ("file", base.forcing.path),
        ],
    )
    section(
        "diagnostics",
        [
            ("window_t", base.window_t),
            ("snapshot_stride", base.snapshot_stride),
            ("diag_stride", base.diag_stride),
            ("transient", base.transient),
            ("oversample", base.oversample),
            ("cb", base.cb),
        ],
    )
    if sync:
        section(
            "sync",
            [
                ("perturb_shell", config.perturb_shell),
                ("perturb_amp", config.perturb_amp),
                ("enforce", config.enforce),
                ("enforce_profile", config.enforce_profile),
                ("measure_stride", config.measure_stride),
            ],
        )
    return out.getvalue()


def config_hash(config):
    """16-hex-digit FNV-1a over the canonical emitted form."""
    return f"{fnv1a64(emit_config(config).encode()):016x}"
