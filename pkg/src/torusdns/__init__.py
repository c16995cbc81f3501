"""Pseudo-spectral 3D Navier-Stokes on the torus with Littlewood-Paley
determining-wavenumber diagnostics and a synchronization harness."""

__version__ = "0.1.0"

from .spectral import (  # noqa: F401
    PhysicalField,
    SpectralVelocity,
    TorusGrid,
    leray_project,
    nonlinear_term,
    read_snapshot,
    to_physical,
    to_spectral,
    write_snapshot,
)
from .lp import (  # noqa: F401
    CutoffProfile,
    LittlewoodPaley,
    LPDecomposition,
    calibrate_bernstein,
    get_lp,
)
from .solver import (  # noqa: F401
    ForcingSpec,
    InitSpec,
    SolverConfig,
    TrajectoryState,
    energy_budget,
    run,
    step,
)
from .diagnostics import (  # noqa: F401
    DiagnosticsRecord,
    EnsembleStats,
    WindowStats,
    determining_wavenumber,
    dissipation_wavenumber,
    grashof,
    intermittency_dimension,
    oracle_determining_wavenumber,
)
from .sync import SyncConfig, SyncRecord, decay_fit, run_sync, sync_step  # noqa: F401
