"""Command-level DRAM simulator with a read-disturb fault model and mitigations."""

from .analysis import (
    WindowModel,
    max_hammers_per_window,
    min_safe_multiplier,
    para_survival,
    validate_para_model,
)
from .attacks import AttackKind, AttackSpec, Owner, PageMap, generate_trace, isolation_breach_report
from .controller import (
    MitigationPolicy,
    Request,
    SimReport,
    Simulator,
    TimingParams,
    para_on_close,
    periodic_refresh_schedule,
    run_trace,
)
from .disturbance import (
    CoupledSide,
    DisturbanceEngine,
    DisturbanceProfile,
    FlipDirection,
    FlipEvent,
    HammerLedger,
    PatternGate,
    VulnerableCell,
    generate_profile,
)
from .dram import CellArray, Geometry, RemapTable, RowAddress, map_address, physical_neighbors

__version__ = "0.1.0"
