"""Ultrasonic screening of implant fixation on a simulated 2D thigh phantom."""

from .phantom import (
    DEFAULT_MATERIALS,
    Material,
    PhantomSpec,
    RasterPhantom,
    apply_defect,
    build_phantom,
    derive_pwave_speed,
    sensor_layout,
)
from .scenario import (
    DefectSpec,
    Scenario,
    SweepPlan,
    case_count,
    default_scenario_grid,
    default_sweep_plan,
)
from .solver import (
    FieldSolution,
    HelmholtzSystem,
    SolverError,
    SolverSettings,
    TransferMatrix,
    assemble_system,
    sample_channels,
    solve_field,
    transfer_matrix,
)

__version__ = "0.1.0"
