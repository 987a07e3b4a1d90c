"""Energy-minimal resource allocation for wireless-powered multiuser
mobile-edge computing over a finite slotted horizon.

Core entry points:

* :func:`wpmec.solve` — joint optimization of transmit covariances, server
  bits, local bits and offloads (dual decomposition + ellipsoid + SDP);
* :mod:`wpmec.baselines` — the local-only / full-offload / myopic /
  separate benchmark schemes;
* :mod:`wpmec.experiments` — reproducible Monte-Carlo sweeps;
* :mod:`wpmec.oracle` — independent brute-force and KKT verification.
"""

from .model import (
    Allocation,
    ChannelRealization,
    DualPoint,
    Instance,
    InfeasibleProblem,
    SystemParams,
    TaskArrivals,
    ValidationReport,
    load_instance,
    save_instance,
    validate_instance,
)
from .energy import (
    ConstraintReport,
    harvested_energy,
    local_energy,
    objective,
    offload_energy,
    residuals,
    server_energy,
)
from .solver import SolveReport, SolverOptions, solve
from .baselines import (
    run_scheme,
    solve_full_offloading,
    solve_local_only,
    solve_myopic,
    solve_separate,
)
from .experiments import ExperimentConfig, SweepResult, emit_outputs, gen_instance, run_sweep

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "ChannelRealization",
    "ConstraintReport",
    "DualPoint",
    "ExperimentConfig",
    "Instance",
    "InfeasibleProblem",
    "SolveReport",
    "SolverOptions",
    "SweepResult",
    "SystemParams",
    "TaskArrivals",
    "ValidationReport",
    "emit_outputs",
    "gen_instance",
    "harvested_energy",
    "load_instance",
    "local_energy",
    "objective",
    "offload_energy",
    "residuals",
    "run_scheme",
    "run_sweep",
    "save_instance",
    "server_energy",
    "solve",
    "solve_full_offloading",
    "solve_local_only",
    "solve_myopic",
    "solve_separate",
    "validate_instance",
]
