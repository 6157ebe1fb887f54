"""Discrete-event simulation of federated learning time and energy."""

from .kernel import DeadlockError, Kernel, SimulationError
from .platform import (
    EnergyLedger,
    HostProfile,
    LinkProfile,
    Platform,
    ValidationError,
    compute_duration,
    host_energy,
    link_energy,
    parse_platform,
    total_gflops,
    transfer_schedule,
)
from .roles import Workload, aggregation_flops, model_bytes, training_flops
from .scenario import (
    RunResult,
    Scenario,
    Simulation,
    load_platform,
    load_scenario,
    parse_scenario,
    run_simulation,
    write_results,
)

__version__ = "0.1.0"

__all__ = [
    "DeadlockError",
    "EnergyLedger",
    "HostProfile",
    "Kernel",
    "LinkProfile",
    "Platform",
    "RunResult",
    "Scenario",
    "Simulation",
    "SimulationError",
    "ValidationError",
    "Workload",
    "aggregation_flops",
    "compute_duration",
    "host_energy",
    "link_energy",
    "load_platform",
    "load_scenario",
    "model_bytes",
    "parse_platform",
    "parse_scenario",
    "run_simulation",
    "total_gflops",
    "training_flops",
    "transfer_schedule",
    "write_results",
]
