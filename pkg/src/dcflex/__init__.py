"""Data-centre flexibility: cost-optimal scheduling and flexibility envelopes as a MILP."""

from .config import FacilityConfig, load_facility_config
from .milp import ModelInstance, SolutionStatus, linearize_power_curve, solve
from .workload import WorkloadProfile, build_workload_profile, default_profile

__version__ = "0.1.0"

__all__ = [
    "FacilityConfig",
    "ModelInstance",
    "SolutionStatus",
    "WorkloadProfile",
    "build_workload_profile",
    "default_profile",
    "linearize_power_curve",
    "load_facility_config",
    "solve",
]
