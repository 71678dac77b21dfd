"""Multi-antenna NOMA downlink with limited feedback: bounds, allocation and simulation."""

__version__ = "0.1.0"

from .errors import (ConfigError, DomainError, InfeasibleError, LossOfPrecisionWarning,  # noqa: E402
                     NomaError, NumericalDegeneracyError)
from .system import (ClusteredScenario, SystemConfig, cluster_config, cluster_users,  # noqa: E402
                     exchange_clustering, load_config, parse_config)
from .alloc import BitAllocation, PowerAllocation, joint_optimize  # noqa: E402
from .montecarlo import SimResult, simulate, simulate_alt_csi_model  # noqa: E402

__all__ = [
    "ConfigError", "DomainError", "InfeasibleError", "LossOfPrecisionWarning", "NomaError",
    "NumericalDegeneracyError", "ClusteredScenario", "SystemConfig", "cluster_config", "cluster_users",
    "exchange_clustering", "load_config", "parse_config", "BitAllocation", "PowerAllocation",
    "joint_optimize", "SimResult", "simulate", "simulate_alt_csi_model",
]
