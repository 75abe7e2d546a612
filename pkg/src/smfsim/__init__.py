"""Stochastic mean-field trajectory simulator for spin-boson dynamics."""

__version__ = "0.1.0"

from .engine import IntegratorConfig, SpinBosonParams
from .ensemble import (
    EnsembleResult,
    ObservableSeries,
    RunConfig,
    compare_runs,
    read_csv,
    run_ensemble,
    write_csv,
)
from .errors import ConfigurationError, DivergenceError, TruncationError
from .kernels import BathParams, KernelTable, SpectralDensityParams, build_kernel_table

__all__ = [
    "BathParams",
    "ConfigurationError",
    "DivergenceError",
    "EnsembleResult",
    "IntegratorConfig",
    "KernelTable",
    "ObservableSeries",
    "RunConfig",
    "SpectralDensityParams",
    "SpinBosonParams",
    "TruncationError",
    "__version__",
    "compare_runs",
    "read_csv",
    "run_ensemble",
    "write_csv",
]
