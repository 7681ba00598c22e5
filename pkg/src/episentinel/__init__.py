"""episentinel: synthetic epidemics, school absenteeism, and alarm evaluation.

The package generates a synthetic school-aged population, runs stochastic
epidemics over it with imperfect case reporting, compiles daily absenteeism
surveillance datasets, fits seasonal mixed-effects lag-logistic detection
models, and scores alarm quality over a (lag x threshold) grid.
"""

from .errors import (
    ConfigurationError,
    EvaluationError,
    InvalidParameterError,
    SentinelError,
    SimulationError,
)

__all__ = [
    "ConfigurationError",
    "EvaluationError",
    "InvalidParameterError",
    "SentinelError",
    "SimulationError",
    "__version__",
]

__version__ = "0.1.0"
