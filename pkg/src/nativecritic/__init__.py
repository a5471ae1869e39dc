"""Online critic value-function approximation in kernel native spaces."""

__version__ = "0.1.0"

from .control_problem import (ControlAffineSystem, CostSpec, Policy, Problem, benchmark_problem,
                              get_problem, hamiltonian_residual)
from .critic import (CriticState, DivergenceError, Excitation, LearningConfig, TrajectoryLog,
                     pe_stats, simulate, step)
from .kernels import Family, KernelError, KernelSpec, SingularGradientError
from .native_space import CenterSet, HNElement, grammian, power_function, project
from .rates import RateReport, fit_loglog_slope, linf_error, rate_sweep, theoretical_exponent

__all__ = [
    "ControlAffineSystem", "CostSpec", "Policy", "Problem", "benchmark_problem", "get_problem",
    "hamiltonian_residual", "CriticState", "DivergenceError", "Excitation", "LearningConfig",
    "TrajectoryLog", "pe_stats", "simulate", "step", "Family", "KernelError", "KernelSpec",
    "SingularGradientError", "CenterSet", "HNElement", "grammian", "power_function", "project",
    "RateReport", "fit_loglog_slope", "linf_error", "rate_sweep", "theoretical_exponent",
]
