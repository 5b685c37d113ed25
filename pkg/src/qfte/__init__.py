"""QFT-based parallel entanglement: circuit simulator, protocols and fidelity metrics."""
from .circuit import Circuit, CircuitError
from .engine import (
    ExactResult,
    Histogram,
    NoiseModel,
    defer_measurements,
    run_exact,
    run_exact_result,
    run_shots,
    simulate_pure,
)
from .fidelity import FidelityReport, ProbabilityPair, diag_of, f_ap, f_rp, f_tp, uhlmann
from .source import SetLayout, build_source, verify_disjoint

__version__ = "0.1.0"

__all__ = [
    "Circuit", "CircuitError", "ExactResult", "FidelityReport", "Histogram", "NoiseModel",
    "ProbabilityPair", "SetLayout", "build_source", "defer_measurements", "diag_of", "f_ap",
    "f_rp", "f_tp", "run_exact", "run_exact_result", "run_shots", "simulate_pure", "uhlmann",
    "verify_disjoint", "__version__",
]
