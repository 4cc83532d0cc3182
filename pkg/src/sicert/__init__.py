"""Certification of projective measurements against state-independent contextuality sets."""

from .geometry import build_graph, ideal_witness_optimum, load_set
from .pipeline import CertificationReport, RunConfig, run_pipeline, sweep

__all__ = [
    "CertificationReport",
    "RunConfig",
    "build_graph",
    "ideal_witness_optimum",
    "load_set",
    "run_pipeline",
    "sweep",
]
__version__ = "0.1.0"
