"""Query-only geometric perturbation attacks on object detectors, optimized by PSO."""

__version__ = "0.1.0"
