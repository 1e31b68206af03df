"""Numerical laboratory for the fractional heat equation on bounded domains.

Subpackages are imported lazily by the CLI so that thread-count environment
variables can be set before numpy initialises its BLAS pools.
"""

__version__ = "0.1.0"

__all__ = [
    "core",
    "fracop",
    "kernel",
    "bounds",
    "solver",
    "hypersing",
    "regfit",
    "kpz",
    "cli",
]
