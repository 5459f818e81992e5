"""Fiber orientation distribution estimation with spatially adaptive smoothing."""

import os

# Multithreaded OpenBLAS is counterproductive at this package's matrix sizes
# (140x500-ish GEMMs); pin to one thread unless the caller asked otherwise
# (fodkit --workers N, or the env vars themselves). Must happen before numpy
# loads its BLAS, i.e. before anything imports numpy through this package.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, os.environ.get("FODKIT_WORKERS", "1"))

__version__ = "0.1.0"

from .errors import ConfigurationError, SolverError, ValidationError

__all__ = ["ConfigurationError", "SolverError", "ValidationError", "__version__"]
