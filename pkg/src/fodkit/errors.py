"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input data: wrong shapes, non-unit directions, mismatched lengths."""


class ConfigurationError(ValueError):
    """Bad configuration: infeasible geometry, failed basis construction."""


class SolverError(RuntimeError):
    """Optimization failed in a way that cannot be reported as a flag."""
