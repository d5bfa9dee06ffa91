"""Exception types raised across the workbench."""

from __future__ import annotations


class DimensionError(ValueError):
    """Array shapes disagree; ``axis`` names the offending dimension."""

    def __init__(self, axis: str, expected, got):
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"dimension mismatch on {axis}: expected {expected}, got {got}")


class DivergenceError(ArithmeticError):
    """A fixed-point iteration produced non-finite values."""


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class InstanceTooLargeError(ValueError):
    def __init__(self, count: int, limit: int):
        self.count = count
        self.limit = limit
        super().__init__(f"exhaustive enumeration needs {count} policies (limit {limit})")


class DegenerateBaselineError(ValueError):
    """n-score baselines coincide."""


class StaleTapeError(RuntimeError):
    """A tape was used after the network it was recorded on changed."""


class NonFiniteError(ArithmeticError):
    """A loss, gradient or parameter block became non-finite."""


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class EnvContractError(RuntimeError):
    """An environment was driven outside its contract (e.g. stepped after done)."""
