"""Exception hierarchy shared across the package."""


class GensyncError(Exception):
    """Base class for all package errors."""


class ModelError(GensyncError):
    pass


class NoRoot(ModelError):
    pass


class NonMonotoneBracket(ModelError):
    pass


class DegenerateDamping(ModelError):
    pass


class RateViolation(GensyncError):
    pass


class InvalidTarget(GensyncError):
    pass


class AnalysisError(GensyncError):
    pass


class GainTooSmall(AnalysisError):
    pass


class EmptyDomain(AnalysisError):
    pass


class SingularStatorAlgebra(ModelError):
    pass


class DegenerateComposite(ModelError):
    pass


class SimulationError(GensyncError):
    pass


class NonFiniteState(SimulationError):
    def __init__(self, t, state, where=""):
        self.t = t
        self.state = state
        msg = f"non-finite state at t={t:.6g}s"
        if where:
            msg += f" ({where})"
        super().__init__(f"{msg}: {state!r}")


class ConfigError(GensyncError):
    """Invalid configuration. ``path`` names the offending field (dotted)."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
