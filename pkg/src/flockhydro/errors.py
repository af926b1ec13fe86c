"""Exception hierarchy shared by every flockhydro module."""


class FlockHydroError(Exception):
    """Base class. ``exit_code`` is what the command line maps the error to."""

    exit_code = 1


class ConfigError(FlockHydroError, ValueError):
    exit_code = 2

    def __init__(self, key, reason):
        self.key = key
        self.reason = reason
        super().__init__(f"{key}: {reason}")


class DomainError(FlockHydroError, ValueError):
    pass


class NonconfiningPotential(FlockHydroError):
    pass


class IntegrandError(FlockHydroError):
    def __init__(self, message, node=None):
        self.node = node
        super().__init__(message if node is None else f"{message} at node {node}")


class NoInteriorMinimum(FlockHydroError):
    pass


class SingularAssembly(FlockHydroError):
    pass


class NoConvergence(FlockHydroError):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"no convergence after {iterations} iterations (residual {residual:.3e})")


class AxisEvaluation(FlockHydroError, ValueError):
    pass


class DegenerateDenominator(FlockHydroError):
    pass


class MomentConstraintViolated(FlockHydroError):
    pass


class ZeroOrientation(FlockHydroError, ValueError):
    pass


class VacuumCell(FlockHydroError):
    def __init__(self, cell, value):
        self.cell = cell
        self.value = value
        super().__init__(f"density {value:.3e} below vacuum threshold in cell {cell}")


class StiffStep(FlockHydroError, ValueError):
    pass


class FormatError(FlockHydroError):
    pass
