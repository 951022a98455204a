"""Exception hierarchy shared by the estimation, control and simulation layers."""


class ArmavMpcError(Exception):
    """Base class for every error raised by this package."""


class InsufficientData(ArmavMpcError):
    pass


class SingularRegressor(ArmavMpcError):
    pass


class SingularSystem(ArmavMpcError):
    pass


class NonStationary(ArmavMpcError):
    pass


class BuffersNotWarm(ArmavMpcError):
    pass


class ZeroVariance(ArmavMpcError):
    pass


class MaxOrderReached(ArmavMpcError):
    pass


class NonMonotonicTick(ArmavMpcError):
    pass


class DimensionMismatch(ArmavMpcError):
    pass


class SingularInertia(ArmavMpcError):
    pass


class Infeasible(ArmavMpcError):
    pass


class SolverInfeasible(ArmavMpcError):
    """Raised by the controller when the QP has no feasible point."""


class ScenarioDiverged(ArmavMpcError):
    """The simulated robot fell; carries the partial result."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class EmptyWindow(ArmavMpcError):
    pass
