"""Exception types raised across the package."""


class NozzleFlowError(Exception):
    """Base class for every error raised by nozzleflow."""


class NegativeInput(NozzleFlowError, ValueError):
    pass


class OutOfRange(NozzleFlowError, ValueError):
    pass


class Supersonic(NozzleFlowError, ValueError):
    pass


class EllipticityViolation(NozzleFlowError):
    pass


class Inadmissible(NozzleFlowError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class PinchedDomain(NozzleFlowError):
    pass


class DegenerateJacobian(NozzleFlowError):
    def __init__(self, message, elements=()):
        super().__init__(message)
        self.elements = list(elements)


class StationOutOfRange(NozzleFlowError, ValueError):
    pass


class NoConvergence(NozzleFlowError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class LinearSolveFailure(NozzleFlowError):
    pass


class Breakdown(LinearSolveFailure):
    pass


class NoiseFloor(NozzleFlowError):
    pass


class InconsistentFlux(NozzleFlowError):
    pass


class IncompatibleMeshes(NozzleFlowError):
    pass


class ConfigError(NozzleFlowError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
