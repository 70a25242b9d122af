"""Exception hierarchy shared by all mcflab modules."""


class MCFLabError(Exception):
    """Base class for every error raised by the library."""


class InputError(MCFLabError):
    """Bad user input: files, configs, parameters."""


class NumericalError(MCFLabError):
    """A numerical procedure failed or left its domain of validity."""


# geometry
class NonManifoldMesh(InputError):
    pass


class DegenerateTriangle(NumericalError):
    pass


class NotNormalField(InputError):
    pass


class DegenerateResult(NumericalError):
    pass


class MeshFormatError(InputError):
    pass


# ambient
class OutsideTube(NumericalError):
    pass


class NotOnSurface(InputError):
    pass


class BasisNotTangent(InputError):
    pass


class EmptyRegion(InputError):
    pass


class GraphDoesNotExist(NumericalError):
    pass


# flow
class LinearSolveFailure(NumericalError):
    pass


class ProjectionFailure(NumericalError):
    pass


class QualityCollapse(NumericalError):
    pass


class EmptyWindow(InputError):
    pass


class BoundarySnapshot(InputError):
    pass


# functionals
class TimeNonPositive(InputError):
    pass


class TimeOrder(InputError):
    pass


class OptimizerDiverged(NumericalError):
    pass


# harness
class WrongAmbient(InputError):
    pass


class NotExtinct(InputError):
    pass


class ConnectivityMismatch(InputError):
    pass


class PerturbationRejected(MCFLabError):
    pass


# cli
class ParseError(InputError):
    pass


class ValidationError(InputError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
