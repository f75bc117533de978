"""Exception hierarchy shared by all subpackages."""


class VPError(Exception):
    """Base class for solver errors."""


class InvariantViolation(VPError):
    """A runtime check on a conserved or bounded quantity failed."""


class SolverError(VPError):
    """A numerical solve could not complete."""


# geometry
class OutsideDomain(VPError):
    pass


class AmbiguousProjection(VPError):
    pass


class DegenerateFrame(VPError):
    pass


class FrameInvalid(VPError):
    pass


# field
class SolverDivergence(SolverError):
    pass


class GridTooCoarse(SolverError):
    pass


class NonpositiveMargin(InvariantViolation):
    pass


class LadderExitsGrid(VPError):
    pass


class FieldEvalFailure(SolverError):
    pass


# dynamics
class StuckAtBoundary(SolverError):
    pass


class BandExit(VPError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# kinetic
class EmptySupport(VPError):
    pass


class ParticleOutside(InvariantViolation):
    pass


class NoConvergence(VPError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class BlowupSuspected(InvariantViolation):
    pass


class ConfigError(VPError):
    pass
