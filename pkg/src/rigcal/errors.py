"""Exception hierarchy shared by every stage of the calibration pipeline."""


class CalibrationError(Exception):
    """Base class for all errors raised by rigcal."""


# geometry
class NonPositiveDepth(CalibrationError):
    pass


class DegenerateMatrix(CalibrationError):
    pass


class NearPiRotation(CalibrationError):
    pass


# dataset
class SchemaError(CalibrationError):
    pass


class ValidationError(CalibrationError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DegenerateConfiguration(CalibrationError):
    pass


class BehindCamera(CalibrationError):
    pass


class PoseEstimationError(CalibrationError):
    """Pattern pose estimation failed for one detection; carries its (c, p, t) key."""

    def __init__(self, key, cause):
        self.key = key
        self.cause = cause
        c, p, t = key
        super().__init__(f"camera {c}, pattern {p}, time {t}: {cause}")


# connectivity / initialization
class EmptyInput(CalibrationError):
    pass


class Disconnected(CalibrationError):
    """The interaction graph has more than one connected component."""

    def __init__(self, msg, components=()):
        super().__init__(msg)
        self.components = list(components)


class NoReferenceObservation(CalibrationError):
    pass


class InsufficientMotion(CalibrationError):
    """A pair solve is not well posed.

    When one side of the equations is identity the data only constrain the
    relative transform Z X^-1; it is attached as ``relative`` when available.
    """

    def __init__(self, msg, relative=None):
        super().__init__(msg)
        self.relative = relative


class Stuck(CalibrationError):
    def __init__(self, msg, unknowns=(), residual=()):
        super().__init__(msg)
        self.unknowns = list(unknowns)
        self.residual = list(residual)


# refinement / metrics
class NumericalFailure(CalibrationError):
    def __init__(self, msg, iterate=None):
        super().__init__(msg)
        self.iterate = iterate


class DegenerateRays(CalibrationError):
    pass


class NoTriangulatablePoints(CalibrationError):
    pass


class MultipleCameras(CalibrationError):
    pass


class InfeasibleLayout(CalibrationError):
    pass


class MismatchedIds(CalibrationError):
    pass
