"""Exception hierarchy shared by all modules."""


class LabError(Exception):
    """Base class for every error raised by hessianlab."""


class DimensionTooLarge(LabError, ValueError):
    pass


class OutsideDomain(LabError, ValueError):
    pass


class RayStaysInside(LabError):
    pass


class OutsideCone(LabError):
    pass


class HypothesisFailed(LabError):
    pass


class CrossCheckFailed(LabError):
    pass


class MetricDegenerate(LabError, ValueError):
    pass


class NotAdmissible(LabError, ValueError):
    pass


class NoAdmissibleStart(LabError):
    pass


class ContinuityStalled(LabError):
    pass


class NewtonDiverged(LabError):
    pass


class EmptyFamily(LabError, ValueError):
    pass


class DegenerateSpectrum(LabError, ValueError):
    pass


class ConfigInvalid(LabError, ValueError):
    pass
