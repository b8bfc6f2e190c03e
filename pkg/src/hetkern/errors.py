"""Exception hierarchy shared by all hetkern modules."""


class HetkernError(Exception):
    """Base class for toolkit errors."""


class InvalidSpec(HetkernError, ValueError):
    """A field or problem description is inconsistent with its declared bounds."""


class EllipticityViolation(InvalidSpec):
    """Sampled coefficients leave the admissible range [1/mu, mu]."""


class NumericalError(HetkernError, RuntimeError):
    """Base class for failures of a numerical procedure (cli exit code 3)."""


class NonConvergence(NumericalError):
    pass


class SingularMatrix(NumericalError):
    pass


class GammaBelowPrincipal(NumericalError):
    """The Riccati integration left the decaying branch (gamma too close to the threshold)."""


class NonPositiveWronskian(NumericalError):
    pass


class DomainTooSmall(NumericalError):
    pass


class EmptyTrustRegion(NumericalError):
    pass


class EmptyTube(NumericalError):
    pass


class DegenerateSample(NumericalError):
    pass


class CFLAdvisory(UserWarning):
    """Upwind blending of the drift flux is active on a large share of faces."""


class UnresolvedDelta(UserWarning):
    """A check was skipped because the delta datum is not yet resolved in time."""
