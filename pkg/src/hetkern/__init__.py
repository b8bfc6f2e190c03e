"""Heat kernels, correctors and generalized eigenfunctions for 1-D heterogeneous parabolic operators."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DegenerateSample,
    DomainTooSmall,
    EllipticityViolation,
    EmptyTrustRegion,
    EmptyTube,
    GammaBelowPrincipal,
    HetkernError,
    InvalidSpec,
    NonConvergence,
    NonPositiveWronskian,
    NumericalError,
    SingularMatrix,
)
from .fields import CoefficientField, Grid, ProblemSpec, ellipticity_check, make_field  # noqa: E402
