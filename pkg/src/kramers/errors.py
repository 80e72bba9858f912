"""Exception hierarchy for the kramers package."""


class KramersError(Exception):
    """Base class for all errors raised by this package."""


class MissingTransverse(KramersError):
    """An operation requiring a transverse decomposition (U, l) was called
    on a model that does not provide one."""


class NonFiniteValue(KramersError):
    """A field evaluation returned NaN or infinity."""


class ModelNotFound(KramersError):
    """Requested model name is not in the registry."""


class BlowUp(KramersError):
    """A trajectory left the model's domain box."""


class SingularDiffusion(KramersError):
    """The diffusion matrix a(x) is numerically singular along a path."""


class WrongBasin(KramersError):
    """Reverse integration converged to an equilibrium other than the
    requested attractor."""


class NoConvergence(KramersError):
    """An iteration or integration did not converge within its budget."""


class UnreachablePoint(KramersError):
    """No fluctuation trajectory connects the attractor to the requested
    point (e.g. the point lies in a classically forbidden wedge)."""


class NotASaddle(KramersError):
    """A zero of the drift does not have exactly one unstable direction."""


class ComplexUnstableEigenvalue(KramersError):
    """The unstable eigenvalue of the drift Jacobian at the saddle is not
    real."""


class DegenerateHessian(KramersError):
    """The quasipotential Hessian is singular."""


class ResonantSpectrum(KramersError):
    """The Lyapunov equation for the quasipotential Hessian is singular
    (eigenvalue pair with lambda_i + lambda_j = 0) and no consistent
    solution could be selected."""


class WrongSignature(KramersError):
    """A computed Hessian does not have the expected inertia."""


class HessianCrossCheckError(KramersError):
    """Lyapunov-derived Hessian disagrees with the direct Hessian of the
    potential beyond tolerance."""


class CharacteristicPoint(KramersError):
    """A boundary point violates the noncharacteristic/outflow conditions
    required by the boundary-layer analysis."""


class UnreachableBoundary(KramersError):
    """No sample point of the domain boundary is reachable by fluctuation
    paths from the attractor."""


class NonSmoothQuasipotential(KramersError):
    """Saddle identities or instanton construction failed beyond tolerance;
    the quasipotential is presumed non-smooth near the instanton."""


class AllCensored(KramersError):
    """Every Monte Carlo trajectory hit the step budget without reaching
    the target."""


class InsufficientRegime(KramersError):
    """A Monte Carlo run is outside the metastable regime required for an
    Arrhenius fit."""
