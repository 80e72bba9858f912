"""Quasipotential, non-Gibbsianness and stationary-density prefactors.

For a model with transverse decomposition b = -a grad(U) + l, the
quasipotential relative to the attractor is V(xbar, x) = U(x) - U(xbar),
and the small-noise stationary density in a single-attractor domain (the
ensemble measure) is

    p_ens(x) = C_st(x) / eps^(d/2) * exp(-V(xbar, x) / eps).

The prefactor C_st is obtained by integrating the scalar field
F = div(l) + <A, grad(U)> along the fluctuation trajectory that reaches x:
F measures how far the system is from having a Gibbs stationary density
(F == 0 exactly when exp(-U/eps) is stationary), and

    C_st(x) = C_st(xbar) * exp(-int F),
    C_st(xbar) = sqrt(det Hess_x V(xbar, xbar) / (2 pi)^d).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import (
    DEFAULT_SAMPLE_DT,
    EQUILIBRIUM_FIELD_TOL,
    Path,
    _ball_event,
    _integrate,
)
from .errors import UnreachablePoint
from .models import (
    ModelSpec,
    diffusion_divergence,
    divergence_of_transverse,
    fluctuation_field,
    grad_potential,
)

__all__ = [
    "PrefactorData",
    "quasipotential",
    "hj_residual",
    "f_function",
    "f_integral_along",
    "fluctuation_ray",
    "stationary_prefactor",
    "ensemble_density",
    "gibbs_fpe_residual",
]

REACH_TOL = 1e-6  # reachability threshold at the attractor
RAY_BALL = 1e-9  # integrate deeper than REACH_TOL so F-tails are negligible
RAY_TIME_CAP = 1e3


@dataclass(frozen=True)
class PrefactorData:
    """Stationary-density prefactor at a point.

    Attributes
    ----------
    c_at_attractor : float
        C_st(xbar) = sqrt(det(Hess V) / (2 pi)^d).
    f_integral : float
        Integral of F along the fluctuation path from the attractor to x.
    c_value : float
        C_st(x) = C_st(xbar) * exp(-f_integral).
    attractor_hessian : (d, d) array
        Hess_x V(xbar, xbar), positive definite.
    attractor : (d,) array
        The attractor the fluctuation ray emanates from.
    ray : Path
        The fluctuation path, ordered attractor -> x.
    """

    c_at_attractor: float
    f_integral: float
    c_value: float
    attractor_hessian: np.ndarray
    attractor: np.ndarray
    ray: Path


def quasipotential(model: ModelSpec, x, attractor) -> float:
    """V(xbar, x) = U(x) - U(xbar) for a transverse model."""
    tp = model.require_transverse()
    x = np.asarray(x, dtype=float)
    attractor = np.asarray(attractor, dtype=float)
    return float(tp.potential(x) - tp.potential(attractor))


def hj_residual(model: ModelSpec, x) -> float:
    """Residual <grad U, a grad U> + <b, grad U> of the Hamilton-Jacobi
    equation; zero (to roundoff) for any valid transverse model."""
    model.require_transverse()
    x = np.asarray(x, dtype=float)
    g = grad_potential(model, x)
    a = np.asarray(model.diffusion(x), dtype=float)
    b = np.asarray(model.drift(x), dtype=float)
    ag = np.einsum("...ij,...j->...i", a, g)
    out = np.einsum("...i,...i->...", g, ag) + np.einsum("...i,...i->...", b, g)
    return float(out) if out.ndim == 0 else out


def f_function(model: ModelSpec, x) -> float:
    """Non-Gibbsianness F(x) = div l(x) + <A(x), grad U(x)>, where
    A_i = sum_j d_j a_ij.  Identically zero iff exp(-U/eps) is stationary."""
    model.require_transverse()
    x = np.asarray(x, dtype=float)
    div_l = divergence_of_transverse(model, x)
    A = diffusion_divergence(model, x)
    if np.any(A):
        return float(div_l + A @ grad_potential(model, x))
    return float(div_l)


def f_integral_along(model: ModelSpec, path: Path) -> float:
    """Trapezoidal quadrature of F along a path (in time).

    Intended for paths whose endpoints are equilibria of the fluctuation
    flow (instantons, fluctuation rays): F vanishes at such endpoints, so
    the truncated tails contribute nothing at working precision.
    """
    vals = np.array([f_function(model, p) for p in path.points])
    return float(np.trapezoid(vals, path.times))


def fluctuation_ray(model: ModelSpec, x, attractor=None,
                    time_cap: float = RAY_TIME_CAP,
                    sample_dt: float = DEFAULT_SAMPLE_DT) -> tuple[Path, np.ndarray]:
    """Fluctuation trajectory terminated at x, found by reverse integration.

    Integrates xdot = -(a grad U + l) from x until within RAY_BALL of the
    attractor (discovering the attractor if none is given), then returns
    the ray re-ordered attractor -> x together with the attractor.
    Raises UnreachablePoint if the reverse flow does not come within
    REACH_TOL of the attractor before the time cap: such points (e.g. in a
    classically forbidden wedge, or in another basin) carry no fluctuation
    trajectory from this attractor.
    """
    model.require_transverse()
    x = np.asarray(x, dtype=float)
    field = lambda y: -fluctuation_field(model, y)  # noqa: E731

    extra = []
    if attractor is not None:
        attractor = np.asarray(attractor, dtype=float)
        if np.linalg.norm(x - attractor) <= RAY_BALL:
            t = np.array([0.0, 1.0])
            return Path(t, np.vstack([attractor, x]), "fluctuation"), attractor
        extra.append(_ball_event(attractor, RAY_BALL))
    path_rev, _ = _integrate(model, field, x, time_cap, 1e-10, sample_dt,
                             extra_events=extra, kind="generic")
    end = path_rev.points[-1]
    if attractor is None:
        if np.linalg.norm(fluctuation_field(model, end)) > 10 * EQUILIBRIUM_FIELD_TOL:
            raise UnreachablePoint(
                f"reverse fluctuation flow from {x} did not reach an "
                f"equilibrium within time {time_cap}")
        attractor = end
    gap = float(np.linalg.norm(end - attractor))
    if gap > REACH_TOL:
        raise UnreachablePoint(
            f"reverse fluctuation flow from {x} stalled at {end} "
            f"(distance {gap:.2e} from attractor {attractor})")
    ray = path_rev.reversed("fluctuation")
    return ray, attractor


def stationary_prefactor(model: ModelSpec, x, attractor=None) -> PrefactorData:
    """Stationary-density prefactor C_st(x) via the ray integral of F.

    The fluctuation path terminated at x is computed by reverse
    integration; C_st at the attractor comes from the Gaussian
    normalization sqrt(det(Hess V)/(2 pi)^d) with Hess V obtained from the
    Lyapunov solve at the attractor.
    """
    from .saddle import quasipotential_hessian  # local import, avoids cycle

    ray, xbar = fluctuation_ray(model, x, attractor)
    hess = quasipotential_hessian(model, xbar, "attractor")
    d = model.dim
    c_bar = float(np.sqrt(np.linalg.det(hess) / (2.0 * np.pi) ** d))
    f_int = f_integral_along(model, ray)
    return PrefactorData(
        c_at_attractor=c_bar,
        f_integral=f_int,
        c_value=c_bar * float(np.exp(-f_int)),
        attractor_hessian=hess,
        attractor=xbar,
        ray=ray,
    )


def ensemble_density(model: ModelSpec, x, epsilon: float, attractor=None,
                     prefactor: PrefactorData | None = None) -> float:
    """WKB stationary density C_st(x)/eps^(d/2) * exp(-V(xbar,x)/eps) of a
    particle diffusing in a single-attractor domain."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if prefactor is None:
        prefactor = stationary_prefactor(model, x, attractor)
    v = quasipotential(model, x, prefactor.attractor)
    d = model.dim
    return float(prefactor.c_value / epsilon ** (d / 2.0) * np.exp(-v / epsilon))


def _fpe_terms(model: ModelSpec, x, epsilon: float, step: float = 1e-4):
    """Diffusion and drift terms of the stationary Fokker-Planck operator
    applied to p = exp(-U/eps), via nested central differences."""
    tp = model.require_transverse()
    x = np.asarray(x, dtype=float)
    d = model.dim

    def p(y):
        return np.exp(-np.asarray(tp.potential(y), dtype=float) / epsilon)

    def g(y):  # a_ij * p, at a single point
        return np.asarray(model.diffusion(y), dtype=float) * p(y)

    def h(y):  # b_i * p
        return np.asarray(model.drift(y), dtype=float) * p(y)

    g0 = g(x)
    diff_term = 0.0
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = step
        diff_term += (g(x + ei)[i, i] - 2.0 * g0[i, i] + g(x - ei)[i, i]) / step**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = step
            cross = (g(x + ei + ej)[i, j] - g(x + ei - ej)[i, j]
                     - g(x - ei + ej)[i, j] + g(x - ei - ej)[i, j]) / (4.0 * step**2)
            diff_term += 2.0 * cross
    drift_term = 0.0
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = step
        drift_term += (h(x + ei)[i] - h(x - ei)[i]) / (2.0 * step)
    return float(epsilon * diff_term), float(drift_term), float(p(x))


def gibbs_fpe_residual(model: ModelSpec, x, epsilon: float) -> float:
    """Residual of the stationary Fokker-Planck equation at x for the
    unnormalized Gibbs ansatz p = exp(-U/eps):

        eps * sum_ij d_ij(a_ij p) - sum_i d_i(b_i p).

    Vanishes (to finite-difference accuracy) exactly when the Gibbs
    density is stationary, i.e. when F == 0; equals -p*F + O(eps*p'')
    otherwise, certifying F as the non-Gibbsianness of the model.
    """
    diff_term, drift_term, _ = _fpe_terms(model, x, epsilon)
    return diff_term - drift_term


def gibbs_fpe_scale(model: ModelSpec, x, epsilon: float) -> float:
    """Magnitude scale |eps*diffusion term| + |drift term| against which
    the Fokker-Planck residual should be compared."""
    diff_term, drift_term, p = _fpe_terms(model, x, epsilon)
    return abs(diff_term) + abs(drift_term) + p
