"""Diffusion model definitions.

A model is the data of a drift field ``b``, a noise matrix ``sigma`` (with
diffusion matrix ``a = sigma sigma^T``) and, optionally, a transverse
decomposition ``b = -a grad(U) + l`` with ``<grad(U), l> = 0``.  The
potential ``U`` of such a decomposition is the quasipotential of the
zero-noise dynamics, which is what makes these models analytically
tractable test beds.

All field evaluators are vectorized: they accept arrays of shape
``(..., d)`` and return arrays with matching leading axes.  Derivatives are
taken analytically when the model provides callbacks and by central
differences otherwise.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import MissingTransverse, ModelNotFound, NonFiniteValue

__all__ = [
    "TransversePair",
    "ModelSpec",
    "KnownFacts",
    "RegisteredModel",
    "jacobian",
    "check_transverse",
    "fluctuation_field",
    "grad_potential",
    "potential_hessian",
    "divergence_of_transverse",
    "diffusion_divergence",
    "builtin_models",
    "get_model",
    "parse_model_string",
    "resolve_model",
]

# Central-difference steps: first derivatives use a componentwise step
# max(FD_STEP, FD_STEP*|x_i|); nested second derivatives use FD_STEP2.
FD_STEP = 1e-6
FD_STEP2 = 1e-4


@dataclass(frozen=True)
class TransversePair:
    """Transverse decomposition of a drift: potential U and field l with
    b = -a grad(U) + l and <grad(U), l> = 0 pointwise.

    Parameters
    ----------
    potential : callable
        U(x), shape (..., d) -> (...).
    field : callable
        l(x), shape (..., d) -> (..., d).
    grad_potential : callable, optional
        Analytic grad U; central differences of `potential` otherwise.
    potential_hessian : callable, optional
        Analytic Hess U at a single point, shape (d,) -> (d, d).
    field_jacobian : callable, optional
        Analytic Jacobian of l at a single point, shape (d,) -> (d, d).
    """

    potential: Callable[[np.ndarray], np.ndarray]
    field: Callable[[np.ndarray], np.ndarray]
    grad_potential: Optional[Callable[[np.ndarray], np.ndarray]] = None
    potential_hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    field_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class ModelSpec:
    """Immutable specification of a diffusion process dX = b dt + sqrt(2 eps) sigma dW.

    The diffusion matrix a(x) = sigma(x) sigma(x)^T must be symmetric
    positive definite everywhere it is evaluated.  Instances are pure data
    plus pure functions and are safe to share between parallel workers.
    """

    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    transverse: Optional[TransversePair] = None
    derivative_mode: str = "analytic"  # "analytic" or "fd"
    fd_step: float = FD_STEP
    drift_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    diffusion_is_constant: bool = True
    noise_dim: Optional[int] = None
    domain_lo: Optional[np.ndarray] = None
    domain_hi: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.derivative_mode not in ("analytic", "fd"):
            raise ValueError(f"unknown derivative_mode {self.derivative_mode!r}")
        if self.domain_lo is None:
            object.__setattr__(self, "domain_lo", np.full(self.dim, -3.0))
        if self.domain_hi is None:
            object.__setattr__(self, "domain_hi", np.full(self.dim, 3.0))
        if self.noise_dim is None:
            object.__setattr__(self, "noise_dim", self.dim)

    @property
    def has_transverse(self) -> bool:
        return self.transverse is not None

    def require_transverse(self) -> TransversePair:
        if self.transverse is None:
            raise MissingTransverse(
                "operation requires a transverse decomposition (U, l)")
        return self.transverse

    def with_fd_derivatives(self) -> "ModelSpec":
        """Copy of this spec that ignores analytic derivative callbacks."""
        return replace(self, derivative_mode="fd")

    def in_domain(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.domain_lo) & (x <= self.domain_hi), axis=-1)


@dataclass(frozen=True)
class KnownFacts:
    """Analytically known landmarks of a registered model, used as test
    oracles and as CLI defaults."""

    attractors: Optional[tuple] = None  # (x_bar_1, x_bar_2) arrays
    saddle: Optional[np.ndarray] = None
    barrier: Optional[float] = None  # V(x_bar_1, x_star)


@dataclass(frozen=True)
class RegisteredModel:
    """Named, parameterized model family with a spec factory."""

    name: str
    parameters: dict
    spec_factory: Callable[[dict], ModelSpec]
    known_facts_factory: Callable[[dict], KnownFacts]
    description: str = ""

    def build(self, **overrides) -> ModelSpec:
        params = dict(self.parameters)
        unknown = set(overrides) - set(params)
        if unknown:
            raise ModelNotFound(
                f"model {self.name!r} has no parameter(s) {sorted(unknown)}")
        params.update(overrides)
        return self.spec_factory(params)

    def known_facts(self, **overrides) -> KnownFacts:
        params = dict(self.parameters)
        params.update(overrides)
        return self.known_facts_factory(params)


# ---------------------------------------------------------------------------
# Finite differences

def _fd_steps(x: np.ndarray, base: float) -> np.ndarray:
    return np.maximum(base, base * np.abs(x))


def fd_gradient(f: Callable, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Componentwise central-difference gradient of a scalar field.

    Accepts batched points of shape (..., d); returns (..., d).
    """
    x = np.asarray(x, dtype=float)
    h = _fd_steps(x, step)
    g = np.empty_like(x)
    for i in range(x.shape[-1]):
        xp = x.copy()
        xm = x.copy()
        xp[..., i] += h[..., i]
        xm[..., i] -= h[..., i]
        g[..., i] = (f(xp) - f(xm)) / (2.0 * h[..., i])
    return g


def fd_jacobian(f: Callable, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian (Df)_ij = d f_i / d x_j at a single point."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    h = _fd_steps(x, step)
    cols = []
    for j in range(d):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h[j]
        xm[j] -= h[j]
        cols.append((f(xp) - f(xm)) / (2.0 * h[j]))
    return np.stack(cols, axis=-1)


def fd_hessian(f: Callable, x: np.ndarray, step: float = FD_STEP2) -> np.ndarray:
    """Nested central-difference Hessian of a scalar field at a single point."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    hess = np.empty((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = step
        hess[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / step**2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = step
            hess[i, j] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * step**2)
            hess[j, i] = hess[i, j]
    return hess


# ---------------------------------------------------------------------------
# Derivative operations

def jacobian(model: ModelSpec, field_name: str, x: np.ndarray) -> np.ndarray:
    """Jacobian matrix (Df)_ij = d f_i / d x_j of a model field at x.

    Parameters
    ----------
    model : ModelSpec
    field_name : {"drift", "fluctuation"}
        "drift" differentiates b; "fluctuation" differentiates the field
        a grad(U) + l driving the most probable escape paths (requires a
        transverse pair).
    x : array of shape (d,)

    Returns
    -------
    (d, d) array.  Analytic if the model provides callbacks and its
    derivative_mode is "analytic", central differences otherwise.
    """
    x = np.asarray(x, dtype=float)
    if field_name == "drift":
        f = model.drift
        analytic = model.drift_jacobian
    elif field_name == "fluctuation":
        model.require_transverse()
        f = lambda y: fluctuation_field(model, y)  # noqa: E731
        analytic = _fluctuation_jacobian_analytic(model)
    else:
        raise ValueError(f"unknown field {field_name!r}")
    fx = np.asarray(f(x), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise NonFiniteValue(f"{field_name} field is not finite at x={x}")
    if model.derivative_mode == "analytic" and analytic is not None:
        out = np.asarray(analytic(x), dtype=float)
    else:
        out = fd_jacobian(f, x, model.fd_step)
    if not np.all(np.isfinite(out)):
        raise NonFiniteValue(f"Jacobian of {field_name} is not finite at x={x}")
    return out


def _fluctuation_jacobian_analytic(model: ModelSpec):
    tp = model.transverse
    if tp is None or tp.potential_hessian is None or tp.field_jacobian is None:
        return None
    if not model.diffusion_is_constant:
        return None

    def jac(x):
        a = model.diffusion(x)
        return a @ tp.potential_hessian(x) + tp.field_jacobian(x)

    return jac


def grad_potential(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """grad U(x) for a transverse model, batched over leading axes."""
    tp = model.require_transverse()
    if model.derivative_mode == "analytic" and tp.grad_potential is not None:
        return np.asarray(tp.grad_potential(np.asarray(x, dtype=float)), dtype=float)
    return fd_gradient(tp.potential, x, model.fd_step)


def potential_hessian(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Hess U(x) for a transverse model, at a single point."""
    tp = model.require_transverse()
    if model.derivative_mode == "analytic" and tp.potential_hessian is not None:
        return np.asarray(tp.potential_hessian(np.asarray(x, dtype=float)), dtype=float)
    return fd_hessian(tp.potential, x)


def fluctuation_field(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """The field a grad(U) + l, batched.  Its forward flow climbs the
    potential; its trajectories are the most probable fluctuation paths."""
    tp = model.require_transverse()
    x = np.asarray(x, dtype=float)
    g = grad_potential(model, x)
    a = np.asarray(model.diffusion(x), dtype=float)
    ag = np.einsum("...ij,...j->...i", a, g)
    return ag + np.asarray(tp.field(x), dtype=float)


def divergence_of_transverse(model: ModelSpec, x: np.ndarray) -> float:
    """div l(x) at a single point."""
    tp = model.require_transverse()
    x = np.asarray(x, dtype=float)
    if model.derivative_mode == "analytic" and tp.field_jacobian is not None:
        return float(np.trace(tp.field_jacobian(x)))
    return float(np.trace(fd_jacobian(tp.field, x, model.fd_step)))


def diffusion_divergence(model: ModelSpec, x: np.ndarray) -> np.ndarray:
    """The vector A with A_i = sum_j d_j a_ij, at a single point."""
    if model.diffusion_is_constant:
        return np.zeros(model.dim)
    x = np.asarray(x, dtype=float)
    d = model.dim
    h = _fd_steps(x, model.fd_step)
    A = np.zeros(d)
    for j in range(d):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h[j]
        xm[j] -= h[j]
        da = (model.diffusion(xp) - model.diffusion(xm)) / (2.0 * h[j])
        A += da[:, j]
    return A


def check_transverse(model: ModelSpec, points: np.ndarray) -> dict:
    """Verify the transverse decomposition on a sample of points.

    Returns a report dict with the max residuals of b + a grad(U) - l = 0
    and <grad(U), l> = 0 over the sample; ``passed`` is true iff both are
    below 1e-9.
    """
    tp = model.require_transverse()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    b = np.asarray(model.drift(pts), dtype=float)
    g = grad_potential(model, pts)
    a = np.asarray(model.diffusion(pts), dtype=float)
    ell = np.asarray(tp.field(pts), dtype=float)
    ag = np.einsum("...ij,...j->...i", a, g)
    decomp = np.max(np.linalg.norm(b + ag - ell, axis=-1))
    ortho = np.max(np.abs(np.einsum("...i,...i->...", g, ell)))
    tol = 1e-9
    return {
        "decomposition_residual": float(decomp),
        "orthogonality_residual": float(ortho),
        "tolerance": tol,
        "passed": bool(decomp <= tol and ortho <= tol),
    }


# ---------------------------------------------------------------------------
# Built-in models

_J = np.array([[0.0, -1.0], [1.0, 0.0]])


def _constant_matrix_field(M: np.ndarray):
    M = np.asarray(M, dtype=float)

    def func(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(M, x.shape[:-1] + M.shape).copy()

    return func


def _dw1d_spec(params: dict) -> ModelSpec:
    def U(x):
        q = x[..., 0]
        return 0.25 * q**4 - 0.5 * q**2

    def gradU(x):
        g = np.empty_like(np.asarray(x, dtype=float))
        g[..., 0] = x[..., 0] ** 3 - x[..., 0]
        return g

    def ell(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def drift(x):
        return -gradU(x)

    def drift_jac(x):
        return np.array([[1.0 - 3.0 * x[0] ** 2]])

    def hessU(x):
        return np.array([[3.0 * x[0] ** 2 - 1.0]])

    return ModelSpec(
        dim=1,
        drift=drift,
        sigma=_constant_matrix_field(np.eye(1)),
        diffusion=_constant_matrix_field(np.eye(1)),
        transverse=TransversePair(
            potential=U,
            field=ell,
            grad_potential=gradU,
            potential_hessian=hessU,
            field_jacobian=lambda x: np.zeros((1, 1)),
        ),
        drift_jacobian=drift_jac,
    )


def _dw2d_family_spec(params: dict) -> ModelSpec:
    """Quartic double well in x, harmonic in y, with a transverse field
    factor(x) * J grad(U).  factor = 0 gives the gradient model, a constant
    factor a divergence-free rotation, factor = 1 + kappa*x a shear with
    nonzero divergence (div l = -kappa * y)."""
    c0 = float(params.get("c0", 0.0))
    kappa = float(params.get("kappa", 0.0))

    def U(x):
        q, p = x[..., 0], x[..., 1]
        return 0.25 * q**4 - 0.5 * q**2 + 0.5 * p**2

    def gradU(x):
        g = np.empty_like(np.asarray(x, dtype=float))
        g[..., 0] = x[..., 0] ** 3 - x[..., 0]
        g[..., 1] = x[..., 1]
        return g

    def factor(x):
        return c0 + kappa * x[..., 0]

    def ell(x):
        g = gradU(x)
        out = np.empty_like(g)
        f = factor(x)
        out[..., 0] = -f * g[..., 1]
        out[..., 1] = f * g[..., 0]
        return out

    def drift(x):
        return -gradU(x) + ell(x)

    def hessU(x):
        return np.array([[3.0 * x[0] ** 2 - 1.0, 0.0], [0.0, 1.0]])

    def ell_jac(x):
        g = gradU(np.asarray(x, dtype=float))
        f = float(factor(x))
        jg = _J @ hessU(x)
        out = f * jg
        out[:, 0] += kappa * (_J @ g)
        return out

    def drift_jac(x):
        return -hessU(x) + ell_jac(x)

    return ModelSpec(
        dim=2,
        drift=drift,
        sigma=_constant_matrix_field(np.eye(2)),
        diffusion=_constant_matrix_field(np.eye(2)),
        transverse=TransversePair(
            potential=U,
            field=ell,
            grad_potential=gradU,
            potential_hessian=hessU,
            field_jacobian=ell_jac,
        ),
        drift_jacobian=drift_jac,
    )


def _saddle2d_spec(params: dict) -> ModelSpec:
    """Linear saddle model with prescribed quasipotential Hessian
    H = diag(-rho*mu, mu) and transverse Jacobian D = [[0, alpha],
    [alpha*rho, 0]]; the drift is b(x) = (-H + D) x with identity noise."""
    mu = float(params["mu"])
    rho = float(params["rho"])
    alpha = float(params["alpha"])
    if mu <= 0 or rho <= 0:
        raise ValueError("saddle2d requires mu > 0 and rho > 0")
    H = np.array([[-rho * mu, 0.0], [0.0, mu]])
    D = np.array([[0.0, alpha], [alpha * rho, 0.0]])
    M = -H + D

    def U(x):
        return 0.5 * np.einsum("...i,ij,...j->...", x, H, x)

    def gradU(x):
        return np.einsum("ij,...j->...i", H, np.asarray(x, dtype=float))

    def ell(x):
        return np.einsum("ij,...j->...i", D, np.asarray(x, dtype=float))

    def drift(x):
        return np.einsum("ij,...j->...i", M, np.asarray(x, dtype=float))

    return ModelSpec(
        dim=2,
        drift=drift,
        sigma=_constant_matrix_field(np.eye(2)),
        diffusion=_constant_matrix_field(np.eye(2)),
        transverse=TransversePair(
            potential=U,
            field=ell,
            grad_potential=gradU,
            potential_hessian=lambda x: H.copy(),
            field_jacobian=lambda x: D.copy(),
        ),
        drift_jacobian=lambda x: M.copy(),
    )


def _dw1d_facts(params: dict) -> KnownFacts:
    return KnownFacts(
        attractors=(np.array([-1.0]), np.array([1.0])),
        saddle=np.array([0.0]),
        barrier=0.25,
    )


def _dw2d_facts(params: dict) -> KnownFacts:
    return KnownFacts(
        attractors=(np.array([-1.0, 0.0]), np.array([1.0, 0.0])),
        saddle=np.array([0.0, 0.0]),
        barrier=0.25,
    )


def _saddle2d_facts(params: dict) -> KnownFacts:
    return KnownFacts(attractors=None, saddle=np.array([0.0, 0.0]), barrier=None)


def builtin_models() -> list[RegisteredModel]:
    """The registry of built-in models."""
    return [
        RegisteredModel(
            name="dw1d",
            parameters={},
            spec_factory=_dw1d_spec,
            known_facts_factory=_dw1d_facts,
            description="1D quartic double well, gradient drift",
        ),
        RegisteredModel(
            name="dw2d",
            parameters={},
            spec_factory=lambda p: _dw2d_family_spec({}),
            known_facts_factory=_dw2d_facts,
            description="2D double well (quartic in x, harmonic in y), gradient drift",
        ),
        RegisteredModel(
            name="dw2d-rot",
            parameters={"c": 1.0},
            spec_factory=lambda p: _dw2d_family_spec({"c0": p["c"]}),
            known_facts_factory=_dw2d_facts,
            description="2D double well with divergence-free rotation c*J*grad(U)",
        ),
        RegisteredModel(
            name="dw2d-shear",
            parameters={"kappa": 0.5},
            spec_factory=lambda p: _dw2d_family_spec({"c0": 1.0, "kappa": p["kappa"]}),
            known_facts_factory=_dw2d_facts,
            description="2D double well with shear (1 + kappa*x)*J*grad(U); "
            "non-Gibbsian (div l = -kappa*y)",
        ),
        RegisteredModel(
            name="saddle2d",
            parameters={"mu": 1.0, "rho": 0.5, "alpha": 1.0},
            spec_factory=_saddle2d_spec,
            known_facts_factory=_saddle2d_facts,
            description="linear saddle with prescribed quasipotential Hessian "
            "diag(-rho*mu, mu) and transverse Jacobian [[0, alpha], [alpha*rho, 0]]",
        ),
    ]


def get_model(name: str) -> RegisteredModel:
    for reg in builtin_models():
        if reg.name == name:
            return reg
    known = ", ".join(r.name for r in builtin_models())
    raise ModelNotFound(f"unknown model {name!r}; known models: {known}")


_MODEL_RE = re.compile(r"^\s*([A-Za-z0-9_-]+)\s*(?:\(\s*(.*?)\s*\))?\s*$")


def parse_model_string(text: str) -> tuple[str, dict]:
    """Parse a CLI model string ``name`` or ``name(k1=v1,k2=v2)`` with
    decimal-literal parameter values."""
    m = _MODEL_RE.match(text)
    if m is None:
        raise ModelNotFound(f"cannot parse model string {text!r}")
    name = m.group(1)
    params = {}
    body = m.group(2)
    if body:
        for item in body.split(","):
            if "=" not in item:
                raise ModelNotFound(
                    f"malformed parameter {item!r} in model string {text!r}")
            key, val = item.split("=", 1)
            try:
                params[key.strip()] = float(val)
            except ValueError as exc:
                raise ModelNotFound(
                    f"parameter {key.strip()!r} has non-numeric value {val!r}"
                ) from exc
    return name, params


@dataclass(frozen=True)
class ResolvedModel:
    """A registered model instantiated with concrete parameters."""

    name: str
    parameters: dict
    spec: ModelSpec
    facts: KnownFacts


def resolve_model(text: str) -> ResolvedModel:
    """Instantiate a model from a CLI string like ``dw2d-shear(kappa=0.5)``."""
    name, params = parse_model_string(text)
    reg = get_model(name)
    return ResolvedModel(
        name=name,
        parameters={**reg.parameters, **params},
        spec=reg.build(**params),
        facts=reg.known_facts(**params),
    )
