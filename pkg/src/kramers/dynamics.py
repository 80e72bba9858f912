"""Deterministic flows, action evaluation and instanton construction.

Two flows matter here.  The relaxation flow ``xdot = b(x)`` is what the
process does with no noise; the potential of a transverse decomposition
decreases along it.  The fluctuation flow ``xdot = a grad(U) + l`` climbs
the potential instead and its trajectories are the most probable escape
paths.  The instanton connecting an attractor to a saddle is computed by
integrating the fluctuation flow *backwards* from just off the saddle,
which is numerically stable because the attractor is a sink of the
reversed flow.
"""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import minimize as _scipy_minimize

from . import models as _models
from .errors import (
    BlowUp,
    NoConvergence,
    SingularDiffusion,
    WrongBasin,
)
from .models import ModelSpec, fluctuation_field, jacobian

__all__ = [
    "Path",
    "InstantonResult",
    "integrate_relaxation",
    "integrate_fluctuation",
    "action",
    "compute_instanton",
    "minimize_action",
    "path_to_csv",
    "interpolate_path",
]

EQUILIBRIUM_FIELD_TOL = 1e-10
DEFAULT_SAMPLE_DT = 0.01
INSTANTON_TIME_CAP = 1e3
ENDPOINT_PAD = 1.0


@dataclass(frozen=True)
class Path:
    """A discretized trajectory.

    Attributes
    ----------
    times : (n,) strictly increasing float array
    points : (n, d) float array
    kind : str
        One of "relaxation", "fluctuation", "instanton", "generic".
    """

    times: np.ndarray
    points: np.ndarray
    kind: str = "generic"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.atleast_2d(np.asarray(self.points, dtype=float))
        if t.ndim != 1 or len(t) != len(x):
            raise ValueError("times and points must have matching length")
        if len(t) < 2:
            raise ValueError("a path needs at least 2 samples")
        if not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise ValueError("path samples must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", x)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def reversed(self, kind: Optional[str] = None) -> "Path":
        """Time-reversed copy, re-anchored to start at the original t0."""
        t = self.times
        return Path(t[0] + (t[-1] - t[::-1]), self.points[::-1],
                    kind or self.kind)


@dataclass(frozen=True)
class InstantonResult:
    """An instanton path together with its action and truncation data."""

    path: Path
    action: float
    endpoint_gaps: tuple  # (gap at attractor, gap at saddle)
    incoming_direction: np.ndarray  # unit vector, oriented toward the attractor


def _blowup_event(model: ModelSpec):
    lo, hi = model.domain_lo, model.domain_hi

    def event(t, y):
        return float(np.min(np.minimum(hi - y, y - lo)))

    event.terminal = True
    return event


def _ball_event(center: np.ndarray, radius: float):
    center = np.asarray(center, dtype=float)

    def event(t, y):
        return float(np.linalg.norm(y - center) - radius)

    event.terminal = True
    return event


def _field_norm_event(func, threshold=EQUILIBRIUM_FIELD_TOL):
    def event(t, y):
        return float(np.linalg.norm(func(y)) - threshold)

    event.terminal = True
    return event


def _integrate(model, func, x0, t_end, tol, sample_dt, extra_events=(),
               kind="generic"):
    """Adaptive RK45 run of xdot = func(x), resampled on a uniform grid.

    Stops early at an equilibrium of `func` (field norm below 1e-10) and
    raises BlowUp if the state leaves the domain box.
    """
    x0 = np.asarray(x0, dtype=float)
    events = [_field_norm_event(func), _blowup_event(model)]
    events.extend(extra_events)
    sol = solve_ivp(
        lambda t, y: func(y),
        (0.0, float(t_end)),
        x0,
        method="RK45",
        rtol=tol,
        atol=tol,
        dense_output=True,
        events=events,
    )
    if not sol.success:
        raise NoConvergence(f"integrator failed: {sol.message}")
    if sol.status == 1 and len(sol.t_events[1]):
        raise BlowUp(f"trajectory left the domain box near x={sol.y[:, -1]}")
    t_stop = sol.t[-1]
    dt = min(sample_dt, t_stop) if t_stop > 0 else sample_dt
    grid = np.arange(0.0, t_stop, dt)
    if len(grid) == 0 or t_stop - grid[-1] > 1e-12:
        grid = np.append(grid, t_stop)
    pts = sol.sol(grid).T if t_stop > 0 else np.vstack([x0, x0])
    if t_stop == 0.0:
        grid = np.array([0.0, float(t_end)])
    return Path(grid, pts, kind), sol


def integrate_relaxation(model: ModelSpec, x0, t_end: float, tol: float = 1e-10,
                         sample_dt: float = DEFAULT_SAMPLE_DT) -> Path:
    """The zero-noise flow xdot = b(x) on [0, t_end].

    Terminates early once |b(x)| < 1e-10 (an equilibrium has been reached,
    and the terminal point is recorded).  Raises BlowUp if the trajectory
    leaves the model's domain box.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    path, _ = _integrate(model, lambda y: np.asarray(model.drift(y), dtype=float),
                         x0, t_end, tol, sample_dt, kind="relaxation")
    return path


def integrate_fluctuation(model: ModelSpec, x0, t_end: float, tol: float = 1e-10,
                          sample_dt: float = DEFAULT_SAMPLE_DT) -> Path:
    """The fluctuation flow xdot = a grad(U) + l on [0, t_end].

    This integrates the escape-path field forward in time from x0; read
    right-to-left, the result is the most probable path by which noise
    drives the process *to* its final point.  Requires a transverse pair.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    model.require_transverse()
    path, _ = _integrate(model, lambda y: fluctuation_field(model, y),
                         x0, t_end, tol, sample_dt, kind="fluctuation")
    return path


def action(model: ModelSpec, path: Path) -> float:
    """Freidlin-Wentzell action (1/4) int <xdot - b, a^-1 (xdot - b)> dt.

    Midpoint discretization: velocities by finite differences on segments,
    drift and diffusion evaluated at segment midpoints.
    """
    t = path.times
    x = path.points
    dt = np.diff(t)
    v = (x[1:] - x[:-1]) / dt[:, None]
    mid = 0.5 * (x[1:] + x[:-1])
    b = np.asarray(model.drift(mid), dtype=float)
    a = np.asarray(model.diffusion(mid), dtype=float)
    r = v - b
    try:
        w = np.linalg.solve(a, r[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularDiffusion("a(x) is numerically singular along the path") from exc
    if not np.all(np.isfinite(w)):
        raise SingularDiffusion("a(x) is numerically singular along the path")
    return float(0.25 * np.sum(dt * np.einsum("ij,ij->i", r, w)))


def compute_instanton(model: ModelSpec, saddle, attractor, delta: float = 1e-4,
                      tol: float = 1e-7, sample_dt: float = DEFAULT_SAMPLE_DT,
                      time_cap: float = INSTANTON_TIME_CAP) -> InstantonResult:
    """Most probable transition path from an attractor to a saddle.

    Integrates the *reversed* fluctuation field xdot = -(a grad(U) + l)
    from the point offset by delta from the saddle along the incoming
    instanton direction (the attractor-side eigendirection of the
    linearized fluctuation flow), until within `tol` of the attractor.
    The returned path runs attractor -> saddle with the exact endpoints
    appended.

    Parameters
    ----------
    saddle : SaddleData or array
        Saddle-point data (from `kramers.saddle.saddle_geometry`); a bare
        point is accepted, in which case the geometry is computed here.
    attractor : array
        The stable equilibrium the instanton should emanate from.
    delta : float in (0, 1e-2]
        Offset of the starting point from the saddle.
    tol : float
        Truncation tolerance at the attractor end.
    """
    if not (0.0 < delta <= 1e-2):
        raise ValueError("delta must lie in (0, 1e-2]")
    model.require_transverse()
    attractor = np.asarray(attractor, dtype=float)
    from .saddle import SaddleData, saddle_geometry  # local import, avoids cycle

    if not isinstance(saddle, SaddleData):
        saddle = saddle_geometry(model, np.asarray(saddle, dtype=float),
                                 attractor=attractor)
    x_star = saddle.x_star
    v_in = saddle.v_prime_plus
    if np.dot(v_in, attractor - x_star) < 0:
        v_in = -v_in
    x0 = x_star + delta * v_in

    reversed_field = lambda y: -fluctuation_field(model, y)  # noqa: E731
    hit = _ball_event(attractor, tol)
    path_rev, sol = _integrate(model, reversed_field, x0, time_cap, 1e-12,
                               sample_dt, extra_events=[hit], kind="generic")
    end = path_rev.points[-1]
    gap_attr = float(np.linalg.norm(end - attractor))
    if gap_attr > tol:
        if np.linalg.norm(reversed_field(end)) < 10 * EQUILIBRIUM_FIELD_TOL:
            raise WrongBasin(
                f"reverse integration converged to {end}, not the requested "
                f"attractor {attractor}")
        raise NoConvergence(
            f"instanton not within {tol} of the attractor after time {time_cap}")

    # Reverse so the path runs attractor -> saddle, and append the exact
    # endpoints one pad interval beyond each truncation point.
    core = path_rev.reversed()
    times = np.concatenate(([0.0], core.times + ENDPOINT_PAD,
                            [core.times[-1] + 2.0 * ENDPOINT_PAD]))
    pts = np.vstack([attractor, core.points, x_star])
    path = Path(times, pts, kind="instanton")
    return InstantonResult(
        path=path,
        action=action(model, path),
        endpoint_gaps=(gap_attr, float(delta)),
        incoming_direction=v_in,
    )


def _discrete_action_and_grad(model, x_from, x_to, T, n_steps, interior):
    """Value and gradient of the midpoint-discretized action over the
    stacked interior points of a fixed-endpoint uniform-grid path."""
    d = model.dim
    dt = T / n_steps
    pts = np.empty((n_steps + 1, d))
    pts[0] = x_from
    pts[-1] = x_to
    pts[1:-1] = interior.reshape(n_steps - 1, d)
    v = (pts[1:] - pts[:-1]) / dt
    mid = 0.5 * (pts[1:] + pts[:-1])
    b = np.asarray(model.drift(mid), dtype=float)
    a = np.asarray(model.diffusion(mid), dtype=float)
    r = v - b
    w = np.linalg.solve(a, r[..., None])[..., 0]
    S = 0.25 * dt * float(np.einsum("ij,ij->", r, w))

    jac = np.stack([jacobian(model, "drift", m) for m in mid])
    jtw = np.einsum("kji,kj->ki", jac, w)
    # dS/dx_i = 0.5*(w_{i-1} - w_i) - (dt/4)*(Db(m_{i-1})^T w_{i-1} + Db(m_i)^T w_i)
    grad = 0.5 * (w[:-1] - w[1:]) - 0.25 * dt * (jtw[:-1] + jtw[1:])
    if not model.diffusion_is_constant:
        # d(a^-1)/dx contributes -(dt/8) w^T (da/dx_c) w per adjacent segment
        step = model.fd_step
        extra = np.zeros_like(grad)
        for k in range(n_steps):
            m = mid[k]
            h = np.maximum(step, step * np.abs(m))
            for c in range(d):
                mp = m.copy()
                mm = m.copy()
                mp[c] += h[c]
                mm[c] -= h[c]
                da = (model.diffusion(mp) - model.diffusion(mm)) / (2 * h[c])
                q = -0.125 * dt * float(w[k] @ da @ w[k])
                if k >= 1:
                    extra[k - 1, c] += q
                if k < n_steps - 1:
                    extra[k, c] += q
        grad = grad + extra
    return S, grad.ravel()


def minimize_action(model: ModelSpec, x_from, x_to, T: float, n_steps: int,
                    init: Union[Path, str] = "linear",
                    gtol: float = 1e-6, max_iter: int = 10_000) -> Path:
    """Direct minimization of the discretized action over fixed-endpoint
    paths on a uniform time grid.

    A quasi-Newton (L-BFGS) iteration runs on the stacked interior
    coordinates until the gradient max-norm drops below `gtol` or the
    iteration budget is exhausted.  If the line search stalls first, the
    best path found so far is returned and a warning is issued.
    """
    if n_steps < 16:
        raise ValueError("n_steps must be at least 16")
    if T <= 0:
        raise ValueError("T must be positive")
    x_from = np.asarray(x_from, dtype=float)
    x_to = np.asarray(x_to, dtype=float)
    d = model.dim
    if isinstance(init, Path):
        grid = np.linspace(0.0, T, n_steps + 1)
        src_t = np.linspace(0.0, T, len(init.times))
        pts0 = np.stack([np.interp(grid, src_t, init.points[:, i])
                         for i in range(d)], axis=1)
        interior0 = pts0[1:-1]
    else:
        if init != "linear":
            raise ValueError("init must be a Path or 'linear'")
        frac = np.linspace(0.0, 1.0, n_steps + 1)[1:-1, None]
        interior0 = x_from + frac * (x_to - x_from)

    res = _scipy_minimize(
        lambda z: _discrete_action_and_grad(model, x_from, x_to, T, n_steps, z),
        interior0.ravel(),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "maxfun": 10 * max_iter,
                 "gtol": gtol, "ftol": 0.0},
    )
    grad_norm = float(np.max(np.abs(res.jac))) if res.jac is not None else np.inf
    if grad_norm > gtol:
        warnings.warn(
            f"action minimization stalled (gradient max-norm {grad_norm:.2e} "
            f"> {gtol:.0e}); returning best path found", RuntimeWarning)
    pts = np.empty((n_steps + 1, d))
    pts[0] = x_from
    pts[-1] = x_to
    pts[1:-1] = res.x.reshape(n_steps - 1, d)
    return Path(np.linspace(0.0, T, n_steps + 1), pts, kind="generic")


def interpolate_path(model: ModelSpec, path: Path, field_name: str = "drift"):
    """Cubic Hermite interpolant of a path, with derivatives recomputed
    from the model field ("drift" or "fluctuation")."""
    if field_name == "drift":
        deriv = np.asarray(model.drift(path.points), dtype=float)
    elif field_name == "fluctuation":
        deriv = fluctuation_field(model, path.points)
    else:
        raise ValueError(f"unknown field {field_name!r}")
    return CubicHermiteSpline(path.times, path.points, deriv, axis=0)


def path_to_csv(path: Path, stream=None) -> str:
    """Serialize a path as CSV with header t,x1,...,xd at full double
    precision (17 significant digits)."""
    own = stream is None
    if own:
        stream = io.StringIO()
    cols = ",".join(f"x{i + 1}" for i in range(path.dim))
    stream.write(f"t,{cols}\n")
    for t, row in zip(path.times, path.points):
        vals = ",".join(f"{v:.17g}" for v in row)
        stream.write(f"{t:.17g},{vals}\n")
    return stream.getvalue() if own else ""
