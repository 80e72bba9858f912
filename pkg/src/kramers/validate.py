"""Named invariant checks for a registered model, aggregated into one
structured pass/fail report.

Every analytic identity the rate formula rests on is checked at a stated
tolerance: the transverse decomposition and Hamilton-Jacobi residuals on
random clouds, the saddle spectral identities, the Lyapunov solves, the
endpoint vanishing of the non-Gibbsianness F, the instanton action against
the barrier, and the eta-plane cancellation of the rate assembly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics, landscape, models, saddle
from .errors import KramersError
from .models import ResolvedModel

__all__ = ["CheckResult", "validate_suite"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    residual: float
    tolerance: float
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


def _cloud(spec, n, rng):
    return rng.uniform(spec.domain_lo, spec.domain_hi, size=(n, spec.dim))


def validate_suite(resolved: ResolvedModel, seed: int = 0,
                   cloud_size: int = 10_000) -> dict:
    """Run every applicable invariant check on a resolved model.

    Returns {"model", "parameters", "checks": [CheckResult...], "passed"}.
    Check failures are report entries, not exceptions.
    """
    spec = resolved.spec
    facts = resolved.facts
    rng = np.random.default_rng(seed)
    checks: list[CheckResult] = []

    def record(name, residual, tol, detail=""):
        checks.append(CheckResult(name, bool(residual <= tol), float(residual),
                                  float(tol), detail))

    def record_error(name, exc):
        checks.append(CheckResult(name, False, float("inf"), 0.0,
                                  f"{type(exc).__name__}: {exc}"))

    pts = _cloud(spec, cloud_size, rng)

    # Diffusion matrix: symmetric positive definite on the cloud.
    try:
        a = np.asarray(spec.diffusion(pts[:256]), dtype=float)
        sym = float(np.max(np.abs(a - np.swapaxes(a, -1, -2))))
        min_eig = float(np.min(np.linalg.eigvalsh(a)))
        record("diffusion_symmetric", sym, 1e-12)
        record("diffusion_positive_definite", -min_eig + 1e-30, 1e-12,
               f"min eigenvalue {min_eig:.3e}")
    except Exception as exc:  # noqa: BLE001
        record_error("diffusion_spd", exc)

    if spec.has_transverse:
        try:
            rep = models.check_transverse(spec, pts)
            record("transverse_decomposition", rep["decomposition_residual"], 1e-9)
            record("transverse_orthogonality", rep["orthogonality_residual"], 1e-9)
        except Exception as exc:  # noqa: BLE001
            record_error("transverse_decomposition", exc)
        try:
            res = np.abs(np.atleast_1d(landscape.hj_residual(spec, pts[:1000])))
            record("hamilton_jacobi_residual", float(np.max(res)), 1e-9)
        except Exception as exc:  # noqa: BLE001
            record_error("hamilton_jacobi_residual", exc)

    # Analytic vs central-difference Jacobians.
    if spec.drift_jacobian is not None:
        fd_spec = spec.with_fd_derivatives()
        worst = 0.0
        for x in pts[:100]:
            ja = models.jacobian(spec, "drift", x)
            jf = models.jacobian(fd_spec, "drift", x)
            worst = max(worst, float(np.max(np.abs(ja - jf))
                                     / max(np.max(np.abs(ja)), 1.0)))
        record("jacobian_fd_agreement", worst, 1e-6)

    landmarks = []
    if facts.attractors is not None:
        landmarks.extend(facts.attractors)
    if facts.saddle is not None:
        landmarks.append(facts.saddle)
    for i, x_eq in enumerate(landmarks):
        b = np.asarray(spec.drift(np.asarray(x_eq, dtype=float)), dtype=float)
        record(f"equilibrium_residual_{i}", float(np.max(np.abs(b))), 1e-12,
               f"x={np.asarray(x_eq).tolist()}")

    if spec.has_transverse:
        for i, x_eq in enumerate(landmarks):
            record(f"f_vanishes_at_equilibrium_{i}",
                   abs(landscape.f_function(spec, x_eq)), 1e-8)

    sd = None
    if facts.saddle is not None:
        try:
            x_star = saddle.find_saddle(spec, facts.saddle)
            attr = facts.attractors[0] if facts.attractors else None
            toward = facts.attractors[1] if facts.attractors else None
            sd = saddle.saddle_geometry(spec, x_star, attractor=attr,
                                        toward=toward)
            for key, val in sd.diagnostics.items():
                record(f"saddle_{key}", val, 1e-8)
            sif = saddle.surface_integral_factors(sd)
            record("det_h_identity", sif["identity_residuals"]["det_h"], 1e-8)
            record("y_bar_eigvec_identity",
                   sif["identity_residuals"]["y_bar_eigvec"], 1e-8)
        except KramersError as exc:
            record_error("saddle_geometry", exc)

    if facts.attractors is not None:
        try:
            h_bar = saddle.quasipotential_hessian(spec, facts.attractors[0],
                                                  "attractor")
            M = models.jacobian(spec, "drift",
                                np.asarray(facts.attractors[0], dtype=float))
            a0 = np.asarray(spec.diffusion(
                np.asarray(facts.attractors[0], dtype=float)), dtype=float)
            X = np.linalg.inv(h_bar)
            record("lyapunov_residual_attractor",
                   float(np.linalg.norm(M @ X + X @ M.T + 2 * a0)), 1e-10)
        except KramersError as exc:
            record_error("lyapunov_residual_attractor", exc)

    # Relaxation paths carry zero action (needs an attractor to relax to).
    if facts.attractors is not None:
        try:
            x0 = rng.uniform(0.3 * spec.domain_lo, 0.3 * spec.domain_hi)
            rel = dynamics.integrate_relaxation(spec, x0, 50.0, 1e-10)
            record("relaxation_zero_action", dynamics.action(spec, rel), 1e-8)
        except KramersError as exc:
            record_error("relaxation_zero_action", exc)

    if sd is not None and facts.attractors is not None and spec.has_transverse:
        attr = np.asarray(facts.attractors[0], dtype=float)
        try:
            inst = dynamics.compute_instanton(spec, sd, attr)
            barrier = landscape.quasipotential(spec, sd.x_star, attr)
            record("instanton_action", abs(inst.action - barrier), 1e-3,
                   f"action {inst.action:.6f}, barrier {barrier:.6f}")
            u_vals = np.array([spec.transverse.potential(p)
                               for p in inst.path.points])
            record("instanton_potential_monotone",
                   float(np.max(np.maximum(0.0, -np.diff(u_vals)))), 1e-12)
        except KramersError as exc:
            record_error("instanton_action", exc)
        try:
            diag = saddle.eta_rate_diagnostic(
                spec, facts.attractors[0], facts.attractors[1], epsilon=0.1)
            record("eta_cancellation_spread", diag["relative_spread"], 0.02)
            record("eta_vs_closed_form", diag["max_relative_error"], 0.02)
        except KramersError as exc:
            record_error("eta_cancellation_spread", exc)

    if sd is not None:
        zs = np.linspace(-4, 4, 33)
        eps = 0.05
        qs = [saddle.committor(spec, sd, sd.x_star + z * sd.v_plus, eps)
              for z in zs]
        mono = float(np.max(np.maximum(0.0, -np.diff(qs))))
        limits = max(qs[0], 1.0 - qs[-1])
        record("committor_monotone", mono, 1e-12)
        record("committor_limits", limits, 1e-4)

    return {
        "model": resolved.name,
        "parameters": dict(resolved.parameters),
        "checks": [c.as_dict() for c in checks],
        "passed": all(c.passed for c in checks),
    }
