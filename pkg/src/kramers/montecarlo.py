"""Direct stochastic simulation: the ground truth every asymptotic formula
is validated against.

Trajectories use the Euler-Maruyama scheme

    X_{k+1} = X_k + b(X_k) dt + sqrt(2 eps dt) sigma(X_k) xi_k,

with one counter-based random stream per trajectory, keyed by
(seed, trajectory index).  Each trajectory consumes its own stream in
fixed-size blocks regardless of how trajectories are scheduled, so results
are bitwise identical for any worker count or batch split.  Trajectories
are advanced in vectorized lockstep batches for throughput; aggregation is
over an index-ordered array of per-trajectory outcomes, hence order
insensitive.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import AllCensored, InsufficientRegime
from .models import ModelSpec, jacobian
from .saddle import DomainSpec, SaddleData, zeta_plus

__all__ = [
    "McConfig",
    "McEstimate",
    "CommittorEstimate",
    "ArrheniusFit",
    "sample_transition_times",
    "sample_exit_times",
    "empirical_committor",
    "arrhenius_fit",
    "fit_arrhenius",
    "exit_time_distribution_check",
    "wilson_interval",
]

NOISE_BLOCK = 1024  # steps drawn per stream request; part of the
# determinism contract (the draw pattern of a trajectory must not depend
# on other trajectories)


@dataclass(frozen=True)
class McConfig:
    """Simulation parameters.

    dt must satisfy dt <= eps/10 and dt <= 1e-2 (stability and
    first-passage accuracy guard).  `stop_radius` is the radius of the
    absorbing ball around the target.
    """

    epsilon: float
    dt: float
    n_samples: int
    seed: int
    stop_radius: float = 0.2
    max_steps: int = 100_000_000
    workers: int = 1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dt > self.epsilon / 10 + 1e-15 or self.dt > 1e-2 + 1e-15:
            raise ValueError(
                f"dt={self.dt} violates the guard dt <= min(eps/10, 1e-2) "
                f"= {min(self.epsilon / 10, 1e-2)}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class McEstimate:
    """First-passage statistics over completed (non-censored) samples."""

    mean: float
    stderr: float
    n: int
    median: float
    exp_fit_rate: float
    ks_pvalue_proxy: float
    censored: int
    times: np.ndarray

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n": self.n,
            "median": self.median,
            "exp_fit_rate": self.exp_fit_rate,
            "ks_pvalue_proxy": self.ks_pvalue_proxy,
            "censored": self.censored,
        }


@dataclass(frozen=True)
class CommittorEstimate:
    """Hit fraction toward the target side with a Wilson 99% interval."""

    fraction: float
    ci_low: float
    ci_high: float
    n: int
    hits: int

    def as_dict(self) -> dict:
        return {
            "fraction": self.fraction,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "n": self.n,
            "hits": self.hits,
        }


def _trajectory_stream(seed: int, index: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _run_chunk(model: ModelSpec, cfg: McConfig, start: np.ndarray,
               stop_fn: Callable[[np.ndarray], np.ndarray],
               indices: np.ndarray,
               drift: Optional[Callable] = None,
               sigma_const: Optional[np.ndarray] = None) -> np.ndarray:
    """Integrate one batch of trajectories in lockstep; returns first-hit
    times (NaN when censored), indexed like `indices`."""
    n = len(indices)
    d = model.dim
    m = model.noise_dim
    drift = drift or (lambda x: np.asarray(model.drift(x), dtype=float))
    if sigma_const is None and model.diffusion_is_constant:
        sigma_const = np.asarray(model.sigma(start), dtype=float)
    gens = [_trajectory_stream(cfg.seed, int(k)) for k in indices]
    coef = np.sqrt(2.0 * cfg.epsilon * cfg.dt)

    X = np.tile(np.asarray(start, dtype=float), (n, 1))
    times = np.full(n, np.nan)
    local = np.arange(n)
    step = 0
    while local.size and step < cfg.max_steps:
        nblk = min(NOISE_BLOCK, cfg.max_steps - step)
        Z = np.empty((local.size, nblk, m))
        for row, k in enumerate(local):
            Z[row] = gens[k].standard_normal((nblk, m))
        done_rows = np.zeros(local.size, dtype=bool)
        for j in range(nblk):
            act = ~done_rows
            if not act.any():
                break
            Xa = X[act]
            if sigma_const is not None:
                noise = Z[act, j] @ sigma_const.T
            else:
                sig = np.asarray(model.sigma(Xa), dtype=float)
                noise = np.einsum("kij,kj->ki", sig, Z[act, j])
            Xa = Xa + cfg.dt * drift(Xa) + coef * noise
            X[act] = Xa
            hit = stop_fn(Xa)
            if hit.any():
                rows = np.where(act)[0][hit]
                times[local[rows]] = (step + j + 1) * cfg.dt
                done_rows[rows] = True
        step += nblk
        keep = ~done_rows
        local = local[keep]
        X = X[keep]
    return times


def _simulate(model: ModelSpec, cfg: McConfig, start, stop_fn,
              drift=None) -> np.ndarray:
    """First-hit times for all trajectories, split across workers.

    The per-trajectory streams make the result independent of the split;
    chunks are reassembled by trajectory index.
    """
    start = np.asarray(start, dtype=float)
    all_idx = np.arange(cfg.n_samples)
    chunks = np.array_split(all_idx, cfg.workers)
    chunks = [c for c in chunks if c.size]
    times = np.empty(cfg.n_samples)
    if len(chunks) == 1:
        times[chunks[0]] = _run_chunk(model, cfg, start, stop_fn, chunks[0],
                                      drift=drift)
        return times
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        futures = [pool.submit(_run_chunk, model, cfg, start, stop_fn, c,
                               drift=drift) for c in chunks]
        for c, fut in zip(chunks, futures):
            times[c] = fut.result()
    return times


def _estimate_from_times(raw: np.ndarray) -> McEstimate:
    done = raw[np.isfinite(raw)]
    censored = int(len(raw) - len(done))
    if len(done) == 0:
        raise AllCensored("every trajectory hit the step budget")
    n = len(done)
    mean = float(np.sum(done) / n)
    stderr = float(np.std(done, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return McEstimate(
        mean=mean,
        stderr=stderr,
        n=n,
        median=float(np.median(done)),
        exp_fit_rate=_tail_exponential_rate(done),
        ks_pvalue_proxy=exit_time_distribution_check(done),
        censored=censored,
        times=done,
    )


def sample_transition_times(model: ModelSpec, config: McConfig, from_point,
                            to_point) -> McEstimate:
    """First-passage times from one equilibrium to the absorbing ball
    |X - to| <= stop_radius around another.

    Deterministic given (seed, config, model): trajectory k uses the
    counter-based stream keyed by (seed, k), so the estimate is identical
    for any worker count.  Censored trajectories (step budget exhausted)
    never enter the statistics; their count is reported.
    """
    to_point = np.asarray(to_point, dtype=float)
    r2 = config.stop_radius**2

    def stop(X):
        diff = X - to_point
        return np.einsum("ij,ij->i", diff, diff) <= r2

    return _estimate_from_times(_simulate(model, config, from_point, stop))


def sample_exit_times(model: ModelSpec, config: McConfig, start,
                      domain: DomainSpec) -> McEstimate:
    """First-exit times from a domain (stopping when `domain.contains`
    turns false)."""

    def stop(X):
        return ~np.asarray(domain.contains(X), dtype=bool)

    return _estimate_from_times(_simulate(model, config, start, stop))


def empirical_committor(model: ModelSpec, saddle: SaddleData, y,
                        config: McConfig, z_cap: float) -> CommittorEstimate:
    """Committor estimate from the linearized dynamics.

    Simulates dX = M_star (X - x_star) dt + sqrt(2 eps) sigma(x_star) dW
    from y until the unstable coordinate zeta reaches +-z_cap, and returns
    the fraction of +z_cap hits with its Wilson 99% interval.
    """
    y = np.asarray(y, dtype=float)
    if z_cap <= abs(zeta_plus(saddle, y)):
        raise ValueError("z_cap must exceed |zeta_plus(y)|")
    sides = _committor_sides(model, saddle, y, config, z_cap)
    n = int(np.sum(sides != 0))
    hits = int(np.sum(sides > 0))
    frac = hits / n if n else float("nan")
    lo, hi = wilson_interval(hits, n)
    return CommittorEstimate(fraction=frac, ci_low=lo, ci_high=hi, n=n,
                             hits=hits)


def _committor_sides(model, saddle, y, config, z_cap) -> np.ndarray:
    """Exit side (+1 toward the target basin, -1 back) per trajectory,
    replayed with the same per-trajectory streams as the time estimate."""
    M = saddle.m_star
    x_star = saddle.x_star
    n_vec = saddle.n_star / saddle.cos_theta
    m = model.noise_dim
    sigma = np.asarray(model.sigma(x_star), dtype=float)
    coef = np.sqrt(2.0 * config.epsilon * config.dt)
    sides = np.zeros(config.n_samples)
    n = config.n_samples
    gens = [_trajectory_stream(config.seed, k) for k in range(n)]
    X = np.tile(np.asarray(y, dtype=float), (n, 1))
    local = np.arange(n)
    step = 0
    while local.size and step < config.max_steps:
        nblk = min(NOISE_BLOCK, config.max_steps - step)
        Z = np.empty((local.size, nblk, m))
        for row, k in enumerate(local):
            Z[row] = gens[k].standard_normal((nblk, m))
        done_rows = np.zeros(local.size, dtype=bool)
        for j in range(nblk):
            act = ~done_rows
            if not act.any():
                break
            Xa = X[act]
            Xa = Xa + config.dt * ((Xa - x_star) @ M.T) + coef * (Z[act, j] @ sigma.T)
            X[act] = Xa
            z = (Xa - x_star) @ n_vec
            hit = np.abs(z) >= z_cap
            if hit.any():
                rows = np.where(act)[0][hit]
                sides[local[rows]] = np.sign(z[hit])
                done_rows[rows] = True
        step += nblk
        keep = ~done_rows
        local = local[keep]
        X = X[keep]
    return sides


def wilson_interval(hits: int, n: int, z: float = 2.5758293035489004):
    """Wilson score interval (99% by default)."""
    if n == 0:
        return float("nan"), float("nan")
    p = hits / n
    denom = 1.0 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    return float(center - half), float(center + half)


@dataclass(frozen=True)
class ArrheniusFit:
    """Least-squares fit of log(mean time) against 1/eps."""

    delta_v_hat: float
    log_prefactor_hat: float
    r2: float
    epsilons: tuple
    means: tuple
    stderrs: tuple


def fit_arrhenius(epsilons, means) -> tuple[float, float, float]:
    """Slope (barrier), intercept (log prefactor) and r^2 of the
    regression log(mean) ~ (1/eps) * slope + intercept."""
    x = 1.0 / np.asarray(epsilons, dtype=float)
    ylog = np.log(np.asarray(means, dtype=float))
    slope, intercept = np.polyfit(x, ylog, 1)
    fit = slope * x + intercept
    ss_res = float(np.sum((ylog - fit) ** 2))
    ss_tot = float(np.sum((ylog - ylog.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def relaxation_time(model: ModelSpec, attractor) -> float:
    """Slowest linear relaxation time 1/min|Re lambda| at an attractor."""
    eigs = np.linalg.eigvals(jacobian(model, "drift",
                                      np.asarray(attractor, dtype=float)))
    rate = float(np.min(-eigs.real))
    if rate <= 0:
        raise ValueError(f"{attractor} is not a stable equilibrium")
    return 1.0 / rate


def arrhenius_fit(model: ModelSpec, from_point, to_point, epsilons,
                  config: McConfig) -> ArrheniusFit:
    """Arrhenius regression over a list of temperatures.

    Each epsilon is simulated with dt = min(config.dt, eps/10) and a
    seed offset by the run index; the metastability guard requires every
    mean time to exceed 50 relaxation times, else InsufficientRegime.
    """
    if len(epsilons) < 3:
        raise ValueError("at least 3 epsilon values are required")
    t_relax = relaxation_time(model, from_point)
    means, errs = [], []
    for i, eps in enumerate(sorted(epsilons)):
        cfg = replace(config, epsilon=float(eps),
                      dt=min(config.dt, float(eps) / 10.0),
                      seed=config.seed + 7919 * i)
        est = sample_transition_times(model, cfg, from_point, to_point)
        if est.mean < 50.0 * t_relax:
            raise InsufficientRegime(
                f"eps={eps}: mean time {est.mean:.3g} below 50 relaxation "
                f"times ({50 * t_relax:.3g}); not metastable")
        means.append(est.mean)
        errs.append(est.stderr)
    slope, intercept, r2 = fit_arrhenius(sorted(epsilons), means)
    return ArrheniusFit(
        delta_v_hat=slope,
        log_prefactor_hat=intercept,
        r2=r2,
        epsilons=tuple(sorted(epsilons)),
        means=tuple(means),
        stderrs=tuple(errs),
    )


def _tail_exponential_rate(times: np.ndarray) -> float:
    """Rate from a linear fit of the log empirical survival function on
    the upper half of the sample (robust to the short-time transient)."""
    t = np.sort(np.asarray(times, dtype=float))
    n = len(t)
    if n < 10:
        return 1.0 / float(np.mean(t))
    surv = 1.0 - np.arange(1, n + 1) / (n + 1.0)
    k0 = n // 2
    slope, _ = np.polyfit(t[k0:], np.log(surv[k0:]), 1)
    return float(-slope)


def exit_time_distribution_check(times) -> float:
    """Sup-distance between the empirical CDF of the sample and the
    exponential distribution with the sample mean.

    Small values certify the memorylessness underlying the inversion of
    an exit rate into a mean time; clearly non-exponential samples (e.g.
    sharply peaked ones) score high.
    """
    t = np.sort(np.asarray(times, dtype=float))
    n = len(t)
    if n < 2:
        raise ValueError("need at least 2 samples")
    cdf = 1.0 - np.exp(-t / np.mean(t))
    upper = np.arange(1, n + 1) / n
    lower = np.arange(0, n) / n
    return float(max(np.max(np.abs(upper - cdf)), np.max(np.abs(lower - cdf))))
