"""Conjugate Gaussian inference in sequence space.

The linear model per coordinate is y_ell = kappa_ell v_ell + eps/sqrt(n)
with prior v_ell ~ N(0, tau^2 ell^(-1-2 alpha/d)), so the posterior is an
independent product of normals with closed-form mean and variance.  The
smoothness parameter alpha can be fixed, picked by marginal maximum
likelihood on [0, log n] (empirical Bayes), or integrated against a
hyperprior on a grid (hierarchical Bayes).  Credible balls are calibrated
by Monte Carlo because the weighted chi-square radius has no closed form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .bases import SvdSystem
from .errors import DimensionError, DomainError, NumericalError
from .seqspace import CoeffSeq


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian series prior with scale tau and smoothness alpha."""

    tau: float
    alpha: float
    d: int

    def __post_init__(self):
        if self.tau <= 0:
            raise DomainError("tau must be positive")
        if self.alpha < 0:
            raise DomainError("alpha must be nonnegative")

    def variances(self, N: int) -> np.ndarray:
        ell = np.arange(1, N + 1, dtype=float)
        return self.tau**2 * ell ** (-1.0 - 2.0 * self.alpha / self.d)


@dataclass
class SeqObservation:
    """Per-coordinate data y_ell with signal-to-noise n against a system.

    basis_scale records the factor linking these coordinates to plain
    eigenbasis coefficients when the data came from a discrete design
    (1.0 for the white noise model).
    """

    y: np.ndarray
    n: float
    system: SvdSystem
    basis_scale: float = 1.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.y.shape[0] != self.system.truncation:
            raise DimensionError(
                f"observation length {self.y.shape[0]} != system truncation "
                f"{self.system.truncation}"
            )
        if self.n <= 0:
            raise DomainError("n must be positive")

    def save(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ell", "ytilde"])
            for ell, val in enumerate(self.y, start=1):
                w.writerow([ell, format(val, ".17g")])


@dataclass
class PosteriorGaussian:
    """Coordinatewise Gaussian posterior for the sequence model."""

    mean: np.ndarray
    var: np.ndarray
    prior: PriorSpec
    n: float
    system: SvdSystem

    def export_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ell", "mean", "var"])
            for ell in range(self.mean.shape[0]):
                w.writerow(
                    [ell + 1, format(self.mean[ell], ".17g"),
                     format(self.var[ell], ".17g")]
                )


@dataclass(frozen=True)
class CredibleBall:
    """L2 ball around the posterior mean at a prescribed credible level."""

    center: CoeffSeq
    radius: float
    level: float
    inflation: float = 1.0

    def contains(self, v: np.ndarray) -> bool:
        dev = np.linalg.norm(np.asarray(v, dtype=float) - self.center.coeffs)
        return dev <= self.inflation * self.radius


def posterior(obs: SeqObservation, prior: PriorSpec) -> PosteriorGaussian:
    """Closed-form conjugate posterior, using |kappa| from the system."""
    N = obs.y.shape[0]
    lam = prior.variances(N)
    kap = np.abs(obs.system.kappas)
    denom = 1.0 + obs.n * lam * kap**2
    mean = obs.n * lam * kap * obs.y / denom
    var = lam / denom
    return PosteriorGaussian(mean=mean, var=var, prior=prior, n=obs.n,
                             system=obs.system)


def sample_matrix(post: PosteriorGaussian, count: int, seed: int) -> np.ndarray:
    """(count, N) array of independent posterior draws, seeded."""
    if count < 1:
        raise DomainError("count must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, post.mean.shape[0]))
    return post.mean[None, :] + z * np.sqrt(post.var)[None, :]


def sample_posterior(post: PosteriorGaussian, count: int, seed: int) -> list:
    """Posterior draws wrapped as CoeffSeq values (deterministic per seed)."""
    draws = sample_matrix(post, count, seed)
    return [
        CoeffSeq.from_array(row, basis_id=post.system.basis_id, d=post.system.d)
        for row in draws
    ]


def _eb_objective_terms(alphas: np.ndarray, obs: SeqObservation) -> np.ndarray:
    """Objective values on an alpha grid, stable in log space.

    Per coordinate the term is log(1 + n/t) - n^2 y^2/(t + n) with
    t = ell^(1+2 alpha/d) kappa^(-2) and tau = 1 fixed.
    """
    N = obs.y.shape[0]
    d = obs.system.d
    ell = np.arange(1, N + 1, dtype=float)
    logell = np.log(ell)
    logkap2 = 2.0 * np.log(np.abs(obs.system.kappas))
    logn = math.log(obs.n)
    out = np.empty(alphas.shape[0])
    y2 = obs.y**2
    for j, alpha in enumerate(alphas):
        logt = (1.0 + 2.0 * alpha / d) * logell - logkap2
        # r = n/t, computed without overflow
        logr = logn - logt
        logterm = np.logaddexp(0.0, logr)
        r = np.exp(np.minimum(logr, 700.0))
        datavec = obs.n * y2 * r / (1.0 + r)
        out[j] = float(np.sum(logterm - datavec))
    return out


def eb_objective(alpha: float, obs: SeqObservation) -> float:
    """Negative log marginal likelihood of the data at smoothness alpha."""
    if alpha < 0:
        raise DomainError("alpha must be >= 0")
    return float(_eb_objective_terms(np.array([float(alpha)]), obs)[0])


def eb_trace(obs: SeqObservation, grid_points: int = 64) -> np.ndarray:
    """(alpha, objective) table over the uniform grid on [0, log n]."""
    alphas = np.linspace(0.0, math.log(obs.n), grid_points)
    vals = _eb_objective_terms(alphas, obs)
    return np.stack([alphas, vals], axis=1)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_section(f, a, b, iters=60):
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def empirical_bayes_alpha(obs: SeqObservation, grid_points: int = 64) -> float:
    """Marginal likelihood maximizer for alpha restricted to [0, log n].

    Coarse uniform scan followed by golden-section refinement inside the
    best bracket; the objective can be multimodal so the scan guards the
    local search.  Exact ties resolve to the smaller alpha.
    """
    if grid_points < 8:
        raise DomainError("grid_points must be >= 8")
    hi = math.log(obs.n)
    alphas = np.linspace(0.0, hi, grid_points)
    vals = _eb_objective_terms(alphas, obs)
    best = int(np.argmin(vals))
    lo_b = alphas[max(best - 1, 0)]
    hi_b = alphas[min(best + 1, grid_points - 1)]
    a_ref, f_ref = _golden_section(lambda a: eb_objective(a, obs), lo_b, hi_b)
    # keep the grid point on ties (picks the smaller alpha for flat objectives)
    if f_ref < vals[best]:
        return float(min(max(a_ref, 0.0), hi))
    return float(alphas[best])


def hb_alpha_posterior(
    obs: SeqObservation,
    hyper: Optional[Callable] = None,
    grid: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Posterior weights of alpha on a grid under a hyperprior density.

    weights_j is proportional to hyper(alpha_j) * exp(-objective_j / 2);
    the marginal likelihood of the data given alpha equals, up to an
    alpha-free constant, exp(-objective/2).  Normalization happens in log
    space so the weights survive arbitrarily large objective spreads.
    The default hyperprior is exp(-alpha).
    """
    if grid is None:
        grid = np.linspace(0.0, math.log(obs.n), 128)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.shape[0] < 2:
        raise DimensionError("alpha grid must be a vector with >= 2 points")
    if np.any(np.diff(grid) <= 0) or np.any(grid < 0):
        raise DomainError("alpha grid must be strictly increasing and >= 0")
    if hyper is None:
        log_hyper = -grid
    else:
        hvals = np.array([hyper(a) for a in grid], dtype=float)
        if np.any(hvals <= 0):
            raise DomainError("hyperprior density must be positive on the grid")
        log_hyper = np.log(hvals)
    logw = log_hyper - 0.5 * _eb_objective_terms(grid, obs)
    logw -= logw.max()
    w = np.exp(logw)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise NumericalError("hyperposterior weights degenerate")
    return w / total


def credible_radius(
    post: PosteriorGaussian, level: float, mc_draws: int = 2000, seed: int = 0
) -> float:
    """Level-quantile of ||v - mean||_L2 under the posterior, by Monte Carlo."""
    if not (0.0 < level < 1.0):
        raise DomainError("level must be in (0, 1)")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((mc_draws, post.var.shape[0]))
    norms = np.sqrt((z**2 * post.var[None, :]).sum(axis=1))
    return float(np.quantile(norms, level))


def credible_ball(
    post: PosteriorGaussian,
    level: float,
    mc_draws: int = 2000,
    seed: int = 0,
    inflation: float = 1.0,
) -> CredibleBall:
    radius = credible_radius(post, level, mc_draws=mc_draws, seed=seed)
    center = CoeffSeq.from_array(
        post.mean, basis_id=post.system.basis_id, d=post.system.d
    )
    return CredibleBall(center=center, radius=radius, level=level,
                        inflation=inflation)


def hn_diagnostic(alpha: float, v0: CoeffSeq, n: float, p: float, d: int = 1) -> float:
    """Bracketing diagnostic for the empirical Bayes smoothness estimate.

    Defined for d = 1 with kappa_ell = ell^(-p):
    (1+2a+2p)/(n^(1/(1+2a+2p)) log n) * sum n^2 ell^(1+2a) v_ell^2 log(ell)
    / (ell^(1+2a+2p) + n)^2.  A research diagnostic only.
    """
    if d != 1:
        raise DimensionError("hn_diagnostic is defined for d = 1 only")
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    ell = np.arange(1, v0.truncation + 1, dtype=float)
    expo = 1.0 + 2.0 * alpha
    denom = ell ** (expo + 2.0 * p) + n
    series = np.sum(n**2 * ell**expo * v0.coeffs**2 * np.log(ell) / denom**2)
    rate = 1.0 / (1.0 + 2.0 * alpha + 2.0 * p)
    return float((1.0 + 2.0 * alpha + 2.0 * p) / (n**rate * math.log(n)) * series)


def eb_alpha_brackets(
    v0: CoeffSeq, n: float, p: float, l: float = 1.0, L: float = 1.0,
    grid_points: int = 4096,
) -> tuple:
    """Deterministic bracket [lower, upper] for the EB smoothness estimate.

    lower is the first alpha where the h_n diagnostic exceeds l, capped at
    sqrt(log n); upper the first alpha where it exceeds L (log n)^2 (infinity
    if never).  Research diagnostic companion to hn_diagnostic, d = 1 only.
    """
    if l <= 0 or L <= 0:
        raise DomainError("thresholds must be positive")
    logn = math.log(n)
    alphas = np.linspace(1e-8, logn, grid_points)
    hvals = np.array([hn_diagnostic(a, v0, n, p) for a in alphas])
    above_l = np.nonzero(hvals > l)[0]
    lower = alphas[above_l[0]] if above_l.size else math.inf
    lower = min(lower, math.sqrt(logn))
    above_L = np.nonzero(hvals > L * logn**2)[0]
    upper = alphas[above_L[0]] if above_L.size else math.inf
    return float(lower), float(upper)


def export_eb_trace(trace: np.ndarray, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "objective"])
        for alpha, val in trace:
            w.writerow([format(alpha, ".17g"), format(val, ".17g")])
