"""End-to-end studies: credible-band figures, contraction slopes, coverage.

Each study is deterministic given its configuration: every replication
derives its seed from the base seed and the replication index, and all CSV
output uses fixed float formatting so reruns are byte-identical.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import bases, inference, observe, pdes
from .errors import ConfigError, DimensionError, DomainError
from .inference import PriorSpec, SeqObservation
from .observe import GridFunction
from .pdes import ProblemSpec
from .seqspace import CoeffSeq

TRUTH_NAMES = ("smooth-series", "bump", "parabola", "product-2d")


def worker_count() -> int:
    """Parallelism cap from PDELIN_THREADS (default 1, serial)."""
    try:
        return max(1, int(os.environ.get("PDELIN_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    w = worker_count()
    items = list(items)
    if w <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with concurrent.futures.ProcessPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * w))))


def truncation_default(n: float, d: int, p: float, alpha_min: float = 0.5,
                       cap: int = 2**17) -> int:
    """Default series cutoff keeping truncation bias below the noise level."""
    N = math.ceil(8.0 * n ** (d / (2 * alpha_min + 2 * p + d)))
    return int(min(max(N, 8), cap))


def build_system(family: str, d: int, N: int) -> bases.SvdSystem:
    """Eigen system of the family's operator, truncated to N ordered triples."""
    if family == "volterra":
        return bases.volterra_system(N)
    if family == "darcy1d":
        return bases.darcy1d_system(N)
    if family == "schrodinger":
        if d == 1:
            return bases.laplacian_system(1, N)
        M = int(math.ceil(1.2 * math.sqrt(N))) + 1
        return bases.laplacian_system(d, M).truncate(N)
    if family == "heat":
        # anisotropic spectrum ~ 1/(k^2 + pi^2 |i|^4 / 4): the first N
        # ordered pairs reach time indices ~ N^(2/3) but only space
        # indices ~ N^(1/(3d)), so enumerate a matching box
        Mt = int(math.ceil(2.0 * N ** (2.0 / 3.0))) + 4
        Ms = int(math.ceil(2.0 * N ** (1.0 / (3.0 * d)))) + 4
        system, _ = bases.heat_eigensystem(d, Ms, Mt)
        if system.truncation < N:
            raise DimensionError("heat enumeration too small for requested N")
        return system.truncate(N)
    raise ConfigError(f"no sequence system for family '{family}'")


# ---------------------------------------------------------------------------
# named ground truths
# ---------------------------------------------------------------------------


def truth_function(name: str, d: int = 1) -> Callable:
    """Named true coefficients f0 used by the figure experiments."""
    if name == "smooth-series":
        idx = np.arange(1, 2001.0)
        coeffs = idx ** (-1.5) * np.sin(idx)

        def f0(pts):
            x = np.atleast_2d(pts)[:, 0]
            return math.sqrt(2.0) * (
                np.sin(np.outer(x, idx * math.pi)) @ coeffs
            )

        return f0
    if name == "bump":
        return lambda pts: (
            1.0
            - 4.0 * (np.atleast_2d(pts)[:, 0] - 0.5) ** 2
            - 0.75 * np.exp(-500.0 * (np.atleast_2d(pts)[:, 0] - 0.5) ** 2)
        )
    if name == "parabola":
        return lambda pts: 1.0 + 4.0 * (np.atleast_2d(pts)[:, 0] - 0.5) ** 2
    if name == "product-2d":

        def f0(pts):
            pts = np.atleast_2d(pts)
            x, y = pts[:, 0], pts[:, 1]
            return (
                2.0 * x * (x - 1.0) * y * (y - 1.0)
                * (2.0 + np.sin(3 * math.pi * x) * np.sin(math.pi * y))
            )

        return f0
    raise ConfigError(f"unknown truth '{name}' (choose from {TRUTH_NAMES})")


def boundary_9_2d(pts):
    """The two-dimensional boundary condition used with product-2d."""
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    return 3.0 + x * y**2 + 2.0 * y * np.sin(2 * math.pi * x) + x * np.cos(
        3 * math.pi * y
    )


def default_problem_spec(family: str, d: int = 1) -> ProblemSpec:
    if family == "schrodinger" and d == 1:
        return ProblemSpec(family="schrodinger", d=1, g=(1.0, 2.0))
    if family == "schrodinger" and d == 2:
        return ProblemSpec(family="schrodinger", d=2, g=boundary_9_2d)
    if family == "volterra":
        return ProblemSpec(family="volterra", d=1, g=2.0)
    if family == "darcy1d":
        return ProblemSpec(
            family="darcy1d", d=1, g=(0.0, 1.0),
            h=lambda p: np.cos(np.atleast_2d(p)[:, 0]), f_anchor=1.25,
        )
    if family == "heat" and d == 1:
        return ProblemSpec(
            family="heat", d=1,
            g=(lambda t: 1.0 + 0.0 * t, lambda t: 1.0 + 0.0 * t),
            u0=lambda x: 1.0 + 0.0 * x,
        )
    raise ConfigError(f"no default problem spec for '{family}' d={d}")


def truth_coefficients(
    spec: ProblemSpec, f0: Callable, system: bases.SvdSystem,
    quad_points: int = 2**14 + 1,
) -> CoeffSeq:
    """Coefficients of v0 = L u_{f0} by quadrature against the basis.

    v0 is assembled without numerical differentiation: the PDE gives
    L u = c(f, u) pointwise (2 f u, f u, u' = f u, or f via the flow
    identity), so only the forward solution enters.
    """
    d = spec.d
    if spec.family == "heat":
        if d != 1:
            raise ConfigError("heat truth path supports one spatial dimension")
        side = 257
        axes = (np.linspace(0.0, 1.0, side), np.linspace(0.0, 1.0, side))
        u = pdes.forward_solve(spec, lambda p: f0(p), axes)
        grid = bases.trapezoid_descriptor(axes)
        v_vals = f0(grid.points) * u.values.ravel()
        H = system.eval_h(grid.points)
        coeffs = H.T @ (v_vals * grid.weights)
        return CoeffSeq.from_array(coeffs, basis_id=system.basis_id, d=system.d)
    if d == 1:
        axes = (np.linspace(0.0, 1.0, quad_points),)
        x = axes[0]
        u = pdes.forward_solve(spec, lambda p: f0(p), axes)
        fv = f0(x[:, None])
        if spec.family == "schrodinger":
            v_vals = 2.0 * fv * u.values
        elif spec.family == "volterra":
            v_vals = fv * u.values
        elif spec.family == "darcy1d":
            v_vals = u.meta["uprime"]
        else:
            raise ConfigError(f"no truth path for family '{spec.family}'")
        w = np.full(x.shape, x[1] - x[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        H = system.eval_h(x)
        coeffs = H.T @ (v_vals * w)
        return CoeffSeq.from_array(coeffs, basis_id=system.basis_id, d=system.d)
    if d == 2 and spec.family == "schrodinger":
        side = 513
        axes = pdes.unit_axes(side, 2)
        u = pdes.forward_solve(spec, lambda p: f0(p), axes)
        X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        v_vals = 2.0 * f0(pts) * u.values.ravel()
        grid = bases.trapezoid_descriptor(axes)
        H = system.eval_h(grid.points)
        coeffs = H.T @ (v_vals * grid.weights)
        return CoeffSeq.from_array(coeffs, basis_id=system.basis_id, d=system.d)
    raise ConfigError(f"no truth path for family '{spec.family}' d={d}")


# ---------------------------------------------------------------------------
# configuration and band summaries
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    family: str = "schrodinger"
    d: int = 1
    f0: str = "smooth-series"
    n_list: Sequence[float] = (1e8,)
    prior_mode: str = "eb"  # eb | hb | fixed
    alpha: Optional[float] = None  # required for fixed
    beta: float = 1.0  # truth smoothness used by the studies
    p: float = 1.0
    draws: int = 500
    level: float = 0.95
    seed: int = 0
    replications: int = 200
    grid_points: int = 513
    outdir: Optional[str] = None
    write_draws: bool = False
    basis: str = "eigen"

    def __post_init__(self):
        if any(n <= 1 for n in self.n_list):
            raise ConfigError("n values must exceed 1")
        if self.draws < 2:
            raise ConfigError("draws must be >= 2")
        if not (0.0 < self.level < 1.0):
            raise ConfigError("level must be in (0, 1)")
        if self.prior_mode not in ("eb", "hb", "fixed"):
            raise ConfigError("prior mode must be eb, hb or fixed")
        if self.prior_mode == "fixed" and self.alpha is None:
            raise ConfigError("fixed prior mode needs alpha")
        if self.basis != "eigen":
            raise ConfigError(f"basis '{self.basis}' unavailable; only the "
                              "eigen basis is implemented")


@dataclass
class BandSummary:
    """Pointwise posterior band against the truth for one n."""

    points: np.ndarray
    truth: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n: float
    alpha_mode: str
    alpha_value: float
    excluded_fraction: float
    containment: float

    def interior_mask(self) -> np.ndarray:
        pts = np.atleast_2d(self.points)
        eps = 1e-9
        lo_ok = np.all(pts > eps, axis=1)
        hi_ok = np.all(pts < 1.0 - eps, axis=1)
        return lo_ok & hi_ok


def _derived_seed(base: int, *indices: int) -> int:
    s = int(base)
    for k, idx in enumerate(indices):
        s = (s * 1_000_003 + idx + 17 * (k + 1)) % (2**63 - 1)
    return s


def _select_alpha(cfg: ExperimentConfig, obs: SeqObservation, rng):
    """Returns (alpha draws per sample or scalar, label value)."""
    if cfg.prior_mode == "fixed":
        return float(cfg.alpha), float(cfg.alpha)
    if cfg.prior_mode == "eb":
        ahat = inference.empirical_bayes_alpha(obs)
        return ahat, ahat
    grid = np.linspace(0.0, math.log(obs.n), 128)
    weights = inference.hb_alpha_posterior(obs, grid=grid)
    picks = rng.choice(grid.shape[0], size=cfg.draws, p=weights)
    mode = float(grid[int(np.argmax(weights))])
    return grid[picks], mode


def _draw_v_matrix(cfg, obs, alpha_sel, seed) -> tuple:
    """(draws, posterior-mean) of v under the selected smoothness."""
    d = obs.system.d
    if np.isscalar(alpha_sel):
        prior = PriorSpec(tau=1.0, alpha=float(alpha_sel), d=d)
        post = inference.posterior(obs, prior)
        draws = inference.sample_matrix(post, cfg.draws, seed)
        return draws, post.mean
    # hierarchical: alpha varies per draw
    rng = np.random.default_rng(seed)
    draws = np.empty((cfg.draws, obs.y.shape[0]))
    mean_acc = np.zeros(obs.y.shape[0])
    uniq, counts = np.unique(alpha_sel, return_counts=True)
    pos = 0
    for a, cnt in zip(uniq, counts):
        post = inference.posterior(obs, PriorSpec(tau=1.0, alpha=float(a), d=d))
        z = rng.standard_normal((cnt, post.mean.shape[0]))
        draws[pos : pos + cnt] = post.mean[None, :] + z * np.sqrt(post.var)[None, :]
        mean_acc += cnt * post.mean
        pos += cnt
    return draws, mean_acc / cfg.draws


def _f_draws_sequence_family(spec, system, draws, v_mean, axes):
    """Map v draws through e(v) for families with closed-form K synthesis.

    Returns (f_matrix over included draws, excluded_fraction, f at mean).
    The denominator floor is min(K vhat + g_tilde)/4 at the posterior mean;
    draws dipping below it are excluded.
    """
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    H = system.eval_h(pts)
    V = draws @ H.T  # (draws, npts)
    v_mean_vals = H @ v_mean
    if spec.family == "darcy1d":
        x = axes[0]
        hv = spec.h(pts)
        Hsrc = pdes._cumtrapz(hv, x)
        denom = V
        denom_mean = v_mean_vals
        numer = Hsrc[None, :] + spec.f_anchor * V[:, :1]
        numer_mean = Hsrc + spec.f_anchor * v_mean_vals[0]
        factor = 1.0
    else:
        G = system.eval_g(pts) * (system.signs * system.kappas)[None, :]
        KV = draws @ G.T
        gt = pdes.harmonic_extension(spec, axes)
        gtv = gt.values.ravel()
        denom = KV + gtv[None, :]
        denom_mean = (G @ v_mean) + gtv
        numer = V
        numer_mean = v_mean_vals
        factor = 2.0 if spec.family == "schrodinger" else 1.0
    delta0 = float(denom_mean.min()) / 4.0
    mins = denom.min(axis=1)
    included = mins >= delta0
    excluded_fraction = 1.0 - float(included.mean())
    F = numer[included] / (factor * denom[included])
    f_mean = numer_mean / (factor * denom_mean)
    return F, excluded_fraction, f_mean


def _f_draws_heat(spec, system, draws, v_mean, axes):
    """Heat path: K has no closed-form left system, so march per draw."""
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    H = system.eval_h(pts)
    shape = tuple(a.shape[0] for a in axes)
    gt = pdes.harmonic_extension(spec, axes)

    def denom_of(vec):
        v_grid = GridFunction(values=(H @ vec).reshape(shape), axes=axes)
        Kv = pdes.apply_K_grid(spec, v_grid)
        return Kv.values + gt.values

    delta0 = float(denom_of(v_mean).min()) / 4.0
    rows = []
    excluded = 0
    for vec in draws:
        den = denom_of(vec)
        if den.min() < delta0:
            excluded += 1
            continue
        rows.append(((H @ vec).reshape(shape) / den).ravel())
    f_mean = (H @ v_mean).reshape(shape) / denom_of(v_mean)
    return np.array(rows), excluded / draws.shape[0], f_mean.ravel()


def run_figure_experiment(cfg: ExperimentConfig) -> list:
    """Simulate, infer, push draws through e, and summarize pointwise bands."""
    spec = default_problem_spec(cfg.family, cfg.d)
    f0 = truth_function(cfg.f0, cfg.d)
    summaries = []
    for k, n in enumerate(cfg.n_list):
        N = truncation_default(n, _dim_smooth(cfg), _p_of(cfg))
        system = build_system(cfg.family, cfg.d, N)
        v0 = truth_coefficients(spec, f0, system)
        obs = observe.simulate_whitenoise(v0, system, n, _derived_seed(cfg.seed, k, 0))
        rng = np.random.default_rng(_derived_seed(cfg.seed, k, 1))
        alpha_sel, alpha_val = _select_alpha(cfg, obs, rng)
        draws, v_mean = _draw_v_matrix(cfg, obs, alpha_sel,
                                       _derived_seed(cfg.seed, k, 2))
        if cfg.family == "heat":
            side = min(cfg.grid_points, 65)
            axes = (np.linspace(0.0, 1.0, side), np.linspace(0.0, 1.0, side))
            F, excl, _ = _f_draws_heat(spec, system, draws, v_mean, axes)
        elif cfg.d == 1:
            axes = (np.linspace(0.0, 1.0, cfg.grid_points),)
            F, excl, _ = _f_draws_sequence_family(spec, system, draws, v_mean, axes)
        else:
            side = min(cfg.grid_points, 65)
            axes = pdes.unit_axes(side, cfg.d)
            F, excl, _ = _f_draws_sequence_family(spec, system, draws, v_mean, axes)
        if F.shape[0] < 2:
            raise DomainError(
                f"only {F.shape[0]} draws survived the denominator floor at n={n}"
            )
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        truth_vals = f0(pts)
        q_lo = (1.0 - cfg.level) / 2.0
        lo = np.quantile(F, q_lo, axis=0)
        hi = np.quantile(F, 1.0 - q_lo, axis=0)
        mean = F.mean(axis=0)
        summary = BandSummary(
            points=pts,
            truth=truth_vals,
            mean=mean,
            lo=lo,
            hi=hi,
            n=float(n),
            alpha_mode=cfg.prior_mode,
            alpha_value=float(alpha_val),
            excluded_fraction=excl,
            containment=0.0,
        )
        inter = summary.interior_mask()
        contained = (truth_vals >= lo) & (truth_vals <= hi)
        summary.containment = float(contained[inter].mean())
        summaries.append(summary)
        if cfg.outdir is not None:
            _write_band_outputs(cfg, summary, F if cfg.write_draws else None)
    if cfg.outdir is not None:
        _write_figure_summary(cfg, summaries)
    return summaries


def smoothness_dim(family: str, d: int) -> int:
    """Dimension entering the smoothness weights (time axis counts)."""
    return d + 1 if family == "heat" else d


def family_p(family: str, d: int) -> float:
    """Ill-posedness degree of the family's operator."""
    if family == "schrodinger":
        return 2.0
    if family == "heat":
        return 2.0 * (d + 1) / (d + 2)
    return 1.0


def _dim_smooth(cfg: ExperimentConfig) -> int:
    return smoothness_dim(cfg.family, cfg.d)


def _p_of(cfg: ExperimentConfig) -> float:
    return family_p(cfg.family, cfg.d)


# ---------------------------------------------------------------------------
# contraction-rate slope study
# ---------------------------------------------------------------------------


def _contraction_rep(args) -> float:
    (family, d, N, n, alpha, beta, draws, grid_points, seed) = args
    system = build_system(family, d, N)
    ell = np.arange(1, N + 1, dtype=float)
    v0 = CoeffSeq.from_array(
        ell ** (-(beta + 0.51)), basis_id=system.basis_id, d=system.d
    )
    spec = default_problem_spec(family, d)
    obs = observe.simulate_whitenoise(v0, system, n, seed)
    prior = PriorSpec(tau=1.0, alpha=alpha, d=system.d)
    post = inference.posterior(obs, prior)
    draws_m = inference.sample_matrix(post, draws, _derived_seed(seed, 7))
    axes = (np.linspace(0.0, 1.0, grid_points),)
    F, excl, _ = _f_draws_sequence_family(spec, system, draws_m, post.mean, axes)
    f_bar = F.mean(axis=0)
    f0_vals = _f_of_truth(spec, system, v0, axes)
    x = axes[0]
    w = np.full(x.shape, x[1] - x[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return float(np.sqrt(np.sum((f_bar - f0_vals) ** 2 * w)))


def _f_of_truth(spec, system, v0, axes):
    f0_grid = pdes.solution_operator(spec, v0, system=system, axes=axes)
    return f0_grid.values.ravel()


def contraction_study(cfg: ExperimentConfig) -> dict:
    """Slope of log L2 error of the posterior mean of f against log n."""
    ns = list(cfg.n_list)
    if len(ns) < 2:
        raise ConfigError("contraction study needs at least two n values")
    if cfg.prior_mode != "fixed":
        raise ConfigError("contraction study runs with a fixed alpha")
    N_max = truncation_default(max(ns), _dim_smooth(cfg), _p_of(cfg))
    draws = min(cfg.draws, 64)
    jobs = []
    for k, n in enumerate(ns):
        N = truncation_default(n, _dim_smooth(cfg), _p_of(cfg))
        for rep in range(cfg.replications):
            jobs.append(
                (cfg.family, cfg.d, N, float(n), float(cfg.alpha), cfg.beta,
                 draws, min(cfg.grid_points, 257),
                 _derived_seed(cfg.seed, k, rep))
            )
    errs = _pmap(_contraction_rep, jobs)
    errs = np.array(errs).reshape(len(ns), cfg.replications)
    mean_err = errs.mean(axis=1)
    logn = np.log(np.array(ns, dtype=float))
    slope = float(np.polyfit(logn, np.log(mean_err), 1)[0])
    # bootstrap CI over replications
    rng = np.random.default_rng(_derived_seed(cfg.seed, 999))
    boots = []
    for _ in range(200):
        pick = rng.integers(0, cfg.replications, size=cfg.replications)
        m = errs[:, pick].mean(axis=1)
        boots.append(float(np.polyfit(logn, np.log(m), 1)[0]))
    lo, hi = np.percentile(boots, [2.5, 97.5])
    theory = -(min(cfg.alpha, cfg.beta)) / (
        _dim_smooth(cfg) + 2 * cfg.alpha + 2 * _p_of(cfg)
    )
    report = {
        "n": [float(n) for n in ns],
        "mean_error": [float(e) for e in mean_err],
        "slope": slope,
        "slope_ci": [float(lo), float(hi)],
        "theory_exponent": float(theory),
        "replications": cfg.replications,
    }
    if cfg.outdir is not None:
        _write_study_outputs(cfg, "contraction", report,
                             columns=("n", "mean_error"))
    return report


# ---------------------------------------------------------------------------
# coverage study
# ---------------------------------------------------------------------------


def _coverage_rep(args) -> tuple:
    (family, d, N, n, alpha, beta, seed) = args
    system = build_system(family, d, N)
    ell = np.arange(1, N + 1, dtype=float)
    v0 = CoeffSeq.from_array(
        ell ** (-(beta + 0.51)), basis_id=system.basis_id, d=system.d
    )
    obs = observe.simulate_whitenoise(v0, system, n, seed)
    post = inference.posterior(obs, PriorSpec(tau=1.0, alpha=alpha, d=system.d))
    radius = inference.credible_radius(
        post, 0.95, mc_draws=2000, seed=_derived_seed(seed, 3)
    )
    dev = float(np.linalg.norm(post.mean - v0.coeffs))
    return dev, radius


def coverage_study(cfg: ExperimentConfig, alphas: Optional[Sequence[float]] = None,
                   inflations: Sequence[float] = (1.0, 2.0)) -> dict:
    """Frequentist coverage of the credible ball across smoothness regimes."""
    if len(cfg.n_list) != 1:
        raise ConfigError("coverage study runs at a single n")
    n = float(cfg.n_list[0])
    if alphas is None:
        base = cfg.alpha if cfg.alpha is not None else 0.5
        alphas = (base, 2.0 * cfg.beta)  # undersmoothing and oversmoothing
    N = truncation_default(n, _dim_smooth(cfg), _p_of(cfg))
    table = {}
    for a_idx, alpha in enumerate(alphas):
        jobs = [
            (cfg.family, cfg.d, N, n, float(alpha), cfg.beta,
             _derived_seed(cfg.seed, a_idx, rep))
            for rep in range(cfg.replications)
        ]
        results = _pmap(_coverage_rep, jobs)
        devs = np.array([r[0] for r in results])
        radii = np.array([r[1] for r in results])
        entry = {
            "alpha": float(alpha),
            "mean_radius": float(radii.mean()),
            "mean_deviation": float(devs.mean()),
        }
        for c in inflations:
            entry[f"coverage_c{c:g}"] = float((devs <= c * radii).mean())
        table[f"alpha={alpha:g}"] = entry
    report = {
        "n": n,
        "beta": cfg.beta,
        "replications": cfg.replications,
        "table": table,
    }
    if cfg.outdir is not None:
        _write_study_outputs(cfg, "coverage", report, columns=None)
    return report


# ---------------------------------------------------------------------------
# Darcy refinement study
# ---------------------------------------------------------------------------


def darcy_refinement_study(
    deltas: Sequence[float] = (1 / 32, 1 / 64, 1 / 128),
    outdir: Optional[str] = None,
) -> dict:
    """Manufactured-field refinement of the characteristics inversion."""
    errors = []
    for delta in deltas:
        M = round(1.0 / delta)
        x = np.linspace(0.0, 1.0, M + 1)
        X, Y = np.meshgrid(x, x, indexing="ij")
        u = (X - 0.45) ** 2 + (Y - 0.55) ** 2
        gx, gy = 2 * (X - 0.45), 2 * (Y - 0.55)
        lap = np.full_like(u, 4.0)
        f = 1.0 + 0.5 * X + 0.25 * Y
        rhs = 0.5 * gx + 0.25 * gy + f * lap
        dg = pdes.darcy_grid_from_fields(delta, u, (gx, gy), lap, rhs)
        alpha = pdes.darcy_characteristics(dg)
        errors.append(float(np.abs(alpha - f).max()))
    decs = [
        math.log2(errors[i] / errors[i + 1]) for i in range(len(errors) - 1)
    ]
    report = {
        "deltas": [float(d) for d in deltas],
        "max_errors": errors,
        "log2_decrements": decs,
        "monotone": bool(all(a > b for a, b in zip(errors, errors[1:]))),
    }
    if outdir is not None:
        path = Path(outdir)
        path.mkdir(parents=True, exist_ok=True)
        with open(path / "refinement.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delta", "max_error"])
            for d, e in zip(deltas, errors):
                w.writerow([format(d, ".17g"), format(e, ".17g")])
        with open(path / "summary.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


# ---------------------------------------------------------------------------
# output writers
# ---------------------------------------------------------------------------


def _n_dir(cfg: ExperimentConfig, n: float) -> Path:
    out = Path(cfg.outdir) / f"n_{n:.6g}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_band_outputs(cfg, summary: BandSummary, F: Optional[np.ndarray]):
    out = _n_dir(cfg, summary.n)
    pts = np.atleast_2d(summary.points)
    dcols = pts.shape[1]
    with open(out / "bands.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"x{j+1}" for j in range(dcols)] if dcols > 1 else ["x"]
        w.writerow(header + ["truth", "mean", "lo", "hi"])
        for r in range(pts.shape[0]):
            row = [format(c, ".17g") for c in pts[r]]
            row += [
                format(summary.truth[r], ".17g"),
                format(summary.mean[r], ".17g"),
                format(summary.lo[r], ".17g"),
                format(summary.hi[r], ".17g"),
            ]
            w.writerow(row)
    if F is not None:
        with open(out / "draws.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            for row in F:
                w.writerow([format(c, ".17g") for c in row])


def _write_figure_summary(cfg, summaries: list):
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "family": cfg.family,
        "f0": cfg.f0,
        "prior_mode": cfg.prior_mode,
        "level": cfg.level,
        "seed": cfg.seed,
        "per_n": [
            {
                "n": s.n,
                "alpha": s.alpha_value,
                "containment": s.containment,
                "excluded_fraction": s.excluded_fraction,
            }
            for s in summaries
        ],
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _plot_bands(cfg, summaries, out / "plot.svg")


def _write_study_outputs(cfg, study: str, report: dict, columns):
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if columns is not None:
        with open(out / f"{study}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for row in zip(*(report[c] for c in columns)):
                w.writerow([format(v, ".17g") for v in row])


def _plot_bands(cfg, summaries, path):
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "pdelin"
    import matplotlib.pyplot as plt

    npanels = len(summaries)
    fig, axs = plt.subplots(npanels, 1, figsize=(6, 2.6 * npanels), squeeze=False)
    for ax, s in zip(axs[:, 0], summaries):
        pts = np.atleast_2d(s.points)
        if pts.shape[1] == 1:
            x = pts[:, 0]
            ax.plot(x, s.truth, "k-", lw=1.2, label="truth")
            ax.plot(x, s.mean, "r-", lw=1.0, label="posterior mean")
            ax.plot(x, s.lo, "g-", lw=0.8)
            ax.plot(x, s.hi, "g-", lw=0.8, label="band")
            ax.legend(loc="best", fontsize=7)
        else:
            side = int(round(math.sqrt(pts.shape[0])))
            ax.imshow(
                s.mean.reshape(side, side).T,
                origin="lower",
                extent=(0, 1, 0, 1),
                aspect="auto",
            )
        ax.set_title(f"n = {s.n:g} (alpha = {s.alpha_value:.3g})", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
