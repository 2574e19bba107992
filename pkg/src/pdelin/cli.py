"""Command-line entry point: simulate, infer, experiment, basis-audit.

Configs are flat INI files with one section per concern; every numeric
accepts decimal or exponent notation.  Runs never read ambient randomness
(no --seed means seed 0) and finish by atomically writing a manifest that
reproduces the run.  Exit codes: 0 success, 2 config error, 3 domain
error, 4 acceptance-assertion failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__, bases, experiments, inference, observe, pdes
from .errors import (
    ConfigError,
    DomainError,
    InversionDomainError,
    PdelinError,
    PreconditionError,
)
from .experiments import (
    ExperimentConfig,
    build_system,
    default_problem_spec,
    truncation_default,
    truth_coefficients,
    truth_function,
)
from .inference import PriorSpec, SeqObservation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_ACCEPTANCE = 4


@dataclass
class RunManifest:
    command: str
    config: str
    seed: int
    artifact_version: str
    outputs: list
    wall_time_s: float

    def write(self, path: Path) -> None:
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)


def _load_config(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if not read:
        raise ConfigError(f"{path}: config file not found or unreadable")
    return parser


def _require(cfg, section: str, key: str) -> str:
    if not cfg.has_section(section):
        raise ConfigError(f"missing section [{section}]")
    if not cfg.has_option(section, key):
        raise ConfigError(f"[{section}]: missing required key '{key}'")
    return cfg.get(section, key)


def _get_float(cfg, section, key, default=None):
    if not cfg.has_option(section, key):
        if default is None:
            raise ConfigError(f"[{section}]: missing required key '{key}'")
        return default
    raw = cfg.get(section, key)
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse '{raw}'") from exc


def _get_int(cfg, section, key, default=None):
    val = _get_float(cfg, section, key, default=default)
    return int(round(val))


def _get_str(cfg, section, key, default=None):
    if not cfg.has_option(section, key):
        if default is None:
            raise ConfigError(f"[{section}]: missing required key '{key}'")
        return default
    return cfg.get(section, key)


def _float_list(raw: str) -> list:
    try:
        return [float(tok) for tok in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse number list '{raw}'") from exc


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _meta_sidecar(path: Path, payload: dict) -> None:
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(args) -> int:
    t0 = time.time()
    cfg = _load_config(args.config)
    family = _require(cfg, "simulate", "family")
    mode = _get_str(cfg, "simulate", "mode", "whitenoise")
    f0_name = _get_str(cfg, "simulate", "f0", "parabola")
    n = _get_float(cfg, "simulate", "n")
    d = _get_int(cfg, "simulate", "d", 1)
    seed = args.seed if args.seed is not None else _get_int(cfg, "simulate", "seed", 0)
    outdir = Path(args.out or _get_str(cfg, "simulate", "out", "."))
    outdir.mkdir(parents=True, exist_ok=True)

    spec = default_problem_spec(family, d)
    f0 = truth_function(f0_name, d)
    outputs = []
    if mode == "whitenoise":
        dim = experiments.smoothness_dim(family, d)
        N = truncation_default(n, dim, experiments.family_p(family, d))
        system = build_system(family, d, N)
        v0 = truth_coefficients(spec, f0, system)
        obs = observe.simulate_whitenoise(v0, system, n, seed)
        data_path = outdir / "seq.csv"
        obs.save(data_path)
        _meta_sidecar(
            data_path,
            {
                "kind": "sequence",
                "family": family,
                "d": d,
                "n": n,
                "N": N,
                "f0": f0_name,
                "seed": seed,
            },
        )
        truth_path = outdir / "truth_v0.csv"
        v0.save(truth_path)
        outputs = [str(data_path), str(truth_path)]
    elif mode == "design":
        m = _get_int(cfg, "simulate", "m")
        u_handle = _design_truth_handle(spec, f0)
        obs = observe.simulate_design(u_handle, m, d, seed)
        data_path = outdir / "design.csv"
        obs.save(data_path)
        _meta_sidecar(
            data_path,
            {
                "kind": "design",
                "family": family,
                "d": d,
                "m": m,
                "n": float(m**d),
                "f0": f0_name,
                "seed": seed,
            },
        )
        outputs = [str(data_path)]
    else:
        raise ConfigError(f"[simulate] mode: unknown mode '{mode}'")

    manifest = RunManifest(
        command="simulate",
        config=str(args.config),
        seed=seed,
        artifact_version=__version__,
        outputs=outputs,
        wall_time_s=round(time.time() - t0, 3),
    )
    manifest.write(outdir / "manifest.json")
    print(f"simulate: wrote {len(outputs)} data file(s) to {outdir}")
    return EXIT_OK


def _design_truth_handle(spec, f0):
    """u_f - g_tilde sampled at arbitrary points, for the design model."""
    axes = (np.linspace(0.0, 1.0, 4097),)
    u = pdes.forward_solve(spec, lambda p: f0(p), axes)
    gt = pdes.harmonic_extension(spec, axes)
    diff = u.values - gt.values

    def handle(pts):
        pts = np.atleast_2d(pts)
        return np.interp(pts[:, 0], axes[0], diff)

    return handle


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def _load_sequence_data(path: Path):
    with open(path.with_suffix(path.suffix + ".meta.json")) as fh:
        meta = json.load(fh)
    import csv as _csv

    if meta.get("kind") == "design":
        # project discrete observations onto the empirically orthonormal span
        m, d = int(meta["m"]), int(meta["d"])
        pts, ys = [], []
        with open(path, newline="") as fh:
            reader = _csv.DictReader(fh)
            expected = [f"x{j+1}" for j in range(d)] + ["y"]
            if reader.fieldnames != expected:
                raise ConfigError(
                    f"{path}: schema mismatch, need header {','.join(expected)}"
                )
            for row in reader:
                pts.append([float(row[f"x{j+1}"]) for j in range(d)])
                ys.append(float(row["y"]))
        dobs = observe.DesignObservation(
            points=np.array(pts), y=np.array(ys), m=m, d=d
        )
        system = bases.laplacian_system(d, m)
        return observe.design_to_seq(dobs, system), meta
    if meta.get("kind") != "sequence":
        raise ConfigError(f"{path}: expected sequence data, got {meta.get('kind')}")
    ys = []
    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames != ["ell", "ytilde"]:
            raise ConfigError(f"{path}: schema mismatch, need header ell,ytilde")
        for row in reader:
            ys.append(float(row["ytilde"]))
    if len(ys) != meta["N"]:
        raise ConfigError(f"{path}: row count {len(ys)} != meta N {meta['N']}")
    system = build_system(meta["family"], meta["d"], meta["N"])
    obs = SeqObservation(y=np.array(ys), n=float(meta["n"]), system=system)
    return obs, meta


def cmd_infer(args) -> int:
    t0 = time.time()
    data_path = Path(args.data)
    obs, meta = _load_sequence_data(data_path)
    outdir = Path(args.out or data_path.parent)
    outdir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    outputs = []

    modes = [m for m, on in
             [("fixed", args.alpha is not None), ("eb", args.eb), ("hb", args.hb)]
             if on]
    if len(modes) != 1:
        raise ConfigError("choose exactly one of --alpha, --eb, --hb")
    mode = modes[0]

    d = obs.system.d
    if mode == "fixed":
        alpha_val = float(args.alpha)
    elif mode == "eb":
        alpha_val = inference.empirical_bayes_alpha(obs)
        trace = inference.eb_trace(obs, 64)
        trace_path = outdir / "eb_trace.csv"
        inference.export_eb_trace(trace, trace_path)
        outputs.append(str(trace_path))
    else:
        grid = np.linspace(0.0, math.log(obs.n), 128)
        weights = inference.hb_alpha_posterior(obs, grid=grid)
        alpha_val = float(grid[int(np.argmax(weights))])
        wpath = outdir / "hb_weights.csv"
        with open(wpath, "w", newline="") as fh:
            import csv as _csv

            w = _csv.writer(fh)
            w.writerow(["alpha", "weight"])
            for a, wt in zip(grid, weights):
                w.writerow([format(a, ".17g"), format(wt, ".17g")])
        outputs.append(str(wpath))

    prior = PriorSpec(tau=1.0, alpha=alpha_val, d=d)
    post = inference.posterior(obs, prior)
    post_path = outdir / "posterior.csv"
    post.export_csv(post_path)
    outputs.append(str(post_path))

    # posterior bands of f through the solution operator
    spec = default_problem_spec(meta["family"], meta["d"])
    draws = inference.sample_matrix(post, args.draws, seed)
    if meta["family"] == "heat":
        side = 65
        axes = (np.linspace(0.0, 1.0, side), np.linspace(0.0, 1.0, side))
        F, excl, _ = experiments._f_draws_heat(spec, obs.system, draws, post.mean, axes)
    else:
        axes = (np.linspace(0.0, 1.0, 513),) if meta["d"] == 1 else pdes.unit_axes(65, 2)
        F, excl, _ = experiments._f_draws_sequence_family(
            spec, obs.system, draws, post.mean, axes
        )
    if args.delta0 is not None:
        # explicit floor: re-screen draws against it
        F, excl = _rescreen_draws(spec, obs.system, draws, axes, args.delta0)
    if F.shape[0] < 2:
        raise InversionDomainError(
            "all posterior draws violated the denominator floor",
            minimum=float(excl if np.isscalar(excl) else excl),
        )
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    q = (1.0 - args.level) / 2.0
    lo = np.quantile(F, q, axis=0)
    hi = np.quantile(F, 1.0 - q, axis=0)
    mean = F.mean(axis=0)
    band_path = outdir / "bands.csv"
    import csv as _csv

    with open(band_path, "w", newline="") as fh:
        w = _csv.writer(fh)
        head = [f"x{j+1}" for j in range(pts.shape[1])] if pts.shape[1] > 1 else ["x"]
        w.writerow(head + ["mean", "lo", "hi"])
        for r in range(pts.shape[0]):
            w.writerow(
                [format(c, ".17g") for c in pts[r]]
                + [format(mean[r], ".17g"), format(lo[r], ".17g"),
                   format(hi[r], ".17g")]
            )
    outputs.append(str(band_path))

    manifest = RunManifest(
        command="infer",
        config=str(args.data),
        seed=seed,
        artifact_version=__version__,
        outputs=outputs,
        wall_time_s=round(time.time() - t0, 3),
    )
    manifest.write(outdir / "manifest.json")
    print(f"infer: alpha={alpha_val:.6g} ({mode}), excluded draws {excl:.3g}")
    return EXIT_OK


def _rescreen_draws(spec, system, draws, axes, delta0):
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    H = system.eval_h(pts)
    V = draws @ H.T
    if spec.family == "darcy1d":
        denom = V
        hv = spec.h(pts)
        numer = pdes._cumtrapz(hv, axes[0])[None, :] + spec.f_anchor * V[:, :1]
        factor = 1.0
    else:
        G = system.eval_g(pts) * (system.signs * system.kappas)[None, :]
        gt = pdes.harmonic_extension(spec, axes)
        denom = draws @ G.T + gt.values.ravel()[None, :]
        numer = V
        factor = 2.0 if spec.family == "schrodinger" else 1.0
    mins = denom.min(axis=1)
    included = mins >= delta0
    if not included.any():
        raise InversionDomainError(
            f"all draws fall below the floor {delta0:g}",
            minimum=float(mins.max()),
        )
    F = numer[included] / (factor * denom[included])
    return F, 1.0 - float(included.mean())


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------

STUDIES = ("figure", "contraction", "coverage", "darcy-refinement")


def cmd_experiment(args) -> int:
    t0 = time.time()
    if args.study not in STUDIES:
        raise ConfigError(f"unknown study '{args.study}' (choose from {STUDIES})")
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else _get_int(cfg, "experiment", "seed", 0)
    outdir = args.out or _get_str(cfg, "experiment", "out", "runs")
    failures = []

    if args.study == "darcy-refinement":
        report = experiments.darcy_refinement_study(outdir=outdir)
        if not report["monotone"]:
            failures.append("max errors not monotonically decreasing")
        for dec in report["log2_decrements"]:
            if not (0.25 <= dec <= 1.5):
                failures.append(f"per-halving decrement {dec:.3g} outside [0.25, 1.5]")
    else:
        ecfg = ExperimentConfig(
            family=_get_str(cfg, "experiment", "family", "schrodinger"),
            d=_get_int(cfg, "experiment", "d", 1),
            f0=_get_str(cfg, "experiment", "f0", "smooth-series"),
            n_list=tuple(_float_list(_require(cfg, "experiment", "n"))),
            prior_mode=_get_str(cfg, "prior", "mode", "eb"),
            alpha=(
                _get_float(cfg, "prior", "alpha")
                if cfg.has_option("prior", "alpha")
                else None
            ),
            beta=_get_float(cfg, "experiment", "beta", 1.0),
            draws=_get_int(cfg, "experiment", "draws", 500),
            level=_get_float(cfg, "experiment", "level", 0.95),
            seed=seed,
            replications=_get_int(cfg, "experiment", "replications", 200),
            grid_points=_get_int(cfg, "experiment", "grid_points", 513),
            outdir=outdir,
            basis=_get_str(cfg, "experiment", "basis", "eigen"),
        )
        if args.study == "figure":
            summaries = experiments.run_figure_experiment(ecfg)
            min_cont = _get_float(cfg, "experiment", "min_containment", 0.0)
            max_excl = _get_float(cfg, "experiment", "max_excluded", 1.0)
            for s in summaries:
                if s.containment < min_cont:
                    failures.append(
                        f"n={s.n:g}: containment {s.containment:.4f} < {min_cont}"
                    )
                if s.excluded_fraction > max_excl:
                    failures.append(
                        f"n={s.n:g}: excluded {s.excluded_fraction:.4f} > {max_excl}"
                    )
        elif args.study == "contraction":
            report = experiments.contraction_study(ecfg)
            lo = _get_float(cfg, "experiment", "slope_min", -float("inf"))
            hi = _get_float(cfg, "experiment", "slope_max", float("inf"))
            if not (lo <= report["slope"] <= hi):
                failures.append(
                    f"slope {report['slope']:.4f} outside [{lo}, {hi}]"
                )
        else:  # coverage
            report = experiments.coverage_study(ecfg)
            min_cov = _get_float(cfg, "experiment", "min_coverage", 0.0)
            first = next(iter(report["table"].values()))
            if first["coverage_c1"] < min_cov:
                failures.append(
                    f"coverage {first['coverage_c1']:.3f} < {min_cov}"
                )

    manifest = RunManifest(
        command=f"experiment:{args.study}",
        config=str(args.config),
        seed=seed,
        artifact_version=__version__,
        outputs=[str(outdir)],
        wall_time_s=round(time.time() - t0, 3),
    )
    Path(outdir).mkdir(parents=True, exist_ok=True)
    manifest.write(Path(outdir) / "manifest.json")
    if failures:
        for f in failures:
            print(f"FAILED: {f}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    print(f"experiment {args.study}: all configured assertions passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# basis-audit
# ---------------------------------------------------------------------------


def cmd_basis_audit(args) -> int:
    family = args.family
    if family == "heat":
        system, _ = bases.heat_eigensystem(args.d, args.max_index, args.max_index)
    elif family == "schrodinger":
        system = bases.laplacian_system(args.d, args.max_index)
    elif family == "volterra":
        system = bases.volterra_system(args.max_index)
    elif family == "darcy1d":
        system = bases.darcy1d_system(args.max_index, args.boundary)
    else:
        raise ConfigError(f"unknown family '{family}'")
    out = Path(args.out or f"{family}_basis.csv")
    system.export_csv(out)
    print(f"basis-audit: wrote {system.truncation} rows to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pdelin",
        description="Bayesian linearized inversion for PDE coefficient recovery",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate synthetic observations")
    p_sim.add_argument("config")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_inf = sub.add_parser("infer", help="posterior and credible bands from data")
    p_inf.add_argument("data", help="sequence CSV written by simulate")
    p_inf.add_argument("--alpha", type=float, default=None)
    p_inf.add_argument("--eb", action="store_true")
    p_inf.add_argument("--hb", action="store_true")
    p_inf.add_argument("--draws", type=int, default=500)
    p_inf.add_argument("--level", type=float, default=0.95)
    p_inf.add_argument("--delta0", type=float, default=None)
    p_inf.add_argument("--seed", type=int, default=None)
    p_inf.add_argument("--out", default=None)
    p_inf.set_defaults(func=cmd_infer)

    p_exp = sub.add_parser("experiment", help="run a configured study")
    p_exp.add_argument("study", help="|".join(STUDIES))
    p_exp.add_argument("config")
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("--out", default=None)
    p_exp.set_defaults(func=cmd_experiment)

    p_aud = sub.add_parser("basis-audit", help="dump a singular-system table")
    p_aud.add_argument("family")
    p_aud.add_argument("--d", type=int, default=1)
    p_aud.add_argument("--max-index", type=int, default=20)
    p_aud.add_argument("--boundary", default="dirichlet")
    p_aud.add_argument("--out", default=None)
    p_aud.set_defaults(func=cmd_basis_audit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InversionDomainError, DomainError, PreconditionError) as exc:
        extra = ""
        if isinstance(exc, InversionDomainError) and exc.minimum is not None:
            extra = f" (offending minimum {exc.minimum:.6g})"
        print(f"domain error: {exc}{extra}", file=sys.stderr)
        return EXIT_DOMAIN
    except PdelinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
