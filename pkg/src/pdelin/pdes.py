"""Forward solvers, the smoothing operator K, and the coefficient recovery maps.

Five problem families share one skeleton: a linear differential operator L
with inverse K under homogeneous conditions, a boundary lift g_tilde with
L g_tilde = 0, and a pointwise (or algorithmic) solution operator e with
f = e(L u_f).  Finite-difference stencils here deliberately match the
forward solvers, so the discrete identity u = K(Lu) + g_tilde holds to
solver tolerance and round-trip inversion degrades only with the true
discretization error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bases import GridDescriptor, SvdSystem
from .errors import (
    ConfigError,
    DimensionError,
    InversionDomainError,
    NumericalError,
    PreconditionError,
)
from .observe import GridFunction
from .seqspace import CoeffSeq

FAMILIES = ("schrodinger", "heat", "darcy1d", "darcyNd", "volterra")


@dataclass
class ProblemSpec:
    """Family tag plus the boundary/initial data the family needs.

    g: schrodinger/darcy1d d=1 -> (g(0), g(1)); volterra -> g(0) > 0;
    schrodinger/darcyNd d=2 -> callable on boundary points (n, 2);
    heat -> pair of callables (g_left(t), g_right(t)) with u0(x) separate.
    h is the source term for the flow families; f_anchor is the pinned
    value f(0) of the one-dimensional flow problem.
    """

    family: str
    d: int = 1
    g: object = None
    h: Optional[Callable] = None
    u0: Optional[Callable] = None
    f_anchor: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family '{self.family}'")
        if self.family == "volterra":
            if not np.isscalar(self.g) or float(self.g) <= 0:
                raise ConfigError("volterra needs a positive constant g(0)")
        elif self.family == "heat":
            if self.u0 is None or self.g is None:
                raise ConfigError("heat needs boundary data g and initial data u0")
        elif self.family == "darcy1d":
            if self.g is None or len(self.g) != 2:
                raise ConfigError("darcy1d needs boundary values (g(0), g(1))")
            if self.h is None:
                raise ConfigError("darcy1d needs a source h")
        elif self.family in ("schrodinger", "darcyNd"):
            if self.d == 1:
                if self.g is None or len(self.g) != 2:
                    raise ConfigError(f"{self.family} d=1 needs (g(0), g(1))")
            elif self.g is None or not callable(self.g):
                raise ConfigError(f"{self.family} d={self.d} needs boundary callable")
            if self.family == "darcyNd" and self.h is None:
                raise ConfigError("darcyNd needs a source h")


def unit_axes(npts: int, d: int) -> tuple:
    """Closed uniform axes over [0,1]^d with npts nodes per axis."""
    if npts < 3:
        raise DimensionError("grid needs at least 3 points per axis")
    return tuple(np.linspace(0.0, 1.0, npts) for _ in range(d))


def _values_on(f, axes) -> np.ndarray:
    """Sample a callable or reuse a GridFunction on the given axes."""
    if isinstance(f, GridFunction):
        if len(f.axes) != len(axes) or any(
            a.shape != b.shape or not np.allclose(a, b) for a, b in zip(f.axes, axes)
        ):
            raise DimensionError("grid function lives on a different grid")
        return f.values
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vals = np.asarray(f(pts), dtype=float).reshape([a.shape[0] for a in axes])
    return vals


# ---------------------------------------------------------------------------
# harmonic extension  (L g_tilde = 0, g_tilde = g on the boundary)
# ---------------------------------------------------------------------------


def _laplace_dirichlet_2d(axes, boundary_vals: np.ndarray,
                          rhs: Optional[np.ndarray] = None,
                          potential: Optional[np.ndarray] = None,
                          half: bool = False) -> np.ndarray:
    """Solve (c Lap - potential) u = rhs with Dirichlet data; c = 1/2 if half.

    boundary_vals is a full-grid array whose boundary ring is used; rhs and
    potential are full-grid arrays sampled at interior nodes.
    """
    x, y = axes
    nx, ny = x.shape[0], y.shape[0]
    hx, hy = x[1] - x[0], y[1] - y[0]
    c = 0.5 if half else 1.0
    mx, my = nx - 2, ny - 2
    ax = c / hx**2
    ay = c / hy**2
    main = np.full(mx * my, -2.0 * (ax + ay))
    if potential is not None:
        main = main - potential[1:-1, 1:-1].ravel()
    diags_x = np.full(mx * my - my, ax)
    diags_y = np.full(mx * my - 1, ay)
    diags_y[my - 1 :: my] = 0.0
    A = sp.diags(
        [main, diags_y, diags_y, diags_x, diags_x],
        [0, 1, -1, my, -my],
        format="csc",
    )
    b = np.zeros((mx, my)) if rhs is None else rhs[1:-1, 1:-1].copy()
    b[0, :] -= ax * boundary_vals[0, 1:-1]
    b[-1, :] -= ax * boundary_vals[-1, 1:-1]
    b[:, 0] -= ay * boundary_vals[1:-1, 0]
    b[:, -1] -= ay * boundary_vals[1:-1, -1]
    try:
        sol = spla.spsolve(A, b.ravel())
    except Exception as exc:  # umfpack/superlu raise various singularity errors
        raise NumericalError(f"elliptic solve failed: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise NumericalError("elliptic solve produced non-finite values")
    out = boundary_vals.copy()
    out[1:-1, 1:-1] = sol.reshape(mx, my)
    return out


def _boundary_grid_values(g: Callable, axes) -> np.ndarray:
    """Full-grid array holding g on the boundary ring, zero inside."""
    x, y = axes
    out = np.zeros((x.shape[0], y.shape[0]))
    X, Y = np.meshgrid(x, y, indexing="ij")
    mask = np.zeros_like(out, dtype=bool)
    mask[0, :] = mask[-1, :] = True
    mask[:, 0] = mask[:, -1] = True
    pts = np.stack([X[mask], Y[mask]], axis=1)
    out[mask] = np.asarray(g(pts), dtype=float).reshape(-1)
    return out


def _heat_march(axes, f_vals: Optional[np.ndarray], source: Optional[np.ndarray],
                left: np.ndarray, right: np.ndarray, init: np.ndarray) -> np.ndarray:
    """Implicit Euler for du/dt - u_xx/2 - f u = source on (0,1) x (0,1]."""
    x, t = axes
    nx, nt = x.shape[0], t.shape[0]
    h, dt = x[1] - x[0], t[1] - t[0]
    u = np.empty((nx, nt))
    u[:, 0] = init
    u[0, :] = left
    u[-1, :] = right
    r = 0.5 / h**2
    lower = np.full(nx - 2, -r)
    upper = np.full(nx - 2, -r)
    for k in range(1, nt):
        main = np.full(nx - 2, 1.0 / dt + 2.0 * r)
        if f_vals is not None:
            main -= f_vals[1:-1, k]
        rhs = u[1:-1, k - 1] / dt
        if source is not None:
            rhs = rhs + source[1:-1, k]
        rhs[0] += r * u[0, k]
        rhs[-1] += r * u[-1, k]
        band = np.zeros((3, nx - 2))
        band[0, 1:] = upper[:-1]
        band[1, :] = main
        band[2, :-1] = lower[1:]
        try:
            u[1:-1, k] = sla.solve_banded((1, 1), band, rhs)
        except Exception as exc:
            raise NumericalError(f"heat step {k} failed: {exc}") from exc
    return u


def harmonic_extension(spec: ProblemSpec, axes) -> GridFunction:
    """The L-homogeneous lift of the boundary data onto the grid.

    Closed forms where available (linear interpolation in 1-D, constants
    for the Volterra problem); finite differences otherwise.
    """
    if spec.family == "volterra":
        return GridFunction(values=np.full(axes[0].shape, float(spec.g)), axes=axes)
    if spec.family in ("schrodinger", "darcy1d", "darcyNd") and spec.d == 1:
        g0, g1 = float(spec.g[0]), float(spec.g[1])
        return GridFunction(values=g0 + (g1 - g0) * axes[0], axes=axes)
    if spec.family in ("schrodinger", "darcyNd"):
        if spec.d != 2:
            raise DimensionError("elliptic grid solvers support d in {1, 2}")
        bvals = _boundary_grid_values(spec.g, axes)
        vals = _laplace_dirichlet_2d(axes, bvals)
        return GridFunction(values=vals, axes=axes)
    if spec.family == "heat":
        if spec.d != 1:
            raise DimensionError("heat grid solvers support one spatial dimension")
        x, t = axes
        left = np.asarray(spec.g[0](t), dtype=float)
        right = np.asarray(spec.g[1](t), dtype=float)
        init = np.asarray(spec.u0(x), dtype=float)
        vals = _heat_march(axes, None, None, left, right, init)
        return GridFunction(values=vals, axes=axes)
    raise ConfigError(f"no harmonic extension for family '{spec.family}'")


# ---------------------------------------------------------------------------
# forward solvers u_f
# ---------------------------------------------------------------------------


def forward_solve(spec: ProblemSpec, f, axes) -> GridFunction:
    """Grid solution of the family PDE with its boundary/initial conditions."""
    if spec.family == "volterra":
        x = axes[0]
        fv = _values_on(f, axes)
        prim = _cumtrapz(fv, x)
        return GridFunction(values=float(spec.g) * np.exp(prim), axes=axes)

    if spec.family == "darcy1d":
        x = axes[0]
        fv = _values_on(f, axes)
        if np.any(fv <= 0):
            raise PreconditionError("darcy1d forward solve requires f > 0")
        hv = _values_on(spec.h, axes)
        H = _cumtrapz(hv, x)
        inv_f = 1.0 / fv
        g0, g1 = float(spec.g[0]), float(spec.g[1])
        # (f u')' = h  =>  u' = (H + C)/f with C matching u(1) = g(1)
        C = (g1 - g0 - np.trapezoid(H * inv_f, x)) / np.trapezoid(inv_f, x)
        uprime = (H + C) * inv_f
        u = g0 + _cumtrapz(uprime, x)
        return GridFunction(values=u, axes=axes, meta={"uprime": uprime})

    if spec.family == "schrodinger":
        fv = _values_on(f, axes)
        if spec.d == 1:
            x = axes[0]
            h = x[1] - x[0]
            g0, g1 = float(spec.g[0]), float(spec.g[1])
            n = x.shape[0]
            r = 0.5 / h**2
            main = -2.0 * r - fv[1:-1]
            band = np.zeros((3, n - 2))
            band[0, 1:] = r
            band[1, :] = main
            band[2, :-1] = r
            rhs = np.zeros(n - 2)
            rhs[0] -= r * g0
            rhs[-1] -= r * g1
            try:
                inner = sla.solve_banded((1, 1), band, rhs)
            except Exception as exc:
                raise PreconditionError(
                    "schrodinger forward solve hit a singular system; the "
                    f"family requires f >= 0 (solver said: {exc})"
                ) from exc
            vals = np.concatenate([[g0], inner, [g1]])
            return GridFunction(values=vals, axes=axes)
        if spec.d == 2:
            bvals = _boundary_grid_values(spec.g, axes)
            try:
                vals = _laplace_dirichlet_2d(
                    axes, bvals, potential=fv, half=True
                )
            except NumericalError as exc:
                raise PreconditionError(
                    "schrodinger forward solve hit a singular system; the "
                    f"family requires f >= 0 ({exc})"
                ) from exc
            return GridFunction(values=vals, axes=axes)
        raise DimensionError("schrodinger grid solvers support d in {1, 2}")

    if spec.family == "heat":
        x, t = axes
        fv = _values_on(f, axes)
        left = np.asarray(spec.g[0](t), dtype=float)
        right = np.asarray(spec.g[1](t), dtype=float)
        init = np.asarray(spec.u0(x), dtype=float)
        vals = _heat_march(axes, fv, None, left, right, init)
        return GridFunction(values=vals, axes=axes)

    if spec.family == "darcyNd":
        return _darcy2d_forward(spec, f, axes)

    raise ConfigError(f"unknown family '{spec.family}'")


def _darcy2d_forward(spec: ProblemSpec, f, axes) -> GridFunction:
    """5-point conservative discretization of div(f grad u) = h."""
    if spec.d != 2:
        raise DimensionError("darcyNd solver implemented for d = 2")
    x, y = axes
    nx, ny = x.shape[0], y.shape[0]
    h = x[1] - x[0]
    if not np.isclose(y[1] - y[0], h):
        raise DimensionError("darcyNd solver expects a square grid")

    if isinstance(f, GridFunction):
        fv = f.values
        f_e = 0.5 * (fv[1:, :] + fv[:-1, :])  # faces between i and i+1
        f_n = 0.5 * (fv[:, 1:] + fv[:, :-1])
    else:
        xe = 0.5 * (x[1:] + x[:-1])
        ye = 0.5 * (y[1:] + y[:-1])
        XE, YE = np.meshgrid(xe, y, indexing="ij")
        f_e = np.asarray(f(np.stack([XE.ravel(), YE.ravel()], axis=1))).reshape(
            nx - 1, ny
        )
        XN, YN = np.meshgrid(x, ye, indexing="ij")
        f_n = np.asarray(f(np.stack([XN.ravel(), YN.ravel()], axis=1))).reshape(
            nx, ny - 1
        )
    if np.any(f_e <= 0) or np.any(f_n <= 0):
        raise PreconditionError("darcyNd forward solve requires f > 0")

    bvals = _boundary_grid_values(spec.g, axes)
    hv = _values_on(spec.h, axes)
    mx, my = nx - 2, ny - 2
    idx = lambda i, j: (i - 1) * my + (j - 1)
    rows, cols, data = [], [], []
    b = np.zeros(mx * my)
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            r = idx(i, j)
            fE, fW = f_e[i, j], f_e[i - 1, j]
            fN, fS = f_n[i, j], f_n[i, j - 1]
            rows.append(r)
            cols.append(r)
            data.append(-(fE + fW + fN + fS) / h**2)
            b[r] += hv[i, j]
            for (ii, jj, coef) in [
                (i + 1, j, fE),
                (i - 1, j, fW),
                (i, j + 1, fN),
                (i, j - 1, fS),
            ]:
                if 1 <= ii <= nx - 2 and 1 <= jj <= ny - 2:
                    rows.append(r)
                    cols.append(idx(ii, jj))
                    data.append(coef / h**2)
                else:
                    b[r] -= coef / h**2 * bvals[ii, jj]
    A = sp.csc_matrix((data, (rows, cols)), shape=(mx * my, mx * my))
    try:
        sol = spla.spsolve(A, b)
    except Exception as exc:
        raise NumericalError(f"darcyNd solve failed: {exc}") from exc
    out = bvals.copy()
    out[1:-1, 1:-1] = sol.reshape(mx, my)
    return GridFunction(values=out, axes=axes)


# ---------------------------------------------------------------------------
# the differential operator L and its inverse K on grids
# ---------------------------------------------------------------------------


def _cumtrapz(vals: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(vals)
    out[1:] = np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(x))
    return out


def _ddx(vals: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Second-order first derivative, one-sided at the ends."""
    h = x[1] - x[0]
    out = np.empty_like(vals)
    out[1:-1] = (vals[2:] - vals[:-2]) / (2 * h)
    out[0] = (-3 * vals[0] + 4 * vals[1] - vals[2]) / (2 * h)
    out[-1] = (3 * vals[-1] - 4 * vals[-2] + vals[-3]) / (2 * h)
    return out


def _lap1d(vals: np.ndarray, x: np.ndarray) -> np.ndarray:
    h = x[1] - x[0]
    out = np.zeros_like(vals)
    out[1:-1] = (vals[2:] - 2 * vals[1:-1] + vals[:-2]) / h**2
    out[0] = out[1]
    out[-1] = out[-2]
    return out


def _lap2d(vals: np.ndarray, hx: float, hy: float) -> np.ndarray:
    out = np.zeros_like(vals)
    out[1:-1, 1:-1] = (
        (vals[2:, 1:-1] - 2 * vals[1:-1, 1:-1] + vals[:-2, 1:-1]) / hx**2
        + (vals[1:-1, 2:] - 2 * vals[1:-1, 1:-1] + vals[1:-1, :-2]) / hy**2
    )
    out[0, :] = out[1, :]
    out[-1, :] = out[-2, :]
    out[:, 0] = out[:, 1]
    out[:, -1] = out[:, -2]
    return out


def apply_L(spec: ProblemSpec, u: GridFunction) -> GridFunction:
    """Finite-difference application of the family's differential operator.

    Interior stencils match the forward solvers; nodes where only one-sided
    information exists are flagged false in meta['valid_mask'].
    """
    if any(a.shape[0] < 3 for a in u.axes):
        raise DimensionError("grid too coarse for the stencil")
    if spec.family in ("volterra", "darcy1d"):
        x = u.axes[0]
        vals = _ddx(u.values, x)
        mask = np.ones(vals.shape, dtype=bool)
        mask[0] = mask[-1] = False
        return GridFunction(values=vals, axes=u.axes, meta={"valid_mask": mask})
    if spec.family in ("schrodinger", "darcyNd"):
        if spec.d == 1:
            vals = _lap1d(u.values, u.axes[0])
            mask = np.ones(vals.shape, dtype=bool)
            mask[0] = mask[-1] = False
        else:
            hx = u.axes[0][1] - u.axes[0][0]
            hy = u.axes[1][1] - u.axes[1][0]
            vals = _lap2d(u.values, hx, hy)
            mask = np.zeros(vals.shape, dtype=bool)
            mask[1:-1, 1:-1] = True
        return GridFunction(values=vals, axes=u.axes, meta={"valid_mask": mask})
    if spec.family == "heat":
        x, t = u.axes
        dt = t[1] - t[0]
        lap = np.empty_like(u.values)
        h = x[1] - x[0]
        lap[1:-1, :] = (u.values[2:, :] - 2 * u.values[1:-1, :] + u.values[:-2, :]) / h**2
        lap[0, :] = lap[1, :]
        lap[-1, :] = lap[-2, :]
        vals = np.empty_like(u.values)
        vals[:, 1:] = (u.values[:, 1:] - u.values[:, :-1]) / dt - 0.5 * lap[:, 1:]
        vals[:, 0] = vals[:, 1]
        mask = np.ones(vals.shape, dtype=bool)
        mask[:, 0] = False
        mask[0, :] = mask[-1, :] = False
        return GridFunction(values=vals, axes=u.axes, meta={"valid_mask": mask})
    raise ConfigError(f"unknown family '{spec.family}'")


def apply_K_grid(spec: ProblemSpec, v: GridFunction) -> GridFunction:
    """Solve L w = v with homogeneous conditions on the grid of v."""
    if spec.family == "volterra":
        return GridFunction(
            values=_cumtrapz(v.values, v.axes[0]), axes=v.axes
        )
    if spec.family == "darcy1d":
        x = v.axes[0]
        prim = _cumtrapz(v.values, x)
        return GridFunction(values=prim - x * prim[-1], axes=v.axes)
    if spec.family in ("schrodinger", "darcyNd"):
        if spec.d == 1:
            x = v.axes[0]
            h = x[1] - x[0]
            n = x.shape[0]
            band = np.zeros((3, n - 2))
            band[0, 1:] = 1.0 / h**2
            band[1, :] = -2.0 / h**2
            band[2, :-1] = 1.0 / h**2
            inner = sla.solve_banded((1, 1), band, v.values[1:-1])
            vals = np.concatenate([[0.0], inner, [0.0]])
            return GridFunction(values=vals, axes=v.axes)
        bvals = np.zeros_like(v.values)
        vals = _laplace_dirichlet_2d(v.axes, bvals, rhs=v.values)
        return GridFunction(values=vals, axes=v.axes)
    if spec.family == "heat":
        x, t = v.axes
        zeros_t = np.zeros(t.shape[0])
        zeros_x = np.zeros(x.shape[0])
        vals = _heat_march(v.axes, None, v.values, zeros_t, zeros_t, zeros_x)
        return GridFunction(values=vals, axes=v.axes)
    raise ConfigError(f"unknown family '{spec.family}'")


# ---------------------------------------------------------------------------
# solution operators e(v)
# ---------------------------------------------------------------------------


def synthesize(v: CoeffSeq, system: SvdSystem, axes) -> GridFunction:
    """Grid values of sum v_ell h_ell."""
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vals = system.eval_h(pts) @ v.coeffs
    return GridFunction(values=vals.reshape([a.shape[0] for a in axes]), axes=axes)


def synthesize_K(v: CoeffSeq, system: SvdSystem, axes) -> GridFunction:
    """Grid values of K v = sum sign_ell kappa_ell v_ell g_ell."""
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    weights = system.signs * system.kappas * v.coeffs
    vals = system.eval_g(pts) @ weights
    return GridFunction(values=vals.reshape([a.shape[0] for a in axes]), axes=axes)


def _v_and_Kv(spec, v, system, axes):
    """Resolve (v, Kv) as grid functions for either input representation."""
    if isinstance(v, CoeffSeq):
        if system is None:
            raise ConfigError("coefficient input needs the generating system")
        if axes is None:
            raise ConfigError("coefficient input needs evaluation axes")
        v_grid = synthesize(v, system, axes)
        try:
            Kv = synthesize_K(v, system, axes)
        except NumericalError:
            Kv = apply_K_grid(spec, v_grid)
        return v_grid, Kv
    if isinstance(v, GridFunction):
        return v, apply_K_grid(spec, v)
    raise DimensionError("v must be a CoeffSeq or a GridFunction")


def solution_operator(
    spec: ProblemSpec,
    v,
    system: Optional[SvdSystem] = None,
    axes=None,
    delta0: Optional[float] = None,
) -> GridFunction:
    """Recover the coefficient f from v = L u_f.

    With a configured floor delta0 the operator refuses inputs whose
    denominator field dips below it (InversionDomainError carrying the
    minimum); without a floor it follows the defining case split and
    returns the zero function when the denominator is not positive.
    """
    if spec.family == "darcyNd":
        raise ConfigError(
            "darcyNd dispatches to darcy_characteristics or darcy_multimeasure"
        )
    if isinstance(v, GridFunction) and axes is None:
        axes = v.axes
    v_grid, Kv = _v_and_Kv(spec, v, system, axes)

    if spec.family == "darcy1d":
        x = axes[0]
        hv = _values_on(spec.h, axes)
        H = _cumtrapz(hv, x)
        denom = v_grid.values
        numer = H + spec.f_anchor * v_grid.values[0]
        factor = 1.0
    else:
        gt = harmonic_extension(spec, axes)
        denom = Kv.values + gt.values
        numer = v_grid.values
        factor = 2.0 if spec.family == "schrodinger" else 1.0

    md = float(denom.min())
    if delta0 is not None:
        if md < delta0:
            raise InversionDomainError(
                f"denominator minimum {md:.6g} below floor {delta0:.6g}",
                minimum=md,
            )
    elif md <= 0.0:
        return GridFunction(values=np.zeros_like(denom), axes=axes,
                            meta={"denominator_min": md})
    vals = numer / (factor * denom)
    meta = {"denominator_min": md}
    if isinstance(v, GridFunction) and "valid_mask" in v.meta:
        meta["valid_mask"] = v.meta["valid_mask"]
    return GridFunction(values=vals, axes=axes, meta=meta)


def default_denominator_floor(spec, v_mean, system=None, axes=None) -> float:
    """Floor delta0 = min(K vhat + g_tilde)/4 estimated at the posterior mean."""
    if spec.family == "darcy1d":
        v_grid, _ = _v_and_Kv(spec, v_mean, system, axes)
        return float(v_grid.values.min()) / 4.0
    v_grid, Kv = _v_and_Kv(spec, v_mean, system, axes)
    if axes is None:
        axes = v_grid.axes
    gt = harmonic_extension(spec, axes)
    return float((Kv.values + gt.values).min()) / 4.0


def darcy1d_zero_gradient(v: GridFunction, spec: ProblemSpec) -> GridFunction:
    """Recovery for the one-dimensional flow problem when u' has a zero.

    v estimates u''; its primitive u'(x) = int_0^x v + b, with b pinned by
    the boundary values, must change sign exactly once at x_v with
    v(x_v) > 0.  Then f = (H - H(x_v))/u' away from x_v and h(x_v)/v(x_v)
    at the fill-in point.
    """
    x = v.axes[0]
    vv = v.values
    prim = _cumtrapz(vv, x)
    double_prim = _cumtrapz(prim, x)
    b = float(spec.g[1]) - float(spec.g[0]) - double_prim[-1]
    uprime = prim + b

    # count sign changes, treating exact-zero nodes as part of one crossing
    signs = np.sign(uprime)
    nz = np.nonzero(signs)[0]
    flips = [
        (int(a), int(b))
        for a, b in zip(nz[:-1], nz[1:])
        if signs[a] != signs[b]
    ]
    if len(flips) != 1:
        raise InversionDomainError(
            f"primitive has {len(flips)} sign changes, need exactly 1",
            minimum=float(np.abs(uprime).min()),
        )
    lo_idx, hi_idx = flips[0]

    # bisection for the zero of the primitive, with v piecewise linear
    def uprime_at(s):
        j = min(int(np.searchsorted(x, s, side="right")) - 1, x.shape[0] - 2)
        j = max(j, 0)
        frac = (s - x[j]) / (x[j + 1] - x[j])
        v_s = vv[j] + frac * (vv[j + 1] - vv[j])
        return uprime[j] + 0.5 * (vv[j] + v_s) * (s - x[j])

    a_, b_ = x[lo_idx], x[hi_idx]
    fa = uprime_at(a_)
    for _ in range(200):
        m_ = 0.5 * (a_ + b_)
        if m_ <= a_ or m_ >= b_:
            break
        fm = uprime_at(m_)
        if fm == 0.0:
            a_ = b_ = m_
            break
        if (fa > 0) == (fm > 0):
            a_, fa = m_, fm
        else:
            b_ = m_
    xv = 0.5 * (a_ + b_)
    k = min(max(int(np.searchsorted(x, xv, side="right")) - 1, 0), x.shape[0] - 2)
    frac = (xv - x[k]) / (x[k + 1] - x[k])
    v_at_xv = vv[k] + frac * (vv[k + 1] - vv[k])
    if v_at_xv <= 0:
        raise InversionDomainError(
            f"v({xv:.6g}) = {v_at_xv:.6g} <= 0 at the gradient zero",
            minimum=v_at_xv,
        )

    hv = _values_on(spec.h, v.axes)
    H = _cumtrapz(hv, x)
    h_at_xv = hv[k] + frac * (hv[k + 1] - hv[k])
    H_at_xv = H[k] + 0.5 * (hv[k] + h_at_xv) * (xv - x[k])

    vals = np.empty_like(vv)
    dx = x[1] - x[0]
    near = np.abs(x - xv) < 0.5 * dx
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = (H - H_at_xv) / uprime
    vals[near] = h_at_xv / v_at_xv
    return GridFunction(values=vals, axes=v.axes, meta={"x_v": float(xv)})


# ---------------------------------------------------------------------------
# the Darcy grid algorithm (single measurement)
# ---------------------------------------------------------------------------


@dataclass
class DarcyGrid:
    """Inputs of the characteristics recursion on the square grid.

    All arrays have shape (M+1, M+1) for M = 1/delta; influx maps a
    boundary point (x, y) to the prescribed value of f there.  alpha is
    filled by darcy_characteristics.
    """

    delta: float
    u: np.ndarray
    grad_u: tuple
    lap_u: np.ndarray
    g_rhs: np.ndarray
    influx: Optional[Callable] = None
    alpha: Optional[np.ndarray] = None

    def __post_init__(self):
        M = round(1.0 / self.delta)
        if abs(M * self.delta - 1.0) > 1e-12:
            raise DimensionError("1/delta must be an integer")
        shape = (M + 1, M + 1)
        for name, arr in [
            ("u", self.u),
            ("grad_u[0]", self.grad_u[0]),
            ("grad_u[1]", self.grad_u[1]),
            ("lap_u", self.lap_u),
            ("g_rhs", self.g_rhs),
        ]:
            if np.asarray(arr).shape != shape:
                raise DimensionError(f"{name} must have shape {shape}")

    @property
    def M(self) -> int:
        return round(1.0 / self.delta)


def darcy_invertibility(dg: DarcyGrid) -> float:
    """C(u) = min over the grid of (Lap u + ||grad u||^2)."""
    gx, gy = dg.grad_u
    return float((dg.lap_u + gx**2 + gy**2).min())


def darcy_grid_from_fields(delta, u, grad_u, lap_u, g_rhs, influx=None) -> DarcyGrid:
    return DarcyGrid(delta=delta, u=np.asarray(u, dtype=float),
                     grad_u=(np.asarray(grad_u[0], dtype=float),
                             np.asarray(grad_u[1], dtype=float)),
                     lap_u=np.asarray(lap_u, dtype=float),
                     g_rhs=np.asarray(g_rhs, dtype=float), influx=influx)


def darcy_grid_from_solution(u: GridFunction, g_rhs, influx=None) -> DarcyGrid:
    """Assemble the algorithm inputs from grid data by central differences."""
    x, y = u.axes
    delta = float(x[1] - x[0])
    vals = u.values
    gx = np.empty_like(vals)
    gy = np.empty_like(vals)
    gx[1:-1, :] = (vals[2:, :] - vals[:-2, :]) / (2 * delta)
    gx[0, :] = (-3 * vals[0, :] + 4 * vals[1, :] - vals[2, :]) / (2 * delta)
    gx[-1, :] = (3 * vals[-1, :] - 4 * vals[-2, :] + vals[-3, :]) / (2 * delta)
    gy[:, 1:-1] = (vals[:, 2:] - vals[:, :-2]) / (2 * delta)
    gy[:, 0] = (-3 * vals[:, 0] + 4 * vals[:, 1] - vals[:, 2]) / (2 * delta)
    gy[:, -1] = (3 * vals[:, -1] - 4 * vals[:, -2] + vals[:, -3]) / (2 * delta)
    lap = _lap2d(vals, delta, delta)
    rhs = _values_on(g_rhs, u.axes) if not isinstance(g_rhs, np.ndarray) else g_rhs
    return darcy_grid_from_fields(delta, vals, (gx, gy), lap, rhs, influx)


def _toward_zero(arr: np.ndarray) -> np.ndarray:
    return np.sign(arr) * np.floor(np.abs(arr))


def darcy_characteristics(dg: DarcyGrid) -> np.ndarray:
    """Recover f on the grid by the discretized characteristics recursion.

    Cells with small gradient use f = rhs/Lap(u) directly; the others link
    to a strictly-lower-u cell (or a snapped influx boundary point) one
    rounded step of length about sqrt(delta) against the gradient, and the
    recursion is resolved in increasing order of u.  Linear in the number
    of grid points.
    """
    C = darcy_invertibility(dg)
    if C <= 0:
        raise PreconditionError(f"C(u) = {C:.6g} <= 0; inversion not licensed")
    delta = dg.delta
    M = dg.M
    sqd = math.sqrt(delta)
    gx, gy = dg.grad_u
    gnorm = np.hypot(gx, gy)
    u = dg.u
    lap = dg.lap_u
    rhs = dg.g_rhs
    alpha = np.full(u.shape, np.nan)

    order = np.argsort(u, axis=None, kind="stable")
    for flat in order:
        i, j = np.unravel_index(flat, u.shape)
        if gnorm[i, j] < sqd:
            if lap[i, j] <= 0:
                raise PreconditionError(
                    f"Lap u <= 0 at small-gradient cell ({i},{j}); "
                    "delta too coarse for this u"
                )
            alpha[i, j] = rhs[i, j] / lap[i, j]
            continue
        step = delta * _toward_zero(
            np.array([gx[i, j], gy[i, j]]) / (gnorm[i, j] * sqd)
        )
        xy = np.array([i * delta, j * delta])
        target = xy - step
        if -1e-12 <= target[0] <= 1 + 1e-12 and -1e-12 <= target[1] <= 1 + 1e-12:
            k = int(round(target[0] / delta))
            l = int(round(target[1] / delta))
            k = min(max(k, 0), M)
            l = min(max(l, 0), M)
            parent_val = alpha[k, l]
            if np.isnan(parent_val):
                # u did not strictly decrease along the rounded step; fall
                # back to the small-gradient branch (same-order error)
                if lap[i, j] >= sqd:
                    alpha[i, j] = rhs[i, j] / lap[i, j]
                    continue
                raise PreconditionError(
                    f"recursion at ({i},{j}) links to unresolved cell "
                    f"({k},{l}) and Lap u is too small for a fallback"
                )
            znorm = float(np.hypot(*step))
        else:
            # snap to the boundary crossing of the segment; the value of f
            # there must be prescribed (discretized influx boundary)
            ts = [1.0]
            for c in range(2):
                if step[c] > 0 and target[c] < 0:
                    ts.append(xy[c] / step[c])
                if step[c] < 0 and target[c] > 1:
                    ts.append((xy[c] - 1.0) / step[c])
            tstar = min(ts)
            if dg.influx is None:
                raise ConfigError(
                    f"influx boundary value needed near ({xy[0]:.6g}, "
                    f"{xy[1]:.6g}) but none prescribed"
                )
            if tstar <= 1e-12:
                # the node itself sits on the influx boundary
                alpha[i, j] = float(dg.influx(xy[0], xy[1]))
                continue
            bpoint = np.clip(xy - tstar * step, 0.0, 1.0)
            parent_val = float(dg.influx(bpoint[0], bpoint[1]))
            znorm = float(np.hypot(*(xy - bpoint)))
        ratio = gnorm[i, j] / znorm
        alpha[i, j] = (rhs[i, j] + parent_val * ratio) / (lap[i, j] + ratio)

    dg.alpha = alpha
    return alpha


# ---------------------------------------------------------------------------
# multi-measurement Darcy inversion
# ---------------------------------------------------------------------------


def _grad2d(vals: np.ndarray, h: float):
    gx = np.empty_like(vals)
    gy = np.empty_like(vals)
    gx[1:-1, :] = (vals[2:, :] - vals[:-2, :]) / (2 * h)
    gx[0, :] = (-3 * vals[0, :] + 4 * vals[1, :] - vals[2, :]) / (2 * h)
    gx[-1, :] = (3 * vals[-1, :] - 4 * vals[-2, :] + vals[-3, :]) / (2 * h)
    gy[:, 1:-1] = (vals[:, 2:] - vals[:, :-2]) / (2 * h)
    gy[:, 0] = (-3 * vals[:, 0] + 4 * vals[:, 1] - vals[:, 2]) / (2 * h)
    gy[:, -1] = (3 * vals[:, -1] - 4 * vals[:, -2] + vals[:, -3]) / (2 * h)
    return gx, gy


def _staircase_integrate(gx, gy, x, y, anchor, x_first: bool):
    """Trapezoidal line integral of (gx, gy) along axis-parallel paths."""
    nx, ny = gx.shape
    h = x[1] - x[0]
    ia, ja = anchor
    out = np.zeros((nx, ny))
    if x_first:
        for i in range(ia + 1, nx):
            out[i, ja] = out[i - 1, ja] + 0.5 * h * (gx[i - 1, ja] + gx[i, ja])
        for i in range(ia - 1, -1, -1):
            out[i, ja] = out[i + 1, ja] - 0.5 * h * (gx[i, ja] + gx[i + 1, ja])
        for j in range(ja + 1, ny):
            out[:, j] = out[:, j - 1] + 0.5 * h * (gy[:, j - 1] + gy[:, j])
        for j in range(ja - 1, -1, -1):
            out[:, j] = out[:, j + 1] - 0.5 * h * (gy[:, j] + gy[:, j + 1])
    else:
        for j in range(ja + 1, ny):
            out[ia, j] = out[ia, j - 1] + 0.5 * h * (gy[ia, j - 1] + gy[ia, j])
        for j in range(ja - 1, -1, -1):
            out[ia, j] = out[ia, j + 1] - 0.5 * h * (gy[ia, j] + gy[ia, j + 1])
        for i in range(ia + 1, nx):
            out[i, :] = out[i - 1, :] + 0.5 * h * (gx[i - 1, :] + gx[i, :])
        for i in range(ia - 1, -1, -1):
            out[i, :] = out[i + 1, :] - 0.5 * h * (gx[i, :] + gx[i + 1, :])
    return out


def darcy_multimeasure(
    v_list: Sequence,
    specs: Sequence[ProblemSpec],
    axes=None,
    system: Optional[SvdSystem] = None,
    cond_cap: float = 1e8,
    anchor=None,
    f_anchor_value: float = 1.0,
):
    """Pointwise inversion from d measurements with independent boundary data.

    grad f / f = -[v_1 ... v_d] [grad u_1 ... grad u_d]^{-1} at every grid
    point, then f is recovered up to the anchored multiplicative constant
    by trapezoidal integration along axis-parallel paths.  Returns
    (gradlogf_x, gradlogf_y, f) as grid functions; f.meta records the
    staircase path-independence residual.
    """
    if len(v_list) != 2 or len(specs) != 2:
        raise DimensionError("multi-measurement inversion implemented for d = 2")
    v_grids = []
    grads = []
    for v, spec in zip(v_list, specs):
        if isinstance(v, CoeffSeq):
            if axes is None or system is None:
                raise ConfigError("coefficient input needs system and axes")
            vg = synthesize(v, system, axes)
        else:
            vg = v
            axes = vg.axes
        Kv = apply_K_grid(spec, vg)
        gt = harmonic_extension(spec, axes)
        uj = Kv.values + gt.values
        h = float(axes[0][1] - axes[0][0])
        grads.append(_grad2d(uj, h))
        v_grids.append(vg.values)
    x, y = axes
    Mmat = np.empty(v_grids[0].shape + (2, 2))
    Mmat[..., 0, 0] = grads[0][0]
    Mmat[..., 1, 0] = grads[0][1]
    Mmat[..., 0, 1] = grads[1][0]
    Mmat[..., 1, 1] = grads[1][1]
    conds = np.linalg.cond(Mmat)
    worst = float(conds.max())
    if worst > cond_cap:
        loc = np.unravel_index(int(np.argmax(conds)), conds.shape)
        raise InversionDomainError(
            f"measurement matrix condition number {worst:.3g} exceeds cap at "
            f"grid point ({x[loc[0]]:.4g}, {y[loc[1]]:.4g})",
            minimum=worst,
            where=loc,
        )
    Minv = np.linalg.inv(Mmat)
    vstack = np.stack(v_grids, axis=-1)
    s = -np.einsum("...k,...kl->...l", vstack, Minv)
    gx, gy = s[..., 0], s[..., 1]
    if anchor is None:
        anchor = (1, 1)
    log_a = _staircase_integrate(gx, gy, x, y, anchor, x_first=True)
    log_b = _staircase_integrate(gx, gy, x, y, anchor, x_first=False)
    # the outer ring only sees one-sided Laplacian data, so the curl check
    # is reported over the interior block
    resid = float(np.abs(log_a - log_b)[1:-1, 1:-1].max())
    logf = log_a + math.log(f_anchor_value)
    f = GridFunction(values=np.exp(logf), axes=axes,
                     meta={"path_independence_residual": resid})
    return (
        GridFunction(values=gx, axes=axes),
        GridFunction(values=gy, axes=axes),
        f,
    )


# ---------------------------------------------------------------------------
# heat operator as a dense matrix for the numerical SVD path
# ---------------------------------------------------------------------------


def build_heat_operator_matrix(nx: int, nt: int):
    """Dense discretization of K for the 1-D heat operator, with its grid.

    Unknowns live at interior space nodes x_1..x_{nx-1} and time levels
    t_1..t_nt; the matrix is the inverse of the implicit-Euler stencil of
    d/dt - Lap/2 with zero boundary and initial data.  Quadrature weights
    are uniform h*dt, matching the L2 geometry of (0,1) x (0,1].
    """
    h = 1.0 / nx
    dt = 1.0 / nt
    xs = h * np.arange(1, nx)
    ts = dt * np.arange(1, nt + 1)
    m = xs.shape[0]
    r = 0.5 / h**2
    D = sp.diags(
        [np.full(m, 1.0 / dt + 2.0 * r), np.full(m - 1, -r), np.full(m - 1, -r)],
        [0, 1, -1],
    )
    blocks = []
    for k in range(nt):
        row = [None] * nt
        row[k] = D
        if k > 0:
            row[k - 1] = sp.diags([np.full(m, -1.0 / dt)], [0])
        blocks.append(row)
    L = sp.bmat(blocks, format="csc")
    A = spla.inv(L).toarray()
    X, T = np.meshgrid(xs, ts, indexing="ij")
    # unknown ordering is time-major (level k holds all x); build points
    # accordingly: index = k*m + i
    pts = np.stack(
        [np.tile(xs, nt), np.repeat(ts, m)], axis=1
    )
    weights = np.full(pts.shape[0], h * dt)
    return A, GridDescriptor(points=pts, weights=weights, d=2)
