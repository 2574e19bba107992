"""Singular systems of the forward operators.

Each PDE family comes with the inverse operator K of its differential
operator under Dirichlet conditions.  For the families with closed-form
eigenfunctions of K^T K this module builds the ordered singular system
analytically; for operators only available as matrices on a grid
(notably the space-time heat operator) it provides a quadrature-weighted
numerical SVD returning grid-function handles.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, DomainError, NumericalError
from .seqspace import MultiIndex, sort_multiindexed

_DOMAIN_TOL = 1e-12


@dataclass
class SvdSystem:
    """Ordered singular triples (kappa_ell, h_ell, g_ell) of an operator K.

    kappas are strictly positive and nonincreasing; K h_ell = sign_ell *
    kappa_ell * g_ell.  `d` is the dimension of the domain the basis
    functions live on (space-time counts the time axis), which is also the
    dimension entering the smoothness weights ell^(2s/d).  `p` is the
    ill-posedness degree kappa_ell ~ ell^(-p/d); for numerically built
    systems it is a log-log regression estimate and diagnostic only.
    """

    basis_id: str
    d: int
    p: float
    kappas: np.ndarray
    signs: np.ndarray
    indices: list
    _h_eval: Callable = field(repr=False)
    _g_eval: Optional[Callable] = field(repr=False, default=None)
    p_estimated: bool = False

    def __post_init__(self):
        k = np.asarray(self.kappas, dtype=float)
        if np.any(k <= 0):
            raise DomainError("singular values must be strictly positive")
        if np.any(np.diff(k) > 1e-12 * k[0]):
            raise DomainError("singular values must be nonincreasing")
        self.kappas = k
        self.signs = np.asarray(self.signs, dtype=float)

    @property
    def truncation(self) -> int:
        return self.kappas.shape[0]

    def _check_points(self, x) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None] if self.d == 1 else pts[None, :]
        if pts.ndim != 2 or pts.shape[1] != self.d:
            raise DimensionError(
                f"expected points of dimension {self.d}, got shape {pts.shape}"
            )
        if np.any(pts < -_DOMAIN_TOL) or np.any(pts > 1.0 + _DOMAIN_TOL):
            raise DomainError("evaluation point outside the unit domain")
        return pts

    def eval_h(self, x) -> np.ndarray:
        """Right singular functions at points x; returns (npoints, N)."""
        return self._h_eval(self._check_points(x))

    def eval_g(self, x) -> np.ndarray:
        """Left singular functions at points x; returns (npoints, N)."""
        if self._g_eval is None:
            raise NumericalError(
                f"system '{self.basis_id}' has no closed-form left singular "
                "functions; use the grid path"
            )
        return self._g_eval(self._check_points(x))

    def truncate(self, N: int) -> "SvdSystem":
        """Sub-system keeping the first N triples of the ordering."""
        if N < 1 or N > self.truncation:
            raise DimensionError(f"cannot truncate to {N} of {self.truncation}")
        h_full = self._h_eval
        g_full = self._g_eval
        return SvdSystem(
            basis_id=self.basis_id,
            d=self.d,
            p=self.p,
            kappas=self.kappas[:N].copy(),
            signs=self.signs[:N].copy(),
            indices=list(self.indices[:N]),
            _h_eval=lambda pts: h_full(pts)[:, :N],
            _g_eval=None if g_full is None else (lambda pts: g_full(pts)[:, :N]),
            p_estimated=self.p_estimated,
        )

    def export_csv(self, path) -> None:
        """Audit table (ell, kappa, sign, index_tuple)."""
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ell", "kappa", "sign", "index_tuple"])
            for ell in range(self.truncation):
                idx = self.indices[ell]
                tup = "|".join(str(e) for e in idx.entries)
                w.writerow(
                    [ell + 1, format(self.kappas[ell], ".17g"),
                     int(self.signs[ell]), tup]
                )


def _sine_tensor_eval(index_array: np.ndarray, d: int) -> Callable:
    """Evaluator for 2^(d/2) prod_j sin(i_j pi x_j) over an (N, d) index array."""
    scale = 2.0 ** (d / 2.0)

    def h_eval(pts: np.ndarray) -> np.ndarray:
        out = np.empty((pts.shape[0], index_array.shape[0]))
        for lo in range(0, pts.shape[0], 4096):
            chunk = pts[lo : lo + 4096]
            acc = np.full((chunk.shape[0], index_array.shape[0]), scale)
            for j in range(d):
                acc *= np.sin(np.pi * np.outer(chunk[:, j], index_array[:, j]))
            out[lo : lo + 4096] = acc
        return out

    return h_eval


def laplacian_system(d: int, max_index: int) -> SvdSystem:
    """Singular system of the inverse Dirichlet Laplacian on (0,1)^d.

    h_i(x) = 2^(d/2) prod_j sin(i_j pi x_j) with K h_i = -kappa_i h_i and
    kappa_i = 1/(pi^2 sum_j i_j^2); enumerates ||i||_inf <= max_index and
    orders by decreasing kappa (ties lexicographic).
    """
    if d < 1 or max_index < 1:
        raise DimensionError("d and max_index must be >= 1")
    grids = np.meshgrid(*([np.arange(1, max_index + 1)] * d), indexing="ij")
    tuples = np.stack([g.ravel() for g in grids], axis=1)
    values = {}
    for row in tuples:
        idx = MultiIndex(tuple(int(v) for v in row))
        values[idx] = (1.0 / (math.pi**2 * idx.norm_sq()), None)
    ordered = sort_multiindexed(values)
    indices = [t[0] for t in ordered]
    kappas = np.array([t[1] for t in ordered])
    index_array = np.array([idx.entries for idx in indices], dtype=float)
    h_eval = _sine_tensor_eval(index_array, d)
    return SvdSystem(
        basis_id=f"laplacian-d{d}",
        d=d,
        p=2.0,
        kappas=kappas,
        signs=-np.ones(len(indices)),
        indices=indices,
        _h_eval=h_eval,
        _g_eval=h_eval,
    )


def _cosine_sine_system(basis_id: str, freqs: np.ndarray, p: float) -> SvdSystem:
    """1-D system with h = sqrt(2) cos(freq pi x), g = sqrt(2) sin(freq pi x)."""
    kappas = 1.0 / (freqs * math.pi)

    def h_eval(pts):
        return math.sqrt(2.0) * np.cos(np.pi * np.outer(pts[:, 0], freqs))

    def g_eval(pts):
        return math.sqrt(2.0) * np.sin(np.pi * np.outer(pts[:, 0], freqs))

    indices = [MultiIndex((i,)) for i in range(1, freqs.shape[0] + 1)]
    return SvdSystem(
        basis_id=basis_id,
        d=1,
        p=p,
        kappas=kappas,
        signs=np.ones(freqs.shape[0]),
        indices=indices,
        _h_eval=h_eval,
        _g_eval=g_eval,
    )


def volterra_system(max_index: int) -> SvdSystem:
    """Singular system of the Volterra operator Kv(x) = int_0^x v.

    h_i = sqrt(2) cos((i-1/2) pi x), kappa_i = 1/((i-1/2) pi),
    g_i = sqrt(2) sin((i-1/2) pi x); K h_i = kappa_i g_i exactly.
    """
    if max_index < 1:
        raise DimensionError("max_index must be >= 1")
    freqs = np.arange(1, max_index + 1) - 0.5
    return _cosine_sine_system("volterra", freqs, p=1.0)


def darcy1d_system(max_index: int, boundary: str = "dirichlet") -> SvdSystem:
    """Eigen system for the one-dimensional flow problem.

    dirichlet: h_i = sqrt(2) cos(pi i x), kappa_i = 1/(pi i),
    g_i = sqrt(2) sin(pi i x) for K v = int_0^x v - x int_0^1 v (the
    constant eigenfunction has kappa = 0 and is excluded).  mixed: the
    standard Volterra system with half-integer frequencies.
    """
    if max_index < 1:
        raise DimensionError("max_index must be >= 1")
    if boundary == "dirichlet":
        freqs = np.arange(1, max_index + 1, dtype=float)
        return _cosine_sine_system("darcy1d-dirichlet", freqs, p=1.0)
    if boundary == "mixed":
        freqs = np.arange(1, max_index + 1) - 0.5
        return _cosine_sine_system("darcy1d-mixed", freqs, p=1.0)
    raise DomainError(f"unknown boundary type '{boundary}'")


@dataclass(frozen=True)
class HeatEigenPair:
    """One space-time eigenpair of K^T K for the parabolic operator."""

    i: MultiIndex
    k: int
    mu: float
    nu: float
    lam: float


def _heat_root(mu: float, k: int, max_iter: int = 200) -> float:
    """Unique root of nu cos(nu) + (mu/2) sin(nu) = 0 in ((k-1/2) pi, k pi).

    Equivalent to nu/tan(nu) = -mu/2 but continuous on the closed bracket,
    so plain bisection is unconditionally safe.  Runs the bracket down to
    one ULP (about 60 iterations).
    """

    def f(nu):
        return nu * math.cos(nu) + 0.5 * mu * math.sin(nu)

    a = (k - 0.5) * math.pi
    b = k * math.pi
    fa = f(a)
    if fa == 0.0:
        return a
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        fm = f(m)
        if fm == 0.0:
            return m
        if (fa > 0) == (fm > 0):
            a, fa = m, fm
        else:
            b = m
    else:
        raise NumericalError(f"heat root bisection failed to converge (mu={mu}, k={k})")
    return a if abs(f(a)) <= abs(f(b)) else b


def _heat_time_factor(nu: float, t: np.ndarray) -> np.ndarray:
    c = 1.0 / math.tan(nu)
    norm = math.sqrt((-c + nu / math.sin(nu) ** 2) / (2.0 * nu))
    return (-c * np.sin(nu * t) + np.cos(nu * t)) / norm


def heat_eigensystem(d: int, max_space: int, max_time: int):
    """Ordered eigensystem of K^T K for the heat operator on (0,1)^d x [0,1].

    For each spatial index i and temporal index k, mu_i = pi^2 sum_j i_j^2,
    nu_{i,k} solves nu/tan(nu) = -mu/2 on ((k-1/2) pi, k pi), and the
    eigenvalue of K^T K is lambda = 1/(nu^2 + mu^2/4).  Returns
    (SvdSystem, pairs) with the system ordered by decreasing lambda; its
    kappas are sqrt(lambda), the singular values of K.  The left singular
    functions have no closed form, so eval_g is unavailable.
    """
    if d < 1 or max_space < 1 or max_time < 1:
        raise DimensionError("arguments must be >= 1")
    grids = np.meshgrid(*([np.arange(1, max_space + 1)] * d), indexing="ij")
    space_tuples = np.stack([g.ravel() for g in grids], axis=1)
    values = {}
    for row in space_tuples:
        ituple = tuple(int(v) for v in row)
        mu = math.pi**2 * sum(v * v for v in ituple)
        for k in range(1, max_time + 1):
            nu = _heat_root(mu, k)
            lam = 1.0 / (nu**2 + mu**2 / 4.0)
            pair = HeatEigenPair(i=MultiIndex(ituple), k=k, mu=mu, nu=nu, lam=lam)
            values[MultiIndex(ituple + (k,))] = (lam, pair)
    ordered = sort_multiindexed(values)
    indices = [t[0] for t in ordered]
    pairs = [t[2] for t in ordered]
    lams = np.array([t[1] for t in ordered])
    space_idx = np.array([idx.entries[:-1] for idx in indices], dtype=float)
    nus = np.array([pair.nu for pair in pairs])
    scale = 2.0 ** (d / 2.0)

    def h_eval(pts):
        x, t = pts[:, :d], pts[:, d]
        out = np.empty((pts.shape[0], len(pairs)))
        for lo in range(0, pts.shape[0], 2048):
            sl = slice(lo, lo + 2048)
            acc = np.full((x[sl].shape[0], len(pairs)), scale)
            for j in range(d):
                acc *= np.sin(np.pi * np.outer(x[sl][:, j], space_idx[:, j]))
            for ell, nu in enumerate(nus):
                acc[:, ell] *= _heat_time_factor(nu, t[sl])
            out[sl] = acc
        return out

    dim = d + 1
    p_theory = 2.0 * (d + 1) / (d + 2)
    system = SvdSystem(
        basis_id=f"heat-d{d}",
        d=dim,
        p=p_theory,
        kappas=np.sqrt(lams),
        signs=np.ones(len(pairs)),
        indices=indices,
        _h_eval=h_eval,
        _g_eval=None,
    )
    return system, pairs


@dataclass(frozen=True)
class GridDescriptor:
    """Quadrature grid backing a matrix-discretized operator."""

    points: np.ndarray
    weights: np.ndarray
    d: int

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 1 and self.d == 1 and pts.shape[1] > 1:
            pts = pts.T
        w = np.asarray(self.weights, dtype=float)
        if pts.shape[0] != w.shape[0]:
            raise DimensionError("points and weights disagree in length")
        if np.any(w <= 0):
            raise DomainError("quadrature weights must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)


def trapezoid_descriptor(axes) -> GridDescriptor:
    """Tensor trapezoidal quadrature over closed uniform axes."""
    axes = [np.asarray(a, dtype=float) for a in axes]
    weight_1d = []
    for a in axes:
        w = np.full(a.shape[0], a[1] - a[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        weight_1d.append(w)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*weight_1d, indexing="ij")
    weights = np.ones(pts.shape[0])
    for wm in wmesh:
        weights *= wm.ravel()
    return GridDescriptor(points=pts, weights=weights, d=len(axes))


def discrete_svd(op_matrix: np.ndarray, grid: GridDescriptor,
                 basis_id: str = "discrete") -> SvdSystem:
    """Numerical singular system of a grid-discretized operator.

    `op_matrix` maps function values on grid.points to function values on
    the same grid; the L2 geometry is supplied by grid.weights.  Singular
    functions come back as grid-sampled handles (evaluation is restricted
    to the construction grid).  The decay exponent p is estimated by a
    log-log fit of kappa_ell against ell and is diagnostic only.
    """
    A = np.asarray(op_matrix, dtype=float)
    n = grid.points.shape[0]
    if A.shape != (n, n):
        raise DimensionError(f"matrix shape {A.shape} does not match grid size {n}")
    sw = np.sqrt(grid.weights)
    B = (A * sw[:, None]) / sw[None, :]
    try:
        U, s, Vt = np.linalg.svd(B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed: {exc}") from exc
    keep = s > max(s[0] * 1e-13, np.finfo(float).tiny)
    s = s[keep]
    H = Vt[keep].T / sw[:, None]
    G = U[:, keep] / sw[:, None]
    N = s.shape[0]

    # point -> row lookup on the construction grid
    key_of = {tuple(np.round(p, 12)): r for r, p in enumerate(grid.points)}

    def lookup(values):
        def _eval(pts):
            rows = []
            for p in pts:
                key = tuple(np.round(p, 12))
                if key not in key_of:
                    raise DomainError(
                        "discrete system can only be evaluated on its grid"
                    )
                rows.append(key_of[key])
            return values[rows, :]

        return _eval

    ell = np.arange(1, N + 1, dtype=float)
    fit_hi = max(4, min(N, 200))
    slope = np.polyfit(np.log(ell[1:fit_hi]), np.log(s[1:fit_hi]), 1)[0] if N > 4 else 0.0
    p_hat = -slope * grid.d

    indices = [MultiIndex((i,)) for i in range(1, N + 1)]
    return SvdSystem(
        basis_id=basis_id,
        d=grid.d,
        p=float(p_hat),
        kappas=s,
        signs=np.ones(N),
        indices=indices,
        _h_eval=lookup(H),
        _g_eval=lookup(G),
        p_estimated=True,
    )
