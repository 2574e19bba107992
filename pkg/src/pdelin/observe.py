"""Synthetic observations and the design-grid interpolation operator.

Two observation schemes are supported: the idealized sequence model with
per-coordinate noise 1/sqrt(n), and the fixed-design scheme observing a
function at the equidistant points (2i/(2m+1)) with unit noise.  On that
particular grid the tensor sine basis is exactly orthogonal under the
empirical inner product, with Gram constant (1+1/(2m))^d, which makes
interpolation and projection onto the span closed-form.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .bases import SvdSystem
from .errors import DimensionError, DomainError
from .inference import SeqObservation
from .seqspace import CoeffSeq


@dataclass
class GridFunction:
    """Function values on a tensor grid over the unit domain.

    `axes` holds the coordinate vector of each axis; `meta` carries solver
    annotations such as the valid-interior mask left by finite-difference
    stencils.
    """

    values: np.ndarray
    axes: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        expected = tuple(a.shape[0] for a in self.axes)
        if self.values.shape != expected:
            raise DimensionError(
                f"values shape {self.values.shape} does not match axes {expected}"
            )

    @property
    def dims(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> tuple:
        return tuple(float(a[1] - a[0]) if a.shape[0] > 1 else 1.0 for a in self.axes)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def save(self, path, family: str = "") -> None:
        """CSV matrix form plus a JSON header with dims/spacing/family."""
        path = Path(path)
        flat = self.values.reshape(self.values.shape[0], -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in flat:
                w.writerow([format(v, ".17g") for v in row])
        header = {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "family": family,
            "axes_start": [float(a[0]) for a in self.axes],
        }
        with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
            json.dump(header, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GridFunction":
        path = Path(path)
        with open(path.with_suffix(path.suffix + ".json")) as fh:
            header = json.load(fh)
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                rows.append([float(v) for v in row])
        dims = tuple(header["dims"])
        values = np.array(rows).reshape(dims)
        axes = tuple(
            start + dx * np.arange(npts)
            for npts, dx, start in zip(dims, header["spacing"], header["axes_start"])
        )
        return cls(values=values, axes=axes)


def design_points(m: int, d: int) -> np.ndarray:
    """Tensor design grid {(2i/(2m+1)) : i = 1..m}^d, C-ordered, shape (m^d, d)."""
    if m < 1 or d < 1:
        raise DimensionError("m and d must be >= 1")
    axis = 2.0 * np.arange(1, m + 1) / (2.0 * m + 1.0)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


@dataclass
class DesignObservation:
    """Noisy function values at the canonical design grid (unit noise)."""

    points: np.ndarray
    y: np.ndarray
    m: int
    d: int

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.points.shape[0] != self.y.shape[0]:
            raise DimensionError("points and values disagree in length")
        if self.points.shape[0] != self.m**self.d:
            raise DimensionError("observation count must equal m^d")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def save(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j+1}" for j in range(self.d)] + ["y"])
            for pt, val in zip(self.points, self.y):
                w.writerow(
                    [format(c, ".17g") for c in pt] + [format(val, ".17g")]
                )


def simulate_whitenoise(
    v0: CoeffSeq, system: SvdSystem, n: float, seed: int
) -> SeqObservation:
    """Sequence data y_ell = |kappa_ell| v0_ell + Z_ell/sqrt(n).

    Signs of the singular values are absorbed into the basis convention;
    inference works with |kappa| and synthesis re-applies signs.
    """
    if v0.truncation != system.truncation:
        raise DimensionError("truth truncation does not match system")
    if n <= 0:
        raise DomainError("n must be positive")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(system.truncation) / np.sqrt(n)
    y = np.abs(system.kappas) * v0.coeffs + noise
    return SeqObservation(y=y, n=n, system=system)


def simulate_design(
    u: Callable, m: int, d: int, seed: int, noiseless: bool = False
) -> DesignObservation:
    """Observe u at the design grid plus i.i.d. standard normal noise."""
    pts = design_points(m, d)
    vals = np.asarray(u(pts), dtype=float).reshape(-1)
    if vals.shape[0] != pts.shape[0]:
        raise DimensionError("function handle returned wrong number of values")
    if not noiseless:
        rng = np.random.default_rng(seed)
        vals = vals + rng.standard_normal(pts.shape[0])
    return DesignObservation(points=pts, y=vals, m=m, d=d)


def _design_values(obs_or_values, m: int, d: int) -> np.ndarray:
    if isinstance(obs_or_values, DesignObservation):
        if obs_or_values.m != m or obs_or_values.d != d:
            raise DimensionError("observation grid does not match requested m, d")
        return obs_or_values.y
    vals = np.asarray(obs_or_values, dtype=float).reshape(-1)
    if vals.shape[0] != m**d:
        raise DimensionError(f"expected {m**d} design values, got {vals.shape[0]}")
    return vals


def _check_sine_span(system: SvdSystem, m: int) -> None:
    if not system.basis_id.startswith("laplacian"):
        raise DimensionError(
            "design-grid identities hold for the tensor sine basis only"
        )
    if system.truncation != m**system.d:
        raise DimensionError(
            f"system must span exactly ||i||_inf <= {m} "
            f"({m**system.d} functions), has {system.truncation}"
        )
    if max(max(idx.entries) for idx in system.indices) > m:
        raise DimensionError("system contains frequencies above the design limit")


def gram_constant(m: int, d: int) -> float:
    """Empirical Gram constant (1 + 1/(2m))^d of the design grid."""
    return (1.0 + 0.5 / m) ** d


def interpolate(obs_or_values, system: SvdSystem, m: int) -> CoeffSeq:
    """Exact interpolant in span{h_i : ||i||_inf <= m} through the design data.

    Coefficients follow from the grid Gram identity:
    c_i = <v, h_i>_{L_n} / (1 + 1/(2m))^d, and the resulting expansion
    reproduces v at every design point.
    """
    _check_sine_span(system, m)
    d = system.d
    vals = _design_values(obs_or_values, m, d)
    pts = design_points(m, d)
    H = system.eval_h(pts)
    coeffs = (H.T @ vals) / vals.shape[0] / gram_constant(m, d)
    return CoeffSeq.from_array(coeffs, basis_id=system.basis_id, d=d)


def design_to_seq(obs: DesignObservation, system: SvdSystem,
                  strict: bool = True) -> SeqObservation:
    """Project design data onto the empirically orthonormal basis of the span.

    On the canonical grid the rescaled functions h_i (1+1/(2m))^(-d/2) are
    orthonormal under the empirical inner product, so each projection
    carries noise of variance exactly 1/n.  The factor linking projections
    back to plain eigenbasis coefficients is recorded as basis_scale.
    Non-canonical designs are rejected when strict, otherwise routed
    through a least-squares projection with a warning (the per-coordinate
    noise is then only approximately independent).
    """
    _check_sine_span(system, obs.m)
    m, d = obs.m, obs.d
    expected = design_points(m, d)
    canonical = obs.points.shape == expected.shape and np.allclose(
        obs.points, expected, atol=1e-12
    )
    scale = gram_constant(m, d) ** 0.5
    if canonical:
        H = system.eval_h(expected)
        proj = (H.T @ obs.y) / obs.n / scale
        return SeqObservation(y=proj, n=float(obs.n), system=system,
                              basis_scale=scale)
    if strict:
        raise DimensionError("observation points are not the canonical design grid")
    warnings.warn(
        "non-canonical design: falling back to least-squares projection; "
        "coordinate noises are only approximately independent",
        stacklevel=2,
    )
    H = system.eval_h(obs.points)
    coeffs, *_ = np.linalg.lstsq(H, obs.y, rcond=None)
    return SeqObservation(y=coeffs * scale, n=float(obs.n), system=system,
                          basis_scale=scale)
