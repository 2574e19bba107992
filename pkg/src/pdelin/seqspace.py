"""Coefficient sequences, graded smoothness norms, and eigenvalue ordering.

Everything downstream (priors, posteriors, synthesis) speaks in terms of a
truncated coefficient vector in a fixed basis whose members are ordered by
decreasing eigenvalue.  This module owns that currency: the sequence type,
the weighted norms measuring smoothness, and the deterministic map from
multi-indexed eigen arrays to a single linearly ordered sequence.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DimensionError, DomainError


@dataclass(frozen=True, order=True)
class MultiIndex:
    """A d-tuple of positive integers indexing a tensor eigenfunction."""

    entries: tuple

    def __post_init__(self):
        entries = tuple(int(e) for e in self.entries)
        if len(entries) == 0:
            raise DimensionError("multi-index needs at least one entry")
        if any(e < 1 for e in entries):
            raise DomainError(f"multi-index entries must be >= 1, got {entries}")
        object.__setattr__(self, "entries", entries)

    @property
    def d(self) -> int:
        return len(self.entries)

    def norm_sq(self) -> int:
        return sum(e * e for e in self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class SmoothnessScale:
    """Weight family ell^(2s/d) defining the graded sequence norms."""

    d: int
    s: float

    def __post_init__(self):
        if self.d < 1:
            raise DimensionError("scale dimension must be >= 1")


@dataclass(frozen=True)
class CoeffSeq:
    """Truncated coefficient vector of a function in a declared basis.

    Coefficient ell (1-based) corresponds to the ell-th basis function in
    the canonical decreasing-eigenvalue order of that basis.  Truncation is
    always explicit; there is no silent tail.
    """

    basis_id: str
    coeffs: np.ndarray
    truncation: int
    d: int = 1

    def __post_init__(self):
        arr = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if arr.shape[0] != self.truncation:
            raise DimensionError(
                f"coeffs has {arr.shape[0]} entries, truncation says {self.truncation}"
            )
        if not np.all(np.isfinite(arr)):
            raise DomainError("coefficients must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @classmethod
    def from_array(cls, arr, basis_id: str, d: int = 1) -> "CoeffSeq":
        arr = np.asarray(arr, dtype=float).reshape(-1)
        return cls(basis_id=basis_id, coeffs=arr, truncation=arr.shape[0], d=d)

    def save(self, path) -> None:
        """CSV with header index,coeff plus a JSON sidecar {basis_id, d, N}."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "coeff"])
            for ell, c in enumerate(self.coeffs, start=1):
                w.writerow([ell, format(c, ".17g")])
        sidecar = {"basis_id": self.basis_id, "d": self.d, "N": self.truncation}
        with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
            json.dump(sidecar, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CoeffSeq":
        path = Path(path)
        with open(path.with_suffix(path.suffix + ".json")) as fh:
            sidecar = json.load(fh)
        coeffs = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                coeffs.append(float(row["coeff"]))
        if len(coeffs) != sidecar["N"]:
            raise DimensionError("CSV row count disagrees with sidecar N")
        return cls.from_array(coeffs, basis_id=sidecar["basis_id"], d=sidecar["d"])


def gs_norm(v: CoeffSeq, scale: SmoothnessScale) -> float:
    """Weighted norm sqrt(sum_ell v_ell^2 ell^(2s/d)); Euclidean at s = 0."""
    if v.d != scale.d:
        raise DimensionError(
            f"sequence dimension {v.d} does not match scale dimension {scale.d}"
        )
    ell = np.arange(1, v.truncation + 1, dtype=float)
    weights = ell ** (2.0 * scale.s / scale.d)
    return float(np.sqrt(np.sum(v.coeffs**2 * weights)))


def sort_multiindexed(values: Mapping[MultiIndex, tuple]) -> list:
    """Order a multi-indexed eigen array into a single decreasing sequence.

    `values` maps each MultiIndex to a pair (eigenvalue, payload) with
    eigenvalue > 0.  Returns [(index, eigenvalue, payload), ...] sorted by
    decreasing eigenvalue; ties broken lexicographically on the index
    (smallest first) so the ordering is reproducible.
    """
    items = []
    for idx, (eig, payload) in values.items():
        eig = float(eig)
        if not (eig > 0.0):
            raise DomainError(f"eigenvalue at {idx.entries} must be positive, got {eig}")
        items.append((idx, eig, payload))
    items.sort(key=lambda t: (-t[1], t[0].entries))
    return items


def evaluate(v: CoeffSeq, basis, x):
    """Synthesize sum_{ell<=N} v_ell h_ell(x).

    x may be one point (scalar or length-d vector) or an (npoints, d)
    array; returns a float for a single point, an array otherwise.
    """
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts[:, None] if basis.d == 1 else pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != basis.d:
        raise DimensionError(
            f"points of dimension {basis.d} expected, got shape {np.shape(x)}"
        )
    vals = basis.eval_h(pts)
    if vals.shape[1] != v.truncation:
        raise DimensionError(
            f"basis truncation {vals.shape[1]} != sequence truncation {v.truncation}"
        )
    out = vals @ v.coeffs
    return float(out[0]) if out.size == 1 else out
