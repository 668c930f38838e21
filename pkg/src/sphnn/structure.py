"""Port-Hamiltonian coefficient bundles and the distances between them.

A coefficient set carries the full data of a stochastic port-Hamiltonian
system: storage H with its first two derivatives, skew interconnection J,
dissipation R, diffusion sigma and port map g.  The drift it induces is

    b(x, u) = (J(x) - R(x)) grad H(x) + g(x) u,

and the port output is y(x) = g(x)^T grad H(x).

Two constructors enforce the structural constraints exactly for learned
coefficients: ``skew_from`` (A - A^T) and ``gram_from`` (D^T D).  Distances
between two sets are measured as sup norms over a uniform grid on an
axis-aligned box, with the storage compared in C^2 norm (value + gradient
+ Hessian operator norm, each a separate sup).

All maps are pure; sets are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class StructureError(ValueError):
    """A structural precondition (shape, skewness, positivity) failed."""


def skew_from(a: np.ndarray) -> np.ndarray:
    """Skew-symmetric part constructor A - A^T (exact, not averaged)."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StructureError(f"skew_from needs a square matrix, got shape {a.shape}")
    return a - a.T


def gram_from(d: np.ndarray) -> np.ndarray:
    """Gram constructor D^T D: symmetric positive semidefinite by build."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2:
        raise StructureError(f"gram_from needs a matrix, got shape {d.shape}")
    return d.T @ d


def operator_norm(m: np.ndarray) -> float:
    """Largest singular value."""
    return float(np.linalg.norm(np.atleast_2d(m), 2))


@dataclass(frozen=True)
class CompactBox:
    """Axis-aligned box standing in for the compact set, with a scan grid."""

    lower: np.ndarray
    upper: np.ndarray
    grid_points_per_axis: int = 41

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise StructureError("box bounds must be 1-d vectors of equal length")
        if not np.all(lo < hi):
            raise StructureError("box requires lower < upper componentwise")
        if self.grid_points_per_axis < 2:
            raise StructureError("need at least 2 grid points per axis")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x: np.ndarray) -> bool:
        """Closed-box membership (boundary counts as inside)."""
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def contains_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def grid(self) -> np.ndarray:
        """Uniform scan grid, shape (grid_points_per_axis ** dim, dim)."""
        axes = [
            np.linspace(self.lower[i], self.upper[i], self.grid_points_per_axis)
            for i in range(self.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class CoefficientSet:
    """Full SPHS coefficient bundle, analytic or learned."""

    n: int
    d: int
    m: int
    H: Callable[[np.ndarray], float]
    grad_H: Callable[[np.ndarray], np.ndarray]
    hess_H: Callable[[np.ndarray], np.ndarray]
    J: Callable[[np.ndarray], np.ndarray]
    R: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    provenance: str = "analytic"

    def drift(self, x: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
        """(J - R) grad H + g u."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise StructureError(f"state shape {x.shape}, expected {(self.n,)}")
        out = (self.J(x) - self.R(x)) @ self.grad_H(x)
        if u is not None:
            u = np.atleast_1d(np.asarray(u, dtype=np.float64))
            if u.shape != (self.m,):
                raise StructureError(f"input shape {u.shape}, expected {(self.m,)}")
            out = out + self.g(x) @ u
        return out

    def output(self, x: np.ndarray) -> np.ndarray:
        """Port output g(x)^T grad H(x)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise StructureError(f"state shape {x.shape}, expected {(self.n,)}")
        return self.g(x).T @ self.grad_H(x)

    def validate_structure(
        self,
        points: np.ndarray,
        skew_tol: float = 1e-12,
        psd_tol: float = 1e-10,
        require_psd: bool = True,
    ) -> None:
        """Check J skewness and (optionally) R positive semidefiniteness.

        The PSD check is skipped for sets that deliberately embed a
        sign-indefinite nonconservative term (the Van der Pol storage
        choice); those document themselves by validating with
        require_psd=False.
        """
        for x in np.atleast_2d(points):
            j = self.J(x)
            if np.abs(j + j.T).max() > skew_tol:
                raise StructureError(f"J not skew at {x}")
            if require_psd:
                r = self.R(x)
                if np.abs(r - r.T).max() > 1e-10:
                    raise StructureError(f"R not symmetric at {x}")
                if np.linalg.eigvalsh(0.5 * (r + r.T)).min() < -psd_tol:
                    raise StructureError(f"R not PSD at {x}")


@dataclass(frozen=True)
class CoefficientDistance:
    """Grid sup-norm gaps between two coefficient sets."""

    sup_J: float
    sup_R: float
    sup_sigma: float
    c2_H: float

    @property
    def total(self) -> float:
        return self.sup_J + self.sup_R + self.sup_sigma + self.c2_H


def coefficient_distance(
    a: CoefficientSet, b: CoefficientSet, box: CompactBox
) -> CoefficientDistance:
    """Sup over the box grid of operator-norm coefficient gaps.

    The storage gap is the C^2 norm: sup |dH| + sup |grad dH| + sup of the
    Hessian-difference operator norm, each taken separately over the grid.
    """
    if (a.n, a.d, a.m) != (b.n, b.d, b.m):
        raise StructureError("coefficient sets must share dimensions")
    pts = box.grid()
    sup_j = sup_r = sup_s = 0.0
    sup_h = sup_gh = sup_hh = 0.0
    for x in pts:
        sup_j = max(sup_j, operator_norm(a.J(x) - b.J(x)))
        sup_r = max(sup_r, operator_norm(a.R(x) - b.R(x)))
        sup_s = max(sup_s, operator_norm(a.sigma(x) - b.sigma(x)))
        sup_h = max(sup_h, abs(a.H(x) - b.H(x)))
        sup_gh = max(sup_gh, float(np.linalg.norm(a.grad_H(x) - b.grad_H(x))))
        sup_hh = max(sup_hh, operator_norm(a.hess_H(x) - b.hess_H(x)))
    return CoefficientDistance(sup_j, sup_r, sup_s, sup_h + sup_gh + sup_hh)
