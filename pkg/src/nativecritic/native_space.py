"""
Finite-dimensional subspaces H_N of a native space spanned by kernel sections
at scattered centers.

Everything here is built from the reproducing property: the H-orthogonal
projection of v onto span{K(xi_i, .)} only needs the samples v(xi_i), and the
H inner product of two expansions is a Grammian quadratic form.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .kernels import KernelSpec


class IllConditionedCentersError(np.linalg.LinAlgError):
    """The Grammian could not be factorized within the allowed jitter."""


@dataclass(frozen=True, eq=False)
class CenterSet:
    """Ordered centers inside the closed box ``[lower, upper]``."""

    centers: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        c = np.array(self.centers, dtype=float, ndmin=2)
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if c.shape[1] != lo.shape[0] or lo.shape != hi.shape:
            raise ValueError("centers and domain bounds disagree on dimension")
        if np.any(hi < lo):
            raise ValueError("domain upper bounds must be >= lower bounds")
        if c.shape[0] == 0:
            raise ValueError("a center set needs at least one center")
        tol = 1e-12 * max(1.0, float(np.max(np.abs(np.r_[lo, hi]))))
        if np.any(c < lo - tol) or np.any(c > hi + tol):
            raise ValueError("all centers must lie inside the domain box")
        for name, arr in (("centers", c), ("lower", lo), ("upper", hi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def min_separation(self) -> float:
        if self.n < 2:
            return math.inf
        diff = self.centers[:, None, :] - self.centers[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        np.fill_diagonal(dist, np.inf)
        return float(dist.min())

    @classmethod
    def grid(cls, m, lower=(-1.0, -1.0), upper=(1.0, 1.0)) -> "CenterSet":
        """Uniform tensor grid with ``m`` points per axis spanning the box."""
        if m < 1:
            raise ValueError("grid size m must be >= 1")
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if m == 1:
            axes = [np.array([0.5 * (lo + hi)]) for lo, hi in zip(lower, upper)]
        else:
            axes = [np.linspace(lo, hi, m) for lo, hi in zip(lower, upper)]
        return cls(tensor_points(axes), lower, upper)

    @classmethod
    def from_csv(cls, path, lower, upper) -> "CenterSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty center file")
        header = [h.strip() for h in rows[0]]
        expected = [f"x{i + 1}" for i in range(len(header))]
        if header != expected:
            raise ValueError(f"{path}: header must be {','.join(expected)}, got {','.join(header)}")
        data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
        return cls(data.reshape(-1, len(header)), lower, upper)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i + 1}" for i in range(self.dim)])
            for row in self.centers:
                w.writerow([format(v, ".17g") for v in row])


@dataclass(frozen=True, eq=False)
class GrammianFactor:
    gram: np.ndarray
    factor: np.ndarray
    jitter: float
    log_det: float

    def solve(self, b):
        """(gram + jitter I)^{-1} b via the triangular factor."""
        return linalg.cho_solve((self.factor, True), b, check_finite=False)

    def whiten(self, b):
        """L^{-1} b."""
        return linalg.solve_triangular(self.factor, b, lower=True, check_finite=False)


@dataclass(frozen=True, eq=False)
class HNElement:
    """sum_i coeffs[i] K(xi_i, .) over the centers of ``centers``."""

    coeffs: np.ndarray
    centers: CenterSet = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.shape[0] != self.centers.n:
            raise ValueError(f"{c.shape[0]} coefficients for {self.centers.n} centers")
        object.__setattr__(self, "coeffs", c)

    def __sub__(self, other: "HNElement") -> "HNElement":
        """Difference expressed on the concatenated center list."""
        if other.centers is self.centers:
            return HNElement(self.coeffs - other.coeffs, self.centers)
        lo = np.minimum(self.centers.lower, other.centers.lower)
        hi = np.maximum(self.centers.upper, other.centers.upper)
        joint = _UncheckedCenters(np.vstack([self.centers.centers, other.centers.centers]), lo, hi)
        return HNElement(np.r_[self.coeffs, -other.coeffs], joint)


class _UncheckedCenters(CenterSet):
    """Center list that may repeat points; used only for algebra on sums."""


class GridSup(NamedTuple):
    value: float
    spacing: np.ndarray
    location: np.ndarray


def tensor_points(axes) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


def eval_grid(lower, upper, resolution: int):
    """Tensor grid with ``resolution`` points per axis; returns (points, spacing)."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2 points per axis")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper <= lower):
        raise ValueError("domain box has an empty interior")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(lower, upper)]
    return tensor_points(axes), (upper - lower) / (resolution - 1)


def grammian(kernel: KernelSpec, cs: CenterSet, jitter_max: float | None = None) -> GrammianFactor:
    """Factor K_N, adding diagonal jitter 0, 1e-12 tr/N, x10, ... up to ``jitter_max``.

    ``jitter_max`` defaults to 1e-8 tr/N.
    """
    sep = cs.min_separation()
    if sep == 0.0:
        # jitter would hide a repeated center instead of reporting it
        raise IllConditionedCentersError(
            f"Grammian of {cs.n} centers is singular: minimum pairwise center distance is 0")
    K = kernel.matrix(cs.centers, cs.centers)
    K = 0.5 * (K + K.T)
    n = K.shape[0]
    scale = float(np.trace(K)) / n
    if jitter_max is None:
        jitter_max = 1e-8 * scale
    jitter = 0.0
    eye = np.eye(n)
    while True:
        try:
            L = linalg.cholesky(K + jitter * eye, lower=True, check_finite=False)
        except linalg.LinAlgError:
            L = None
        if L is not None and np.all(np.diag(L) > 0):
            break
        jitter = 1e-12 * scale if jitter == 0.0 else 10.0 * jitter
        if jitter > jitter_max * (1.0 + 1e-12):
            raise IllConditionedCentersError(
                f"Grammian of {n} centers not factorizable with jitter <= {jitter_max:.3g}; "
                f"minimum pairwise center distance is {sep:.3g}")
    K.setflags(write=False)
    L.setflags(write=False)
    return GrammianFactor(K, L, jitter, float(2.0 * np.sum(np.log(np.diag(L)))))


def project(kernel: KernelSpec, cs: CenterSet, gf: GrammianFactor, samples) -> HNElement:
    """Coefficients of the H-orthogonal projection from samples v(xi_i)."""
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.shape[0] != cs.n:
        raise ValueError(f"expected {cs.n} samples, got {samples.shape[0]}")
    return HNElement(gf.solve(samples), cs)


def eval_element(elem: HNElement, kernel: KernelSpec, cs: CenterSet | None, x):
    """Value(s) of the expansion at ``x`` (a point, or an (n, d) array of points)."""
    cs = elem.centers if cs is None else cs
    x = np.asarray(x, dtype=float)
    vals = kernel.matrix(x.reshape(-1, kernel.dim), cs.centers) @ elem.coeffs
    return float(vals[0]) if x.ndim == 1 else vals


def grad_element(elem: HNElement, kernel: KernelSpec, cs: CenterSet | None, x, *, singular="raise"):
    """Gradient of the expansion at the single point ``x``."""
    cs = elem.centers if cs is None else cs
    return elem.coeffs @ kernel.grad_matrix(cs.centers, x, singular=singular)


def grad_element_many(elem: HNElement, kernel: KernelSpec, X, *, singular="zero", chunk=2048):
    """Gradients at every row of ``X``; shape (n, d)."""
    X = np.asarray(X, dtype=float).reshape(-1, kernel.dim)
    out = np.empty_like(X)
    for s in range(0, X.shape[0], chunk):
        G = kernel.grads(elem.centers.centers, X[s:s + chunk], singular=singular)
        out[s:s + chunk] = np.einsum("i,ijk->jk", elem.coeffs, G)
    return out


def power_function(kernel: KernelSpec, cs: CenterSet, gf: GrammianFactor, x):
    """sqrt(K(x,x) - k(x)^T K_N^{-1} k(x)), negative round-off clamped to 0.

    Accepts a single point or an (n, d) array.
    """
    x = np.asarray(x, dtype=float)
    X = x.reshape(-1, kernel.dim)
    k = kernel.matrix(cs.centers, X)          # (N, n)
    z = gf.whiten(k)
    diag = kernel.radial(np.zeros(X.shape[0]))
    p2 = diag - np.einsum("ij,ij->j", z, z)
    p = np.sqrt(np.maximum(p2, 0.0))
    return float(p[0]) if x.ndim == 1 else p


def sup_power(kernel: KernelSpec, cs: CenterSet, gf: GrammianFactor, resolution: int,
              chunk: int = 4096) -> GridSup:
    X, spacing = eval_grid(cs.lower, cs.upper, resolution)
    best, where = -1.0, None
    for s in range(0, X.shape[0], chunk):
        p = power_function(kernel, cs, gf, X[s:s + chunk])
        i = int(np.argmax(p))
        if p[i] > best:
            best, where = float(p[i]), X[s + i]
    return GridSup(best, spacing, where)


def fill_distance(cs: CenterSet, resolution: int) -> float:
    """max over the evaluation grid of the distance to the nearest center."""
    from scipy.spatial import cKDTree

    X, _ = eval_grid(cs.lower, cs.upper, resolution)
    dist, _ = cKDTree(cs.centers).query(X)
    return float(dist.max())


def h_norm(elem: HNElement, gf: GrammianFactor | None = None, kernel: KernelSpec | None = None) -> float:
    """sqrt(c^T K c). Pass ``gf`` for elements on its centers, or ``kernel`` to
    build the Grammian of the element's own center list."""
    if gf is not None and gf.gram.shape[0] == elem.coeffs.shape[0]:
        K = gf.gram
    elif kernel is not None:
        K = kernel.matrix(elem.centers.centers, elem.centers.centers)
    else:
        raise ValueError("h_norm needs the matching GrammianFactor or the kernel")
    c = elem.coeffs
    return math.sqrt(max(float(c @ K @ c), 0.0))


def doubling_bound(kernel: KernelSpec, cs: CenterSet, gf: GrammianFactor, resolution: int,
                   R: float) -> float:
    """sqrt(vol(Omega)) * sup P_N * R, bounding ||(I - Pi_N) L u||_H for ||u||_L2 <= R."""
    if R < 0:
        raise ValueError("R must be nonnegative")
    return math.sqrt(cs.volume) * sup_power(kernel, cs, gf, resolution).value * R


def trapezoid_weights(lower, upper, resolution: int):
    """Nodes and tensor trapezoid weights on the box."""
    X, spacing = eval_grid(lower, upper, resolution)
    w1 = [np.full(resolution, h) for h in spacing]
    for w in w1:
        w[0] *= 0.5
        w[-1] *= 0.5
    W = np.ones(1)
    for w in w1:
        W = np.multiply.outer(W, w).ravel()
    return X, W


def integral_operator(kernel: KernelSpec, u, lower, upper, resolution: int):
    """Forward map v = L u with (L u)(x) = int K(x, y) u(y) dy by trapezoid quadrature.

    The quadrature turns L u into an explicit kernel expansion on the
    quadrature nodes, so the returned element has exactly computable H-norm.
    Also returns the discrete ||u||_L2 under the same rule.
    """
    X, W = trapezoid_weights(lower, upper, resolution)
    uvals = np.asarray(u(X), dtype=float).reshape(-1)
    nodes = _UncheckedCenters(X, np.asarray(lower, float), np.asarray(upper, float))
    elem = HNElement(W * uvals, nodes)
    return elem, math.sqrt(float(np.sum(W * uvals * uvals)))
