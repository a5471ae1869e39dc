"""
Closed-form radial Mercer kernels with analytic gradients.

Every kernel is written as phi(r) with r = ||x - y||_2. The supported
families are

=====================  ===========================================================
family                 phi(r), s = r / lengthscale
=====================  ===========================================================
gaussian               exp(-s^2)
exponential            exp(-s)
inverse_multiquadric   (c^2 + s^2)^beta, beta < 0
wendland               phi_{d,k}(r / support_radius), k in {0, 1, 2}, d <= 3
sobolev_matern         Matern with nu = k - d/2 in {1/2, 3/2, 5/2}, phi(0) = 1
=====================  ===========================================================

Gradients are returned with respect to the *second* argument, i.e.
``grad2(x, y) = d/dy K(x, y)``, which is the gradient of the kernel section
``K_x`` evaluated at ``y``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class KernelError(ValueError):
    """Invalid kernel hyperparameters or an unsupported request."""


class SingularGradientError(ArithmeticError):
    """Raised when a kernel gradient is requested at a non-differentiable point."""


class Family(str, enum.Enum):
    GAUSSIAN = "gaussian"
    EXPONENTIAL = "exponential"
    INVERSE_MULTIQUADRIC = "inverse_multiquadric"
    WENDLAND = "wendland"
    SOBOLEV_MATERN = "sobolev_matern"


# Wendland phi_{d,k}(s) on [0, 1], normalized to phi(0) = 1. Rows: dimension
# class (1 for d = 1, 3 for d = 2, 3), smoothness k. Each entry holds
# (phi, dphi/ds / s or None when that quotient is singular at s = 0, dphi/ds).
def _w10(s): return 1.0 - s
def _w11(s): return (1.0 - s) ** 3 * (3.0 * s + 1.0)
def _w12(s): return (1.0 - s) ** 5 * (8.0 * s * s + 5.0 * s + 1.0)
def _w30(s): return (1.0 - s) ** 2
def _w31(s): return (1.0 - s) ** 4 * (4.0 * s + 1.0)
def _w32(s): return (1.0 - s) ** 6 * (35.0 * s * s + 18.0 * s + 3.0) / 3.0


_WENDLAND = {
    (1, 0): (_w10, None, lambda s: -np.ones_like(s)),
    (1, 1): (_w11, lambda s: -12.0 * (1.0 - s) ** 2, None),
    (1, 2): (_w12, lambda s: -14.0 * (4.0 * s + 1.0) * (1.0 - s) ** 4, None),
    (3, 0): (_w30, None, lambda s: -2.0 * (1.0 - s)),
    (3, 1): (_w31, lambda s: -20.0 * (1.0 - s) ** 3, None),
    (3, 2): (_w32, lambda s: -56.0 / 3.0 * (5.0 * s + 1.0) * (1.0 - s) ** 5, None),
}

_MATERN_NU = (0.5, 1.5, 2.5)
_SQRT3 = math.sqrt(3.0)
_SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family together with its hyperparameters.

    ``smoothness`` is the Sobolev index k for ``sobolev_matern`` (so that the
    Matern order is nu = k - dim/2) and the Wendland smoothness for
    ``wendland``. ``rate_constant`` is the generic constant used by
    :func:`power_bound_fn`.
    """

    family: Family
    dim: int = 2
    lengthscale: float = 1.0
    smoothness: float = 2.5
    shape: float = 1.0
    beta: float = -0.5
    support_radius: float = 1.0
    rate_constant: float = 1.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", Family(self.family))
        except ValueError:
            raise KernelError(f"unknown kernel family {self.family!r}") from None
        if int(self.dim) != self.dim or self.dim < 1:
            raise KernelError(f"dim must be a positive integer, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))
        if not self.lengthscale > 0:
            raise KernelError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.rate_constant > 0:
            raise KernelError("rate_constant must be positive")
        fam = self.family
        if fam is Family.SOBOLEV_MATERN:
            nu = self.smoothness - self.dim / 2.0
            if not any(abs(nu - v) < 1e-12 for v in _MATERN_NU):
                raise KernelError(
                    "sobolev_matern needs smoothness - dim/2 in {1/2, 3/2, 5/2}, "
                    f"got k={self.smoothness}, d={self.dim}")
        elif fam is Family.WENDLAND:
            if self.dim > 3:
                raise KernelError("wendland kernels are tabulated for dim <= 3 only")
            if self.smoothness not in (0, 1, 2):
                raise KernelError(f"wendland smoothness must be 0, 1 or 2, got {self.smoothness}")
            if not self.support_radius > 0:
                raise KernelError("support_radius must be positive")
        elif fam is Family.INVERSE_MULTIQUADRIC:
            if not self.shape > 0:
                raise KernelError("inverse multiquadric shape c must be positive")
            if not self.beta < 0:
                raise KernelError("inverse multiquadric beta must be negative")

    @property
    def matern_nu(self) -> float:
        return self.smoothness - self.dim / 2.0

    @property
    def scale(self) -> float:
        """Radius r is divided by this before entering phi."""
        if self.family is Family.WENDLAND:
            return self.support_radius
        return self.lengthscale

    @property
    def singular_at_zero(self) -> bool:
        """True when phi has a nonzero slope at r = 0 (gradient undefined at x = y)."""
        if self.family is Family.EXPONENTIAL:
            return True
        if self.family is Family.SOBOLEV_MATERN:
            return abs(self.matern_nu - 0.5) < 1e-12
        if self.family is Family.WENDLAND:
            return self.smoothness == 0
        return False

    # -- radial profile --------------------------------------------------
    def _phi(self, s):
        fam = self.family
        if fam is Family.GAUSSIAN:
            return np.exp(-s * s)
        if fam is Family.EXPONENTIAL:
            return np.exp(-s)
        if fam is Family.INVERSE_MULTIQUADRIC:
            return (self.shape ** 2 + s * s) ** self.beta
        if fam is Family.WENDLAND:
            phi = _WENDLAND[self._wendland_key()][0]
            return np.where(s < 1.0, phi(np.minimum(s, 1.0)), 0.0)
        nu = self.matern_nu
        if nu < 1.0:
            return np.exp(-s)
        if nu < 2.0:
            return (1.0 + _SQRT3 * s) * np.exp(-_SQRT3 * s)
        return (1.0 + _SQRT5 * s + 5.0 * s * s / 3.0) * np.exp(-_SQRT5 * s)

    def _dphi_over_s(self, s):
        """(dphi/ds) / s for the families where that quotient is smooth at 0."""
        fam = self.family
        if fam is Family.GAUSSIAN:
            return -2.0 * np.exp(-s * s)
        if fam is Family.INVERSE_MULTIQUADRIC:
            return 2.0 * self.beta * (self.shape ** 2 + s * s) ** (self.beta - 1.0)
        if fam is Family.WENDLAND:
            q = _WENDLAND[self._wendland_key()][1]
            return np.where(s < 1.0, q(np.minimum(s, 1.0)), 0.0)
        nu = self.matern_nu
        if nu < 2.0:
            return -3.0 * np.exp(-_SQRT3 * s)
        return -5.0 / 3.0 * (1.0 + _SQRT5 * s) * np.exp(-_SQRT5 * s)

    def _dphi(self, s):
        """dphi/ds for the families with a kink at s = 0."""
        if self.family is Family.WENDLAND:
            d = _WENDLAND[self._wendland_key()][2]
            return np.where(s < 1.0, d(np.minimum(s, 1.0)), 0.0)
        return -np.exp(-s)

    def _wendland_key(self):
        return (1 if self.dim == 1 else 3, int(self.smoothness))

    # -- public API --------------------------------------------------------
    def radial(self, r):
        """phi evaluated at distance(s) ``r``."""
        return self._phi(np.asarray(r, dtype=float) / self.scale)

    def matrix(self, X, Y):
        """Kernel matrix ``[K(x_i, y_j)]`` for point arrays of shape (n, d), (m, d)."""
        X = _as_points(X, self.dim)
        Y = _as_points(Y, self.dim)
        diff = X[:, None, :] - Y[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return self.radial(r)

    def grad_matrix(self, X, y, *, singular="raise"):
        """Gradients ``d/dy K(x_i, y)`` for every row x_i of ``X``; shape (n, d).

        At coincident points the gradient of a kernel with a kink at the origin
        does not exist. ``singular="raise"`` reports it, ``singular="zero"``
        returns the symmetric subgradient 0 for those rows.
        """
        y = _as_point(y, self.dim)
        return self.grads(X, y[None, :], singular=singular)[:, 0, :]

    def grads(self, X, Y, *, singular="raise"):
        """``d/dy K(x_i, y_j)`` for all pairs; shape (n, m, d)."""
        X = _as_points(X, self.dim)
        Y = _as_points(Y, self.dim)
        diff = Y[None, :, :] - X[:, None, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        h = self.scale
        s = r / h
        if not self.singular_at_zero:
            coef = self._dphi_over_s(s) / (h * h)
            return coef[..., None] * diff
        at_zero = r == 0.0
        if singular == "raise" and at_zero.any():
            i, j = (int(v[0]) for v in np.nonzero(at_zero))
            raise SingularGradientError(
                f"{self.family.value} kernel gradient is singular at r = 0 "
                f"(center {i} at {X[i].tolist()})")
        safe_r = np.where(at_zero, 1.0, r)
        coef = np.where(at_zero, 0.0, self._dphi(s) / (h * safe_r))
        return coef[..., None] * diff

    def directional(self, X, Y, V, *, singular="raise"):
        """``d/dy K(x_i, y_j) . v_j`` as an (m, n) array, one row per point y_j.

        Same values as contracting :meth:`grads` with ``V`` but without the
        (n, m, d) intermediate; this is the batched sigma-regressor.
        """
        X = _as_points(X, self.dim)
        Y = _as_points(Y, self.dim)
        V = np.asarray(V, dtype=float).reshape(Y.shape)
        dots = np.zeros((Y.shape[0], X.shape[0]))
        r2 = np.zeros_like(dots)
        for k in range(self.dim):
            dk = Y[:, k, None] - X[None, :, k]
            dots += dk * V[:, k, None]
            r2 += dk * dk
        r = np.sqrt(r2)
        h = self.scale
        s = r / h
        if not self.singular_at_zero:
            return self._dphi_over_s(s) / (h * h) * dots
        at_zero = r == 0.0
        if singular == "raise" and at_zero.any():
            j, i = (int(v[0]) for v in np.nonzero(at_zero))
            raise SingularGradientError(
                f"{self.family.value} kernel gradient is singular at r = 0 "
                f"(center {i} at {X[i].tolist()})")
        safe_r = np.where(at_zero, 1.0, r)
        return np.where(at_zero, 0.0, self._dphi(s) / (h * safe_r)) * dots


def _as_point(x, d):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != d:
        raise ValueError(f"point has dimension {x.shape[0]}, kernel expects {d}")
    return x


def _as_points(X, d):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"points have shape {X.shape}, kernel expects (n, {d})")
    return X


def eval(kernel: KernelSpec, x, y) -> float:  # noqa: A001 - mirrors the operation name
    """K(x, y)."""
    x = _as_point(x, kernel.dim)
    y = _as_point(y, kernel.dim)
    return float(kernel.radial(np.linalg.norm(x - y)))


def grad2(kernel: KernelSpec, x, y) -> np.ndarray:
    """Gradient of ``K(x, .)`` at ``y``.

    Raises :class:`SingularGradientError` for x == y when the kernel has a
    kink at the origin (exponential, Matern nu = 1/2, Wendland k = 0).
    """
    return kernel.grad_matrix(_as_point(x, kernel.dim)[None, :], y)[0]


def diagonal_bound(kernel: KernelSpec) -> float:
    """Kbar with K(x, x) <= Kbar^2; radial kernels peak at r = 0."""
    return math.sqrt(float(kernel.radial(0.0)))


def power_bound_fn(kernel: KernelSpec, h: float) -> float:
    """sqrt(F(h)) where F bounds the squared power function at fill distance h.

    Only the h-dependence is meaningful; ``kernel.rate_constant`` plays the
    role of the generic constant in the exponential-type rows.
    """
    if not h > 0:
        raise ValueError(f"fill distance must be positive, got {h}")
    a = kernel.rate_constant
    fam = kernel.family
    if fam in (Family.GAUSSIAN, Family.EXPONENTIAL):
        return math.sqrt(math.exp(-a * abs(math.log(h)) / h))
    if fam is Family.INVERSE_MULTIQUADRIC:
        return math.sqrt(math.exp(-a / h))
    if fam is Family.WENDLAND:
        return h ** (kernel.smoothness + 0.5)
    if fam is Family.SOBOLEV_MATERN:
        return h ** (kernel.smoothness - kernel.dim / 2.0)
    raise KernelError(f"no power-function bound for family {fam.value}")
