"""
Control-affine plants, quadratic-in-input running costs, fixed feedback
policies, and the quantities the critic consumes: the regressor sigma and
the Bellman output y.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .kernels import KernelSpec
from .native_space import CenterSet, HNElement, grad_element


def _rowwise(fn, X, shape):
    return np.array([np.asarray(fn(x), dtype=float).reshape(shape) for x in X]).reshape((-1,) + shape)


@dataclass(frozen=True)
class ControlAffineSystem:
    """xdot = f(x) + g(x) u with f: R^n -> R^n and g: R^n -> R^{n x m}.

    With ``vectorized=True`` the callables also accept a stack of states of
    shape (k, n) and return (k, n) and (k, n, m) respectively.
    """

    state_dim: int
    input_dim: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    vectorized: bool = False

    def drift(self, x):
        return np.asarray(self.f(x), dtype=float).reshape(self.state_dim)

    def input_map(self, x):
        return np.asarray(self.g(x), dtype=float).reshape(self.state_dim, self.input_dim)

    def drift_many(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.state_dim)
        if self.vectorized:
            return np.asarray(self.f(X), dtype=float).reshape(X.shape)
        return _rowwise(self.f, X, (self.state_dim,))

    def input_map_many(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.state_dim)
        shape = (self.state_dim, self.input_dim)
        if self.vectorized:
            return np.asarray(self.g(X), dtype=float).reshape((-1,) + shape)
        return _rowwise(self.g, X, shape)


@dataclass(frozen=True)
class CostSpec:
    """r(x, u) = Q(x) + u^T R u."""

    Q: Callable[[np.ndarray], float]
    R_mat: np.ndarray
    vectorized: bool = False

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R_mat, dtype=float))
        if R.shape[0] != R.shape[1] or not np.allclose(R, R.T):
            raise ValueError("R must be a symmetric square matrix")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        object.__setattr__(self, "R_mat", R)

    def running_many(self, X, U):
        """r(x_k, u_k) for stacked states (k, n) and inputs (k, m)."""
        U = np.asarray(U, dtype=float).reshape(len(X), -1)
        q = (np.asarray(self.Q(X), dtype=float).reshape(-1) if self.vectorized
             else np.array([float(self.Q(x)) for x in X]))
        return q + np.einsum("ki,ij,kj->k", U, self.R_mat, U)


@dataclass(frozen=True)
class Policy:
    mu: Callable[[np.ndarray], np.ndarray]
    vectorized: bool = False

    def __call__(self, x):
        return np.atleast_1d(np.asarray(self.mu(x), dtype=float))

    def many(self, X, input_dim: int):
        """mu at each row of X; shape (k, input_dim)."""
        X = np.asarray(X, dtype=float)
        if self.vectorized:
            return np.asarray(self.mu(X), dtype=float).reshape(X.shape[0], input_dim)
        return _rowwise(self.mu, X, (input_dim,))

    @classmethod
    def from_value_estimate(cls, elem: HNElement, kernel: KernelSpec,
                            sys: ControlAffineSystem, cost: CostSpec) -> "Policy":
        """The improved control -1/2 R^{-1} g^T grad v for a kernel expansion v."""
        def mu(x):
            grad = grad_element(elem, kernel, None, x, singular="zero")
            return improved_control(sys, cost, grad, x)
        return cls(mu)


class Problem(NamedTuple):
    sys: ControlAffineSystem
    cost: CostSpec
    policy: Policy
    value: Callable[[np.ndarray], np.ndarray]
    control: Callable[[np.ndarray], np.ndarray]
    value_grad: Callable[[np.ndarray], np.ndarray]


def closed_loop_drift(sys: ControlAffineSystem, pol: Policy, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return sys.drift(x) + sys.input_map(x) @ pol(x)


def running_cost(cost: CostSpec, x, u) -> float:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float(cost.Q(np.asarray(x, dtype=float)) + u @ cost.R_mat @ u)


def sigma(kernel: KernelSpec, cs: CenterSet, sys: ControlAffineSystem, pol: Policy, x,
          *, singular="raise") -> np.ndarray:
    """sigma_i(x) = (f(x) + g(x) mu(x))^T grad K(xi_i, .)(x)."""
    drift = closed_loop_drift(sys, pol, x)
    return kernel.grad_matrix(cs.centers, x, singular=singular) @ drift


def bellman_output(cost: CostSpec, pol: Policy, x) -> float:
    """y(x) = -r(x, mu(x))."""
    return -running_cost(cost, x, pol(x))


def hamiltonian_residual(sys: ControlAffineSystem, cost: CostSpec, pol: Policy, value_grad, x) -> float:
    """grad V^T (f + g mu) + Q + mu^T R mu."""
    grad = np.asarray(value_grad, dtype=float)
    return float(grad @ closed_loop_drift(sys, pol, x)) - bellman_output(cost, pol, x)


def improved_control(sys: ControlAffineSystem, cost: CostSpec, value_grad, x) -> np.ndarray:
    """-1/2 R^{-1} g(x)^T grad V."""
    gT = sys.input_map(np.asarray(x, dtype=float)).T
    return -0.5 * np.linalg.solve(cost.R_mat, gT @ np.asarray(value_grad, dtype=float))


# -- benchmark -----------------------------------------------------------------

# Written over the last axis so that a single state or a stack of them works.
def _bench_f(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    c = np.cos(2.0 * x1) + 2.0
    return np.stack([-x1 + x2, -0.5 * x1 - 0.5 * x2 * (1.0 - c * c)], axis=-1)


def _bench_g(x):
    x = np.asarray(x, dtype=float)
    c = np.cos(2.0 * x[..., 0]) + 2.0
    return np.stack([np.zeros_like(c), c], axis=-1)[..., None]


def benchmark_value(x):
    """V*(x) = 0.5 x1^2 + x2^2; accepts a point or an (n, 2) array."""
    x = np.asarray(x, dtype=float)
    return 0.5 * x[..., 0] ** 2 + x[..., 1] ** 2


def benchmark_value_grad(x):
    x = np.asarray(x, dtype=float)
    return np.stack([x[..., 0], 2.0 * x[..., 1]], axis=-1)


def benchmark_control(x):
    """u*(x) = -(cos 2x1 + 2) x2; accepts a point or an (n, 2) array."""
    x = np.asarray(x, dtype=float)
    return -(np.cos(2.0 * x[..., 0]) + 2.0) * x[..., 1]


def benchmark_problem() -> Problem:
    """Nonlinear 2-state plant with known optimal value and feedback.

    The evaluated policy is the optimal one, so V_mu = V*.
    """
    sys = ControlAffineSystem(2, 1, _bench_f, _bench_g, vectorized=True)
    cost = CostSpec(lambda x: np.sum(np.asarray(x, dtype=float) ** 2, axis=-1), np.eye(1),
                    vectorized=True)
    pol = Policy(lambda x: benchmark_control(x)[..., None], vectorized=True)
    return Problem(sys, cost, pol, benchmark_value, benchmark_control, benchmark_value_grad)


PROBLEMS: dict[str, Callable[[], Problem]] = {
    "benchmark": benchmark_problem,
}


def get_problem(name: str) -> Problem:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(sorted(PROBLEMS))}") from None
