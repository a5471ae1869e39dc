"""
Online critic in H_N: the gradient learning law in kernel-section coordinates

    K_N dW/dt = -a sigma(x) sigma(x)^T W + a sigma(x) y(x),

integrated together with the plant by fixed-step RK4, with an optional hard
dead-zone, persistency-of-excitation diagnostics and the closed-form bounds
that go with them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg
from scipy.stats import qmc

from .control_problem import (ControlAffineSystem, CostSpec, Policy, bellman_output,
                              closed_loop_drift)
from .kernels import KernelSpec, SingularGradientError
from .native_space import (CenterSet, GrammianFactor, HNElement, eval_grid, grad_element_many,
                           h_norm, project)


class DivergenceError(ArithmeticError):
    def __init__(self, t, message="state became non-finite"):
        super().__init__(f"{message} at t = {t:.6g} s")
        self.t = t


@dataclass(frozen=True)
class Excitation:
    """How the trajectory is kept informative.

    ``probing`` adds sum_i A_i sin(w_i t) to the plant input; ``reset`` jumps
    the state to a uniform random point of the domain every ``reset_period``
    seconds. Both may be active at once. Reset points come from a seeded
    pseudo-random stream (``sampler="uniform"``) or from a scrambled Sobol
    sequence (``sampler="sobol"``), which covers the box more evenly over
    any run of consecutive resets.
    """

    kind: str = "probing"
    amplitudes: tuple = (0.8, 0.6)
    frequencies: tuple = (7.0, 11.3)
    reset_period: float = 0.0
    seed: int = 0
    sampler: str = "uniform"

    def __post_init__(self):
        if self.kind not in ("none", "probing", "reset", "probing+reset"):
            raise ValueError(f"unknown excitation kind {self.kind!r}")
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        object.__setattr__(self, "frequencies", tuple(float(w) for w in self.frequencies))
        if len(self.amplitudes) != len(self.frequencies):
            raise ValueError("probing amplitudes and frequencies must have equal length")
        if not all(math.isfinite(a) for a in self.amplitudes + self.frequencies):
            raise ValueError("probing amplitudes and frequencies must be finite")
        if "reset" in self.kind and not self.reset_period > 0:
            raise ValueError("reset excitation needs reset_period > 0")
        if self.sampler not in ("uniform", "sobol"):
            raise ValueError(f"unknown reset sampler {self.sampler!r}")

    def reset_stream(self, lower, upper):
        """A function returning the next reset point in the box."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if self.sampler == "sobol":
            eng = qmc.Sobol(lower.shape[0], scramble=True, seed=self.seed)
            return lambda: lower + (upper - lower) * eng.random(1)[0]
        rng = np.random.default_rng(self.seed)
        return lambda: rng.uniform(lower, upper)

    @property
    def probing(self) -> bool:
        return "probing" in self.kind

    @property
    def resets(self) -> bool:
        return "reset" in self.kind

    def probe(self, t: float) -> float:
        if not self.probing:
            return 0.0
        return sum(A * math.sin(w * t) for A, w in zip(self.amplitudes, self.frequencies))

    def probe_many(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        if self.probing:
            for A, w in zip(self.amplitudes, self.frequencies):
                out += A * np.sin(w * t)
        return out


@dataclass(frozen=True)
class LearningConfig:
    a: float = 10.0
    dt: float = 1e-3
    horizon: float = 10.0
    deadzone_eps: float = 0.0
    normalize: bool = False
    excitation: Excitation = field(default_factory=Excitation)
    w0: Optional[tuple] = None
    sample_every: int = 1
    # Gradient convention for kernels with a kink at r = 0 when the state sits
    # exactly on a center: "zero" uses the symmetric subgradient, "raise" errors.
    singular: str = "zero"

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("learning rate a must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.deadzone_eps < 0:
            raise ValueError("deadzone_eps must be nonnegative")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if self.singular not in ("zero", "raise"):
            raise ValueError("singular must be 'zero' or 'raise'")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class CriticState:
    t: float
    x: np.ndarray
    w_hat: np.ndarray


@dataclass
class TrajectoryLog:
    t: np.ndarray
    x: np.ndarray
    w: np.ndarray
    y: np.ndarray
    y_hat: np.ndarray
    residual: np.ndarray
    deadzone_active: np.ndarray
    sigma: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> CriticState:
        return CriticState(float(self.t[-1]), self.x[-1].copy(), self.w[-1].copy())

    def header(self, weights: bool = False) -> list:
        cols = ["t"] + [f"x{i + 1}" for i in range(self.x.shape[1])]
        if weights:
            cols += [f"w{i + 1}" for i in range(self.w.shape[1])]
        return cols + ["y", "y_hat", "residual", "deadzone_active"]

    def rows(self, weights: bool = False):
        for k in range(self.t.shape[0]):
            row = [self.t[k], *self.x[k]]
            if weights:
                row += list(self.w[k])
            yield row + [self.y[k], self.y_hat[k], self.residual[k], int(self.deadzone_active[k])]

    def to_csv(self, path, weights: bool = False):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header(weights))
            for row in self.rows(weights):
                w.writerow([v if isinstance(v, int) else format(float(v), ".17g") for v in row])


@dataclass
class PEWindowStats:
    start: float
    length: float
    gamma1: float
    gamma2: float
    M: np.ndarray


class _Dynamics:
    """Right-hand side of the coupled plant / weight ODE for one run."""

    def __init__(self, cfg, kernel, cs, gf, sys, cost, pol, output):
        self.cfg, self.kernel, self.cs, self.gf = cfg, kernel, cs, gf
        self.sys, self.pol = sys, pol
        self.target = output if isinstance(output, HNElement) else None
        if output is None:
            output = lambda x: bellman_output(cost, pol, x)  # noqa: E731
        self.output = output
        self._C = np.ascontiguousarray(cs.centers)
        if self.target is not None:
            tc = self.target.centers
            self._TC = self._C if tc is cs else np.ascontiguousarray(tc.centers)

    def regressor(self, x):
        """(sigma, y, mu) at x."""
        sys = self.sys
        mu = self.pol(x)
        g = sys.input_map(x)
        drift = sys.drift(x) + g @ mu
        try:
            G = self.kernel.grad_matrix(self._C, x, singular=self.cfg.singular)
        except SingularGradientError as exc:
            raise SingularGradientError(f"sigma undefined at x = {x.tolist()}: {exc}") from None
        if self.target is None:
            y = float(self.output(x))
        else:
            # manufactured target v: y = E_x A v
            Gt = G if self._TC is self._C else self.kernel.grad_matrix(self._TC, x, singular="zero")
            y = float(self.target.coeffs @ (Gt @ drift))
        return G @ drift, y, mu, g

    def __call__(self, t, x, w, learn: bool):
        s, y, mu, g = self.regressor(x)
        p = self.cfg.excitation.probe(t)
        xdot = self.sys.drift(x) + g @ (mu + p)
        if not learn:
            return xdot, np.zeros_like(w)
        err = y - s @ w
        gain = self.cfg.a * err
        if self.cfg.normalize:
            gain /= (s @ s + 1.0) ** 2
        return xdot, gain * self.gf.solve(s)


def _rk4(dyn: _Dynamics, t, x, w, dt, learn):
    k1x, k1w = dyn(t, x, w, learn)
    h = 0.5 * dt
    k2x, k2w = dyn(t + h, x + h * k1x, w + h * k1w, learn)
    k3x, k3w = dyn(t + h, x + h * k2x, w + h * k2w, learn)
    k4x, k4w = dyn(t + dt, x + dt * k3x, w + dt * k3w, learn)
    x_new = x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    w_new = w + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
    return x_new, w_new


def step(state: CriticState, cfg: LearningConfig, kernel: KernelSpec, cs: CenterSet,
         gf: GrammianFactor, sys: ControlAffineSystem, cost: CostSpec, pol: Policy,
         output: Callable | None = None) -> CriticState:
    """Advance plant and weights by one RK4 step of length ``cfg.dt``.

    With a dead-zone the residual is sampled at the start of the step and the
    weights are held for the whole step when it lies inside the zone.
    """
    dyn = _Dynamics(cfg, kernel, cs, gf, sys, cost, pol, output)
    x_new, w_new, _ = _advance(dyn, state.t, np.asarray(state.x, float), np.asarray(state.w_hat, float))
    return CriticState(state.t + cfg.dt, x_new, w_new)


def _advance(dyn, t, x, w):
    cfg = dyn.cfg
    learn = True
    if cfg.deadzone_eps > 0:
        s, y, _, _ = dyn.regressor(x)
        learn = abs(y - s @ w) >= cfg.deadzone_eps
    x_new, w_new = _rk4(dyn, t, x, w, cfg.dt, learn)
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(w_new))):
        raise DivergenceError(t + cfg.dt)
    return x_new, w_new, learn


# overflow is caught and reported as DivergenceError
@np.errstate(over="ignore", invalid="ignore")
def simulate(cfg: LearningConfig, kernel: KernelSpec, cs: CenterSet, gf: GrammianFactor,
             sys: ControlAffineSystem, cost: CostSpec, pol: Policy, x0,
             output: Callable | None = None, block_steps: int = 4096) -> TrajectoryLog:
    """Integrate the critic over ``cfg.horizon``; log every ``cfg.sample_every`` steps.

    Row k of the log holds the state at the logged time and, in
    ``deadzone_active``, whether the weights were frozen for the step that
    starts there (always 0 on the last row).

    The policy is fixed, so the plant never sees the weights. The plant and
    its RK4 stage points are therefore integrated first (in parallel across
    reset segments), the regressors are evaluated in batches, and the weight
    ODE, linear in W, is stepped with the very same RK4 tableau in whitened
    coordinates z = L^T W. The result agrees with repeated :func:`step` calls
    to rounding.
    """
    exc = cfg.excitation
    dt, h, a = cfg.dt, 0.5 * cfg.dt, cfg.a
    n_steps = cfg.n_steps
    n_x, n_u = sys.state_dim, sys.input_dim
    next_reset = exc.reset_stream(cs.lower, cs.upper)
    reset_every = int(round(exc.reset_period / dt)) if exc.resets else 0
    reg = _BatchRegressor(cfg, kernel, cs, sys, cost, pol, output)

    L = gf.factor
    Linv = linalg.solve_triangular(L, np.eye(cs.n), lower=True, check_finite=False)
    w = np.zeros(cs.n) if cfg.w0 is None else np.array(cfg.w0, dtype=float).reshape(cs.n)
    z = L.T @ w
    x = np.array(x0, dtype=float).reshape(n_x)

    rows_t, rows_x, rows_w, rows_dz, rows_s, rows_y = [], [], [], [], [], []
    eps = cfg.deadzone_eps
    seg = reset_every if reset_every else max(n_steps, 1)
    k0 = 0
    while k0 < n_steps:
        # segments starting in this block; a long segment is cut into blocks
        if seg <= block_steps:
            n_seg = max(1, block_steps // seg)
            length = seg
        else:
            n_seg, length = 1, min(block_steps, seg - k0 % seg)
        starts = []
        for j in range(n_seg):
            k = k0 + j * length
            if k >= n_steps:
                break
            if reset_every and k > 0 and k % reset_every == 0:
                starts.append(next_reset())
            else:
                starts.append(x)
        n_blk = min(len(starts) * length, n_steps - k0)
        Xs, Ds, Us, x_last = _plant_stages(sys, pol, exc, np.array(starts), k0, length, dt, n_blk)
        x = x_last

        S, Y, nrm = reg(Xs.reshape(-1, n_x), Ds.reshape(-1, n_x), Us.reshape(-1, n_u))
        B = (S @ Linv.T).reshape(n_blk, 4, cs.n)
        Y = Y.reshape(n_blk, 4)
        gains = a / (nrm + 1.0) ** 2 if cfg.normalize else np.full(4 * n_blk, a)
        gains = gains.reshape(n_blk, 4)
        G21 = np.einsum("ij,ij->i", B[:, 1], B[:, 0])
        G32 = np.einsum("ij,ij->i", B[:, 2], B[:, 1])
        G43 = np.einsum("ij,ij->i", B[:, 3], B[:, 2])
        S1 = S.reshape(n_blk, 4, cs.n)[:, 0]

        for i in range(n_blk):
            k = k0 + i
            Bk = B[i]
            sk = Bk @ z
            e1 = Y[i, 0] - sk[0]
            frozen = eps > 0 and abs(e1) < eps
            if k % cfg.sample_every == 0:
                rows_t.append(k * dt)
                rows_x.append(Xs[i, 0])
                rows_w.append(Linv.T @ z)
                rows_dz.append(frozen)
                rows_s.append(S1[i])
                rows_y.append(Y[i, 0])
            if frozen:
                continue
            g = gains[i]
            c1 = g[0] * e1
            c2 = g[1] * (Y[i, 1] - sk[1] - h * c1 * G21[i])
            c3 = g[2] * (Y[i, 2] - sk[2] - h * c2 * G32[i])
            c4 = g[3] * (Y[i, 3] - sk[3] - dt * c3 * G43[i])
            if not math.isfinite(c1 + 2.0 * c2 + 2.0 * c3 + c4):
                raise DivergenceError((k + 1) * dt)
            z = z + (dt / 6.0) * (np.array([c1, 2.0 * c2, 2.0 * c3, c4]) @ Bk)
        if not np.all(np.isfinite(z)):
            raise DivergenceError((k0 + n_blk) * dt)
        k0 += n_blk

    # final row
    mu = pol.many(x[None, :], n_u)
    drift = sys.drift_many(x[None, :]) + np.einsum("kij,kj->ki", sys.input_map_many(x[None, :]), mu)
    s_f, y_f, _ = reg(x[None, :], drift, mu)
    rows_t.append(n_steps * dt)
    rows_x.append(x)
    rows_w.append(Linv.T @ z)
    rows_dz.append(False)
    rows_s.append(s_f[0])
    rows_y.append(y_f[0])

    Wt = np.array(rows_w)
    S = np.array(rows_s)
    Y = np.array(rows_y)
    y_hat = np.einsum("ij,ij->i", S, Wt)
    return TrajectoryLog(
        t=np.array(rows_t), x=np.array(rows_x), w=Wt, y=Y, y_hat=y_hat, residual=Y - y_hat,
        deadzone_active=np.array(rows_dz, dtype=bool), sigma=S,
        meta={"x0": [float(v) for v in np.ravel(x0)], "jitter": gf.jitter, "n_centers": cs.n,
              "steps": n_steps},
    )


@np.errstate(over="ignore", invalid="ignore")
def _plant_stages(sys, pol, exc, starts, k0, length, dt, n_out):
    """RK4 stage points of the plant for parallel segments.

    Returns stage states, closed-loop drifts f + g mu and inputs mu, each of
    shape (n_out, 4, .) in time order, plus the state after the last step.
    """
    n_seg, n_x = starts.shape
    n_u = sys.input_dim
    h = 0.5 * dt
    t_seg = (k0 + length * np.arange(n_seg)) * dt
    Xs = np.empty((n_seg, length, 4, n_x))
    Ds = np.empty_like(Xs)
    Us = np.empty((n_seg, length, 4, n_u))
    X = starts.copy()

    def rate(Z, t):
        mu = pol.many(Z, n_u)
        g = sys.input_map_many(Z)
        d = sys.drift_many(Z) + np.einsum("kij,kj->ki", g, mu)
        # the scalar probe enters every input channel
        return d, mu, (d + exc.probe_many(t)[:, None] * g.sum(axis=2) if exc.probing else d)

    for r in range(length):
        t = t_seg + r * dt
        X1 = X
        d1, u1, k1 = rate(X1, t)
        X2 = X + h * k1
        d2, u2, k2 = rate(X2, t + h)
        X3 = X + h * k2
        d3, u3, k3 = rate(X3, t + h)
        X4 = X + dt * k3
        d4, u4, k4 = rate(X4, t + dt)
        Xs[:, r] = np.stack([X1, X2, X3, X4], axis=1)
        Ds[:, r] = np.stack([d1, d2, d3, d4], axis=1)
        Us[:, r] = np.stack([u1, u2, u3, u4], axis=1)
        X = X + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    n_full = n_seg * length
    j, r = divmod(n_out - 1, length)
    x_last = X[j] if r == length - 1 else Xs[j, r + 1, 0]
    flat = lambda A: A.reshape((n_full,) + A.shape[2:])[:n_out]  # noqa: E731
    Xs, Ds, Us = flat(Xs), flat(Ds), flat(Us)
    bad = ~np.all(np.isfinite(Xs.reshape(n_out, -1)), axis=1)
    if bad.any() or not np.all(np.isfinite(x_last)):
        k = int(np.argmax(bad)) if bad.any() else n_out
        raise DivergenceError((k0 + k) * dt, "plant state became non-finite")
    return Xs, Ds, Us, np.array(x_last)


class _BatchRegressor:
    """sigma, y and ||sigma||^2 for stacks of stage points."""

    def __init__(self, cfg, kernel, cs, sys, cost, pol, output):
        self.kernel, self.cfg, self.cost = kernel, cfg, cost
        self._C = np.ascontiguousarray(cs.centers)
        self.target = output if isinstance(output, HNElement) else None
        self.output = output
        if self.target is not None:
            tc = self.target.centers
            self._same = tc is cs
            self._TC = np.ascontiguousarray(tc.centers)

    def __call__(self, X, D, U):
        try:
            S = self.kernel.directional(self._C, X, D, singular=self.cfg.singular)
        except SingularGradientError as exc:
            raise SingularGradientError(f"sigma undefined on the trajectory: {exc}") from None
        if self.target is not None:
            St = S if self._same else self.kernel.directional(self._TC, X, D, singular="zero")
            Y = St @ self.target.coeffs
        elif self.output is not None:
            Y = np.array([float(self.output(x)) for x in X])
        else:
            Y = -self.cost.running_many(X, U)
        return S, Y, np.einsum("ij,ij->i", S, S)


def pe_stats(log: TrajectoryLog, gf: GrammianFactor, Delta: float,
             stride: float | None = None) -> list[PEWindowStats]:
    """Windowed excitation levels of S_N(t) = int_t^{t+Delta} sigma sigma^T dtau.

    gamma1 / gamma2 are the extreme generalized eigenvalues of (M, K_N), i.e.
    the spectrum of S_N as an operator on H_N. Windows advance by ``stride``
    (default Delta / 2).
    """
    t = log.t
    if Delta <= 0:
        raise ValueError("window length must be positive")
    if Delta > t[-1] - t[0] + 1e-12:
        raise ValueError(f"window length {Delta} exceeds the logged horizon {t[-1] - t[0]}")
    stride = 0.5 * Delta if stride is None else stride
    L = gf.factor
    out = []
    start = t[0]
    tol = 1e-9 * max(1.0, abs(t[-1]))
    while start + Delta <= t[-1] + tol:
        sel = (t >= start - tol) & (t <= start + Delta + tol)
        ts, S = t[sel], log.sigma[sel]
        if ts.shape[0] < 2:
            raise ValueError("window contains fewer than two logged samples")
        wts = np.zeros(ts.shape[0])
        dts = np.diff(ts)
        wts[:-1] += 0.5 * dts
        wts[1:] += 0.5 * dts
        M = (S * wts[:, None]).T @ S
        M = 0.5 * (M + M.T)
        B = linalg.solve_triangular(L, M, lower=True, check_finite=False)
        C = linalg.solve_triangular(L, B.T, lower=True, check_finite=False)
        ev = np.linalg.eigvalsh(0.5 * (C + C.T))
        out.append(PEWindowStats(float(start), float(Delta), float(ev[0]), float(ev[-1]), M))
        start += stride
    return out


def ultimate_bound(gamma1, gamma2, Delta, y_bar_max, eps_max, a, delta=1.0) -> float:
    """sqrt(gamma2 Delta)/gamma1 * (Ybar + delta gamma2 a (Ybar + eps))."""
    if not gamma1 > 0:
        raise ValueError("gamma1 must be positive")
    return math.sqrt(gamma2 * Delta) / gamma1 * (y_bar_max + delta * gamma2 * a * (y_bar_max + eps_max))


def deadzone_decrease_bound(v_err0_norm, a, T_O, M_int, eps_max) -> float:
    """sqrt(max(0, ||v_err(t0)||^2 - 2 a T_O (1 + M) M eps^2))."""
    return math.sqrt(max(0.0, v_err0_norm ** 2 - 2.0 * a * T_O * (1 + M_int) * M_int * eps_max ** 2))


def output_error_field(kernel: KernelSpec, residual: HNElement, sys: ControlAffineSystem,
                       pol: Policy, X) -> np.ndarray:
    """|E_x A r| for the expansion r at each row of X."""
    X = np.asarray(X, dtype=float).reshape(-1, kernel.dim)
    G = grad_element_many(residual, kernel, X, singular="zero")
    drifts = np.array([closed_loop_drift(sys, pol, x) for x in X])
    return np.abs(np.einsum("ij,ij->i", G, drifts))


def projection_error_report(kernel: KernelSpec, cs: CenterSet, gf: GrammianFactor,
                            target: HNElement, sys: ControlAffineSystem, pol: Policy,
                            resolution: int):
    """(eps_max estimate, ||(I - Pi_N) v||_H) for a target expansion v.

    ``target`` lives on its own (typically larger) center set. The H-norm of
    the projection residual is exact Grammian algebra; eps_max is the sup of
    |E_x A (I - Pi_N) v| over the tensor evaluation grid.
    """
    samples = kernel.matrix(cs.centers, target.centers.centers) @ target.coeffs
    proj = project(kernel, cs, gf, samples)
    resid = target - proj
    rnorm = h_norm(resid, kernel=kernel)
    X, _ = eval_grid(cs.lower, cs.upper, resolution)
    eps = float(output_error_field(kernel, resid, sys, pol, X).max())
    return eps, rnorm
