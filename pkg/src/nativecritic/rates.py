"""
Convergence-rate experiments over nested regular center grids.

A sweep runs the online critic to its horizon on m x m grids of increasing
density and records, per level, the fill distance, the sup of the power
function and the L-infinity errors of the terminal value and control
estimates. Slopes are least-squares fits in log-log coordinates.
"""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .control_problem import Problem, improved_control
from .critic import DivergenceError, LearningConfig, simulate
from .kernels import Family, KernelError, KernelSpec
from .native_space import (CenterSet, HNElement, IllConditionedCentersError, eval_element,
                           eval_grid, fill_distance, grad_element_many, grammian, sup_power)


class ExpTypeRate:
    """Marker for kernels whose power function decays faster than any power of h."""

    def __repr__(self):
        return "EXP_TYPE"

    def __str__(self):
        return "exp"


EXP_TYPE = ExpTypeRate()


def linf_error(estimate: Callable, reference: Callable, lower, upper, resolution: int) -> float:
    """max |estimate - reference| over the tensor grid of the box.

    Both callables take an (n, d) array of points and return n values (or
    (n, m) for vector quantities); scalars are broadcast.
    """
    X, _ = eval_grid(lower, upper, resolution)
    a = np.broadcast_to(np.asarray(estimate(X), dtype=float), np.shape(reference(X)) or (X.shape[0],))
    b = np.broadcast_to(np.asarray(reference(X), dtype=float), a.shape)
    return float(np.max(np.abs(a - b)))


def theoretical_exponent(kernel: KernelSpec):
    """Order of the power-function bound in h, or :data:`EXP_TYPE`."""
    fam = kernel.family
    if fam is Family.SOBOLEV_MATERN:
        return kernel.smoothness - kernel.dim / 2.0
    if fam is Family.WENDLAND:
        return kernel.smoothness + 0.5
    if fam is Family.EXPONENTIAL:
        return EXP_TYPE
    raise KernelError(f"no tabulated convergence order for the {fam.value} kernel")


def fit_loglog_slope(points: Sequence) -> tuple:
    """Least-squares line through (log h, log err); returns (slope, intercept, r^2)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("need at least three (h, err) pairs")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("h and err must be positive and finite")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum((ly - A @ np.array([slope, icpt])) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(icpt), r2


@dataclass
class LevelRecord:
    m: int
    n: int
    h: float
    sup_power: float
    linf_value_error: float = math.nan
    linf_control_error: float = math.nan
    jitter: float = math.nan
    seconds: float = 0.0
    error: Optional[str] = None
    weights: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None


# wall-clock time stays out of the CSV so that reruns are byte-identical
CSV_HEADER = ["m", "N", "h", "sup_power", "linf_value_error", "linf_control_error",
              "jitter", "status"]


@dataclass
class RateReport:
    kernel: KernelSpec
    levels: list
    theoretical_exponent: object
    slope_value: Optional[float] = None
    slope_control: Optional[float] = None
    slope_power: Optional[float] = None
    r2_value: Optional[float] = None

    @property
    def insufficient(self) -> bool:
        """True when fewer than three levels finished, so no slope was fitted."""
        return self.slope_value is None

    def rows(self):
        for lv in self.levels:
            yield [lv.m, lv.n, lv.h, lv.sup_power, lv.linf_value_error, lv.linf_control_error,
                   lv.jitter, "ok" if lv.ok else lv.error.replace(",", ";")]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for row in self.rows():
                w.writerow([_fmt(v) for v in row])

    def gnuplot_script(self, csv_name: str, png_name: str = "rates_gnuplot.png") -> str:
        """A gnuplot program drawing both errors against h with the theory line."""
        p = self.theoretical_exponent
        lines = [
            "# errors of the terminal critic estimate vs fill distance",
            "set datafile separator ','",
            "set terminal pngcairo size 800,600",
            f"set output '{png_name}'",
            "set logscale xy",
            "set xlabel 'fill distance h'",
            "set ylabel 'L-infinity error'",
            "set key top left",
        ]
        plots = [f"'{csv_name}' using 3:5 skip 1 with linespoints title 'value'",
                 f"'{csv_name}' using 3:6 skip 1 with linespoints title 'control'",
                 f"'{csv_name}' using 3:4 skip 1 with linespoints title 'sup P'"]
        done = [lv for lv in self.levels if lv.ok]
        if isinstance(p, float) and done:
            c = done[-1].linf_value_error / done[-1].h ** p
            lines.append(f"theory(x) = {_fmt(c)} * x**{_fmt(p)}")
            plots.append(f"theory(x) with lines dt 2 title 'h^{{{p:g}}}'")
        lines.append("plot " + ", \\\n     ".join(plots))
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, (int, np.integer, str)):
        return str(v)
    return format(float(v), ".17g")


def _run_level(problem: Problem, kernel, m, cfg, resolution, lower, upper, x0, target, anchor):
    t0 = time.perf_counter()
    cs = CenterSet.grid(m, lower, upper)
    rec = LevelRecord(m=m, n=cs.n, h=fill_distance(cs, resolution), sup_power=math.nan)
    try:
        gf = grammian(kernel, cs)
        rec.jitter = gf.jitter
        rec.sup_power = sup_power(kernel, cs, gf, resolution).value
        log = simulate(cfg, kernel, cs, gf, problem.sys, problem.cost, problem.policy, x0,
                       output=target)
    except (DivergenceError, IllConditionedCentersError, ArithmeticError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        rec.seconds = time.perf_counter() - t0
        return rec
    est = HNElement(log.w[-1], cs)
    rec.weights = log.w[-1]
    ve, ce = terminal_errors(problem, kernel, est, resolution, lower, upper, target, anchor)
    rec.linf_value_error, rec.linf_control_error = ve, ce
    rec.seconds = time.perf_counter() - t0
    return rec


def terminal_errors(problem: Problem, kernel: KernelSpec, est: HNElement, resolution: int,
                    lower, upper, target: HNElement | None = None, anchor=None):
    """(value error, control error) of an expansion against the reference pair.

    The Bellman output only fixes the value up to the kernel of the
    generator, which contains the constants, so both the estimate and the
    reference are normalized to vanish at ``anchor`` (the equilibrium,
    default the origin) before the value comparison.
    """
    X, _ = eval_grid(lower, upper, resolution)
    anchor = np.zeros(kernel.dim) if anchor is None else np.asarray(anchor, dtype=float)
    sys, cost = problem.sys, problem.cost
    if target is None:
        ref_v, ref_v0 = problem.value(X), float(problem.value(anchor))
        ref_u = np.asarray(problem.control(X), dtype=float).reshape(X.shape[0], -1)
    else:
        ref_v = eval_element(target, kernel, None, X)
        ref_v0 = eval_element(target, kernel, None, anchor)
        ref_u = _controls(sys, cost, grad_element_many(target, kernel, X), X)
    v = eval_element(est, kernel, None, X) - eval_element(est, kernel, None, anchor)
    value_err = float(np.max(np.abs(v - (ref_v - ref_v0))))
    u = _controls(sys, cost, grad_element_many(est, kernel, X), X)
    return value_err, float(np.max(np.abs(u - ref_u)))


def _controls(sys, cost, grads, X):
    G = sys.input_map_many(X)                               # (n, nx, nu)
    rhs = np.einsum("kij,ki->kj", G, grads)                 # g^T grad V
    if sys.input_dim == 1:
        return -0.5 * rhs / cost.R_mat[0, 0]
    return np.array([improved_control(sys, cost, gr, x) for gr, x in zip(grads, X)])


def rate_sweep(problem: Problem, kernel: KernelSpec, grid_levels: Sequence[int],
               cfg: LearningConfig, resolution: int, *, lower=(-1.0, -1.0), upper=(1.0, 1.0),
               x0=(1.0, -1.0), target: HNElement | None = None, anchor=None,
               workers: int = 1) -> RateReport:
    """Run the critic on each m x m grid and fit error-vs-h slopes.

    ``target`` replaces the Bellman output by y = E_x A v for an expansion v
    (a manufactured solution). A level whose run diverges or whose Grammian
    cannot be factored carries the error and the sweep goes on. Levels are
    independent and may run on ``workers`` threads; the report is always in
    level order.
    """
    levels = [int(m) for m in grid_levels]
    if not levels:
        raise ValueError("grid_levels is empty")
    if any(m < 2 for m in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("grid levels must be strictly increasing integers >= 2")
    expo = theoretical_exponent(kernel) if kernel.family in (
        Family.SOBOLEV_MATERN, Family.WENDLAND, Family.EXPONENTIAL) else None
    args = (cfg, resolution, lower, upper, x0, target, anchor)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            recs = list(pool.map(lambda m: _run_level(problem, kernel, m, *args), levels))
    else:
        recs = [_run_level(problem, kernel, m, *args) for m in levels]
    report = RateReport(kernel=kernel, levels=recs, theoretical_exponent=expo)
    done = [r for r in recs if r.ok and r.linf_value_error > 0 and r.linf_control_error > 0]
    if len(done) >= 3:
        report.slope_value, _, report.r2_value = fit_loglog_slope(
            [(r.h, r.linf_value_error) for r in done])
        report.slope_control = fit_loglog_slope([(r.h, r.linf_control_error) for r in done])[0]
        report.slope_power = fit_loglog_slope([(r.h, r.sup_power) for r in done])[0]
    return report
