"""
PNG figures for the CLI reports, drawn off-screen with the Agg canvas.

Each function takes already-computed data and a target path; nothing here
runs an experiment. The CSV files written next to the figures remain the
authoritative output.
"""
from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

# no timestamps or version strings, so reruns give identical files
_PNG_META = {"Software": None}


def _save(fig: Figure, path):
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=110, metadata=_PNG_META)


def rates_figure(report, path):
    """Log-log errors and sup P against fill distance, with the theory slope."""
    done = [lv for lv in report.levels if lv.ok]
    fig = Figure(figsize=(6.4, 4.8))
    ax = fig.add_subplot()
    if done:
        h = np.array([lv.h for lv in done])
        ax.loglog(h, [lv.linf_value_error for lv in done], "o-", label="value error")
        ax.loglog(h, [lv.linf_control_error for lv in done], "s-", label="control error")
        ax.loglog(h, [lv.sup_power for lv in done], "^--", label="sup P")
        p = report.theoretical_exponent
        if isinstance(p, float):
            c = done[-1].linf_value_error / done[-1].h ** p
            hh = np.linspace(h.min(), h.max(), 50)
            ax.loglog(hh, c * hh ** p, "k:", label=f"h^{p:g}")
    ax.set_xlabel("fill distance h")
    ax.set_ylabel("L-infinity norm")
    ax.set_title(f"{report.kernel.family.value}, lengthscale {report.kernel.lengthscale:g}")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    _save(fig, path)


def power_figure(X, values, centers, resolution, path):
    """Filled contours of the power function with the centers on top."""
    n = resolution
    fig = Figure(figsize=(5.6, 4.8))
    ax = fig.add_subplot()
    x1 = X[:, 0].reshape(n, n)
    x2 = X[:, 1].reshape(n, n)
    cf = ax.contourf(x1, x2, np.asarray(values).reshape(n, n), levels=20)
    fig.colorbar(cf, ax=ax, label="P_N(x)")
    ax.plot(centers[:, 0], centers[:, 1], "k.", ms=4)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_aspect("equal")
    _save(fig, path)


def trajectory_figure(log, path):
    """States and the Bellman residual along a logged run."""
    fig = Figure(figsize=(6.4, 6.0))
    ax1, ax2 = fig.subplots(2, 1, sharex=True)
    for i in range(log.x.shape[1]):
        ax1.plot(log.t, log.x[:, i], lw=0.8, label=f"x{i + 1}")
    ax1.set_ylabel("state")
    ax1.legend(loc="upper right")
    ax2.semilogy(log.t, np.maximum(np.abs(log.residual), 1e-16), lw=0.8)
    ax2.set_ylabel("|y - y_hat|")
    ax2.set_xlabel("t [s]")
    for ax in (ax1, ax2):
        ax.grid(True, alpha=0.3)
    _save(fig, path)


def pe_figure(stats, path):
    """Extreme excitation levels per window."""
    fig = Figure(figsize=(6.4, 4.8))
    ax = fig.add_subplot()
    t = [s.start for s in stats]
    ax.semilogy(t, [max(s.gamma1, 1e-300) for s in stats], "o-", label="gamma1")
    ax.semilogy(t, [s.gamma2 for s in stats], "s-", label="gamma2")
    ax.set_xlabel("window start [s]")
    ax.set_ylabel("eigenvalue of S_N")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    _save(fig, path)
