"""
Command-line front end.

    nativecritic {simulate,rates,power,pe} --config run.ini [--out-dir DIR] [--seed N] [--quiet]

Every command writes comma-separated data files, a gnuplot script for each
of them, a JSON metadata sidecar echoing the effective configuration and,
unless ``[output] figures = false``, PNG renderings of the same data.

Exit codes: 0 success, 1 configuration error, 2 runtime failure (including
divergence), 3 input/output error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .control_problem import get_problem
from .critic import DivergenceError, pe_stats, simulate, ultimate_bound
from .kernels import SingularGradientError
from .native_space import (CenterSet, IllConditionedCentersError, eval_grid, grammian,
                           power_function)
from .rates import rate_sweep

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # bad command lines count as configuration errors, not runtime ones
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(v)
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


class _Run:
    """Output bookkeeping for one command."""

    def __init__(self, command: str, cfg: RunConfig, quiet: bool):
        self.command, self.cfg, self.quiet = command, cfg, quiet
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.extra: dict = {}
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def say(self, msg: str):
        if not self.quiet:
            print(msg)

    def finish(self):
        (self.out / f"{self.command}_config.ini").write_text(self.cfg.to_ini())
        meta = {
            "command": self.command,
            "version": __version__,
            "seed": self.cfg.seed,
            "config": self.cfg.values,
            "outputs": self.files + [f"{self.command}_config.ini"],
            "wall_seconds": round(time.perf_counter() - self.t0, 3),
            **self.extra,
        }
        with open(self.out / f"{self.command}_meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for f in self.files:
            self.say(f"wrote {self.out / f}")


def _centers(cfg: RunConfig) -> CenterSet:
    if cfg.centers_file is not None:
        return CenterSet.from_csv(cfg.centers_file, cfg.lower, cfg.upper)
    return CenterSet.grid(cfg.grid, cfg.lower, cfg.upper)


def _gnuplot(run: _Run, name: str, lines: list[str]):
    run.path(name).write_text("\n".join(["set datafile separator ','",
                                         "set terminal pngcairo size 800,600"] + lines) + "\n")


def cmd_simulate(cfg: RunConfig, quiet: bool = False) -> int:
    run = _Run("simulate", cfg, quiet)
    prob = get_problem(cfg.problem)
    cs = _centers(cfg)
    gf = grammian(cfg.kernel, cs)
    log = simulate(cfg.learning, cfg.kernel, cs, gf, prob.sys, prob.cost, prob.policy, cfg.x0)
    log.to_csv(run.path("trajectory.csv"), weights=cfg.save_weights)
    ny = 1 + cs.dim + (cs.n if cfg.save_weights else 0)
    _gnuplot(run, "trajectory.gp", [
        "set output 'trajectory_gnuplot.png'", "set multiplot layout 2,1",
        "set ylabel 'state'",
        "plot " + ", ".join(f"'trajectory.csv' using 1:{i + 2} skip 1 with lines title 'x{i + 1}'"
                            for i in range(cs.dim)),
        "set logscale y", "set ylabel '|residual|'", "set xlabel 't [s]'",
        f"plot 'trajectory.csv' using 1:(abs(${ny + 3})) skip 1 with lines title 'residual'",
        "unset multiplot"])
    if cfg.figures:
        from .plotting import trajectory_figure
        trajectory_figure(log, run.path("trajectory.png"))
    run.extra.update(jitter=gf.jitter, n_centers=cs.n, steps=log.meta["steps"],
                     final_residual=float(log.residual[-1]))
    run.finish()
    run.say(f"{log.meta['steps']} steps, final |residual| = {abs(log.residual[-1]):.3e}")
    return EXIT_OK


def cmd_rates(cfg: RunConfig, quiet: bool = False) -> int:
    run = _Run("rates", cfg, quiet)
    prob = get_problem(cfg.problem)
    report = rate_sweep(prob, cfg.kernel, cfg.levels, cfg.learning, cfg.resolution,
                        lower=cfg.lower, upper=cfg.upper, x0=cfg.x0, workers=cfg.workers)
    report.to_csv(run.path("rates.csv"))
    run.path("rates.gp").write_text(report.gnuplot_script("rates.csv"))
    if cfg.figures:
        from .plotting import rates_figure
        rates_figure(report, run.path("rates.png"))
    run.extra.update(
        insufficient_for_slope=report.insufficient, slope_value=report.slope_value,
        slope_control=report.slope_control, slope_power=report.slope_power,
        theoretical_exponent=str(report.theoretical_exponent),
        level_seconds=[round(lv.seconds, 3) for lv in report.levels])
    run.finish()
    for lv in report.levels:
        status = "ok" if lv.ok else lv.error
        run.say(f"m={lv.m:3d} N={lv.n:4d} h={lv.h:.4f} supP={lv.sup_power:.3e} "
                f"value={lv.linf_value_error:.3e} control={lv.linf_control_error:.3e} [{status}]")
    if report.insufficient:
        run.say("fewer than three finished levels: no slope fitted (insufficient)")
    else:
        run.say(f"slopes: value {report.slope_value:.3f}, control {report.slope_control:.3f}, "
                f"theory {report.theoretical_exponent}")
    return EXIT_OK if not any(not lv.ok for lv in report.levels) else EXIT_RUNTIME


def cmd_power(cfg: RunConfig, quiet: bool = False) -> int:
    run = _Run("power", cfg, quiet)
    cs = _centers(cfg)
    gf = grammian(cfg.kernel, cs)
    X, _ = eval_grid(cfg.lower, cfg.upper, cfg.resolution)
    P = power_function(cfg.kernel, cs, gf, X)
    header = [f"x{i + 1}" for i in range(cs.dim)] + ["power"]
    write_csv(run.path("power.csv"), header, (list(x) + [p] for x, p in zip(X, P)))
    cs.to_csv(run.path("centers.csv"))
    if cs.dim == 2:
        _gnuplot(run, "power.gp", [
            "set output 'power_gnuplot.png'", "set view map", f"set dgrid3d {cfg.resolution},{cfg.resolution}",
            "splot 'power.csv' using 1:2:3 skip 1 with pm3d title 'P_N', "
            "'centers.csv' using 1:2:(0) skip 1 with points pt 7 lc 'black' title 'centers'"])
        if cfg.figures:
            from .plotting import power_figure
            power_figure(X, P, cs.centers, cfg.resolution, run.path("power.png"))
    i = int(np.argmax(P))
    run.extra.update(jitter=gf.jitter, n_centers=cs.n, sup_power=float(P[i]),
                     argmax=[float(v) for v in X[i]])
    run.finish()
    run.say(f"sup P_N = {P[i]:.6e} at {X[i].tolist()}")
    return EXIT_OK


def cmd_pe(cfg: RunConfig, quiet: bool = False) -> int:
    if cfg.pe_window > cfg.learning.horizon:
        raise ConfigError(f"[pe] window = {cfg.pe_window} exceeds [critic] horizon = "
                          f"{cfg.learning.horizon}", cfg.source)
    run = _Run("pe", cfg, quiet)
    prob = get_problem(cfg.problem)
    cs = _centers(cfg)
    gf = grammian(cfg.kernel, cs)
    log = simulate(cfg.learning, cfg.kernel, cs, gf, prob.sys, prob.cost, prob.policy, cfg.x0)
    stats = pe_stats(log, gf, cfg.pe_window, cfg.pe_stride or None)
    y_bar = float(np.max(np.abs(log.y)))
    rows = []
    for s in stats:
        bound = (ultimate_bound(s.gamma1, s.gamma2, s.length, y_bar, 0.0, cfg.learning.a, cfg.delta)
                 if s.gamma1 > 0 else float("inf"))
        rows.append([s.start, s.length, s.gamma1, s.gamma2,
                     s.gamma1 / s.gamma2 if s.gamma2 > 0 else 0.0, bound])
    write_csv(run.path("pe.csv"),
              ["start", "length", "gamma1", "gamma2", "ratio", "ultimate_bound"], rows)
    _gnuplot(run, "pe.gp", [
        "set output 'pe_gnuplot.png'", "set logscale y", "set xlabel 'window start [s]'",
        "plot 'pe.csv' using 1:3 skip 1 with linespoints title 'gamma1', "
        "'pe.csv' using 1:4 skip 1 with linespoints title 'gamma2'"])
    if cfg.figures:
        from .plotting import pe_figure
        pe_figure(stats, run.path("pe.png"))
    run.extra.update(jitter=gf.jitter, n_centers=cs.n, windows=len(stats), y_bar=y_bar,
                     min_gamma1=min(s.gamma1 for s in stats))
    run.finish()
    run.say(f"{len(stats)} windows, min gamma1 = {min(s.gamma1 for s in stats):.3e}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "rates": cmd_rates, "power": cmd_power, "pe": cmd_pe}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="run configuration file")
    common.add_argument("--out-dir", type=Path, help="override [output] dir")
    common.add_argument("--seed", type=int, help="override [excitation] seed")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")
    p = _Parser(prog="nativecritic", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {"simulate": "run the critic and write the trajectory",
             "rates": "sweep grid levels and fit convergence slopes",
             "power": "tabulate the power function on the evaluation grid",
             "pe": "windowed excitation levels of a run"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config).with_overrides(out_dir=args.out_dir, seed=args.seed)
        return COMMANDS[args.command](cfg, quiet=args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SingularGradientError, IllConditionedCentersError, ArithmeticError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
