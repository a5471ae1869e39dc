"""
Run configuration: one sectioned key = value file per run.

Parsing is strict. Unknown sections or keys, malformed syntax and values out
of range each raise their own exception, with the offending line number when
one exists. Every key has a documented default, so a file holding only
``[problem]`` is a complete configuration.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Optional

from .control_problem import PROBLEMS
from .critic import Excitation, LearningConfig
from .kernels import Family, KernelError, KernelSpec


class ConfigError(Exception):
    """Base class for configuration problems."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}" + (f":{line}" if line is not None else "") + ": "
        super().__init__(where + message)
        self.path, self.line = path, line


class ConfigFileError(ConfigError):
    """The file is missing or unreadable."""


class ConfigSyntaxError(ConfigError):
    """The file is not valid sectioned key = value text."""


class UnknownKeyError(ConfigError):
    """A section or key that the schema does not define."""


class ConfigValueError(ConfigError):
    """A value of the wrong type or outside its admissible range."""


# -- scalar readers --------------------------------------------------------

def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _floats(s):
    return tuple(_float(p) for p in s.split(",") if p.strip())


def _ints(s):
    return tuple(int(p) for p in s.split(",") if p.strip())


def _bool(s):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _str(s):
    return s.strip()


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


# section -> key -> (reader, default text, check or None, description)
SCHEMA: dict[str, dict[str, tuple]] = {
    "problem": {
        "name": (_str, "benchmark", lambda v: v in PROBLEMS, "registered problem"),
    },
    "domain": {
        "lower": (_floats, "-1, -1", None, "lower corner of the box"),
        "upper": (_floats, "1, 1", None, "upper corner of the box"),
        "x0": (_floats, "1, -1", None, "initial state"),
        "resolution": (int, "41", lambda v: v >= 2, "evaluation grid points per axis"),
    },
    "kernel": {
        "family": (_str, "sobolev_matern", lambda v: v in {f.value for f in Family}, "kernel family"),
        "lengthscale": (_float, "1.0", _positive, "radial scale"),
        "smoothness": (_float, "2.5", _positive, "Sobolev index or Wendland k"),
        "shape": (_float, "1.0", _positive, "inverse multiquadric c"),
        "beta": (_float, "-0.5", lambda v: v < 0, "inverse multiquadric exponent"),
        "support_radius": (_float, "1.0", _positive, "Wendland support"),
    },
    "centers": {
        "grid": (int, "5", lambda v: v >= 2, "m for an m x m grid"),
        "file": (_str, "", None, "CSV of centers; overrides grid"),
    },
    "critic": {
        "a": (_float, "10.0", _positive, "learning rate"),
        "dt": (_float, "0.001", _positive, "RK4 step"),
        "horizon": (_float, "10.0", _nonneg, "simulated seconds"),
        "deadzone_eps": (_float, "0.0", _nonneg, "dead-zone width, 0 disables"),
        "normalize": (_bool, "false", None, "divide the gain by (|sigma|^2 + 1)^2"),
        "sample_every": (int, "10", lambda v: v >= 1, "log every n-th step"),
        "singular": (_str, "zero", lambda v: v in ("zero", "raise"), "kink gradient policy"),
        "save_weights": (_bool, "false", None, "add w1..wN columns to the trajectory CSV"),
        "w0": (_floats, "", None, "initial weights, empty for zero"),
    },
    "excitation": {
        "kind": (_str, "probing", lambda v: v in ("none", "probing", "reset", "probing+reset"),
                 "none, probing, reset or probing+reset"),
        "amplitudes": (_floats, "0.8, 0.6", None, "probing amplitudes"),
        "frequencies": (_floats, "7.0, 11.3", None, "probing frequencies in rad/s"),
        "reset_period": (_float, "0.0", _nonneg, "seconds between resets"),
        "seed": (int, "0", _nonneg, "reset RNG seed"),
        "sampler": (_str, "uniform", lambda v: v in ("uniform", "sobol"),
                    "reset points: uniform (pseudo-random) or sobol (scrambled Sobol)"),
    },
    "rates": {
        "levels": (_ints, "5, 7, 9", lambda v: len(v) >= 1 and all(m >= 2 for m in v)
                   and all(b > a for a, b in zip(v, v[1:])), "strictly increasing grid sizes"),
        "workers": (int, "1", lambda v: v >= 1, "levels run in parallel"),
    },
    "pe": {
        "window": (_float, "2.0", _positive, "window length Delta in seconds"),
        "stride": (_float, "0.0", _nonneg, "window stride, 0 means Delta / 2"),
        "delta": (_float, "1.0", _positive, "order-one constant in the ultimate bound"),
    },
    "output": {
        "dir": (_str, "out", lambda v: bool(v), "output directory"),
        "figures": (_bool, "true", None, "render PNG figures next to the CSV files"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    problem: str
    lower: tuple
    upper: tuple
    x0: tuple
    resolution: int
    kernel: KernelSpec
    grid: int
    centers_file: Optional[Path]
    learning: LearningConfig
    save_weights: bool
    levels: tuple
    workers: int
    pe_window: float
    pe_stride: float
    delta: float
    out_dir: Path
    figures: bool
    values: dict                    # section -> key -> text, defaults filled
    source: Optional[Path] = None

    @property
    def seed(self) -> int:
        return self.learning.excitation.seed

    def with_overrides(self, *, out_dir=None, seed=None) -> "RunConfig":
        vals = {s: dict(kv) for s, kv in self.values.items()}
        cfg = self
        if out_dir is not None:
            vals["output"]["dir"] = str(Path(out_dir).resolve())
            cfg = replace(cfg, out_dir=Path(out_dir))
        if seed is not None:
            if seed < 0:
                raise ConfigValueError("seed must be nonnegative")
            vals["excitation"]["seed"] = str(int(seed))
            exc = replace(cfg.learning.excitation, seed=int(seed))
            cfg = replace(cfg, learning=replace(cfg.learning, excitation=exc))
        return replace(cfg, values=vals)

    def to_ini(self) -> str:
        """The effective configuration, every key spelled out."""
        out = []
        for sec, keys in SCHEMA.items():
            out.append(f"[{sec}]")
            for key in keys:
                out.append(f"{key} = {self.values[sec][key]}")
            out.append("")
        return "\n".join(out)


def default_text() -> str:
    """A fully commented default configuration."""
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        for key, (_, default, _, desc) in keys.items():
            out.append(f"# {desc}")
            out.append(f"{key} = {default}")
        out.append("")
    return "\n".join(out)


def _line_of(text: str, section: str, key: str | None) -> Optional[int]:
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return no
        elif current == section and key is not None and "=" in line:
            if line.split("=", 1)[0].strip().lower() == key:
                return no
    return None


def parse_text(text: str, path=None, base_dir: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path or "<string>"))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigSyntaxError("key outside of any [section]", path, exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigSyntaxError("line is not 'key = value'", path, line) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigSyntaxError(exc.message if hasattr(exc, "message") else str(exc),
                                path, getattr(exc, "lineno", None)) from None
    except configparser.Error as exc:
        raise ConfigSyntaxError(str(exc), path) from None

    for sec in cp.sections():
        if sec not in SCHEMA:
            raise UnknownKeyError(f"unknown section [{sec}]", path, _line_of(text, sec, None))
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise UnknownKeyError(f"unknown key '{key}' in [{sec}]", path, _line_of(text, sec, key))

    values: dict[str, dict[str, str]] = {}
    typed: dict[str, dict[str, Any]] = {}
    for sec, keys in SCHEMA.items():
        values[sec], typed[sec] = {}, {}
        for key, (reader, default, check, desc) in keys.items():
            given = cp.has_option(sec, key)
            raw = cp.get(sec, key) if given else default
            line = _line_of(text, sec, key) if given else None
            try:
                val = reader(raw)
            except ValueError as exc:
                raise ConfigValueError(f"[{sec}] {key} = {raw!r}: {exc or 'bad value'} ({desc})",
                                       path, line) from None
            if check is not None and not check(val):
                raise ConfigValueError(f"[{sec}] {key} = {raw!r} is out of range ({desc})", path, line)
            values[sec][key] = raw.strip()
            typed[sec][key] = val
    return _build(typed, values, path, base_dir, text)


def parse_config(path) -> RunConfig:
    """Read and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigFileError("configuration file not found", path) from None
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigFileError(f"cannot read configuration: {exc}", path) from None
    cfg = parse_text(text, path, path.parent)
    return replace(cfg, source=path)


def _build(t, values, path, base_dir, text) -> RunConfig:
    def fail(sec, key, msg, cls=ConfigValueError):
        return cls(f"[{sec}] {key}: {msg}", path, _line_of(text, sec, key))

    d = t["domain"]
    lower, upper, x0 = d["lower"], d["upper"], d["x0"]
    if len(lower) != len(upper):
        raise fail("domain", "upper", "lower and upper must have the same length")
    if any(hi <= lo for lo, hi in zip(lower, upper)):
        raise fail("domain", "upper", "upper must exceed lower in every coordinate")
    if len(x0) != len(lower):
        raise fail("domain", "x0", f"expected {len(lower)} coordinates")

    k = t["kernel"]
    try:
        kernel = KernelSpec(family=k["family"], dim=len(lower), lengthscale=k["lengthscale"],
                            smoothness=k["smoothness"], shape=k["shape"], beta=k["beta"],
                            support_radius=k["support_radius"])
    except KernelError as exc:
        raise ConfigValueError(f"[kernel] {exc}", path, _line_of(text, "kernel", None)) from None

    cfile = None
    if t["centers"]["file"]:
        cfile = Path(t["centers"]["file"])
        if not cfile.is_absolute() and base_dir is not None:
            cfile = base_dir / cfile
        if not cfile.is_file():
            raise fail("centers", "file", f"file not found: {cfile}", ConfigFileError)

    e = t["excitation"]
    try:
        exc = Excitation(kind=e["kind"], amplitudes=e["amplitudes"], frequencies=e["frequencies"],
                         reset_period=e["reset_period"], seed=e["seed"], sampler=e["sampler"])
    except ValueError as err:
        raise ConfigValueError(f"[excitation] {err}", path, _line_of(text, "excitation", None)) from None
    c = t["critic"]
    learning = LearningConfig(a=c["a"], dt=c["dt"], horizon=c["horizon"],
                              deadzone_eps=c["deadzone_eps"], normalize=c["normalize"],
                              excitation=exc, sample_every=c["sample_every"],
                              singular=c["singular"], w0=c["w0"] or None)
    if learning.w0 is not None and t["centers"]["file"] == "" and \
            len(learning.w0) != t["centers"]["grid"] ** len(lower):
        raise fail("critic", "w0", f"expected {t['centers']['grid'] ** len(lower)} weights")
    if learning.horizon > 0 and learning.n_steps == 0:
        raise fail("critic", "horizon", "horizon is shorter than one step")
    out_dir = Path(t["output"]["dir"])
    if not out_dir.is_absolute() and base_dir is not None:
        out_dir = base_dir / out_dir
    # the echo must reproduce the run from anywhere, so paths are resolved
    if cfile is not None:
        values["centers"]["file"] = str(cfile.resolve())
    if base_dir is not None:
        values["output"]["dir"] = str(out_dir.resolve())
    return RunConfig(
        problem=t["problem"]["name"], lower=lower, upper=upper, x0=x0,
        resolution=d["resolution"], kernel=kernel, grid=t["centers"]["grid"], centers_file=cfile,
        learning=learning, save_weights=c["save_weights"], levels=t["rates"]["levels"],
        workers=t["rates"]["workers"], pe_window=t["pe"]["window"],
        pe_stride=t["pe"]["stride"], delta=t["pe"]["delta"], out_dir=out_dir,
        figures=t["output"]["figures"], values=values,
    )
