"""Run configuration: sectioned ``key = value`` files with line-precise errors."""

from __future__ import annotations

import ast
import configparser
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .artstein import delay_steps
from .exceptions import ConfigError
from .gain import parse_poles
from .spectral import MIN_GRID, OperatorSpec

SCHEMA = {
    "problem": {"L", "c", "c_file", "D", "y0"},
    "discretization": {"grid_points", "num_modes", "N", "dt", "T"},
    "control": {"poles"},
    "output": {"directory", "record_every", "plot", "profile_stride"},
}

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "tanh": np.tanh,
          "cosh": np.cosh, "sinh": np.sinh, "abs": np.abs, "log": np.log}
_CONSTS = {"pi": math.pi, "e": math.e}
_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Call, ast.Load,
          ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)


def eval_expression(text: str, **names):
    """Evaluate an arithmetic expression over ``x``, ``L``, ``pi`` and elementary functions."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}") from exc
    scope = {**_CONSTS, **_FUNCS, **names}
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ValueError(f"unsupported syntax {type(node).__name__} in {text!r}")
        if isinstance(node, ast.Name) and node.id not in scope:
            raise ValueError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ValueError(f"only elementary functions may be called in {text!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ValueError(f"non-numeric constant in {text!r}")
    return eval(compile(tree, "<config>", "eval"), {"__builtins__": {}}, scope)


@dataclass(frozen=True)
class RunConfig:
    L: float
    c_expr: str | None
    c_file: Path | None
    D: float
    y0_expr: str
    grid_points: int = 2000
    num_modes: int = 8
    N: int = 6
    dt: float = 0.01
    T: float = 40.0
    poles: tuple | None = None
    directory: Path = Path("out")
    record_every: int = 10
    plot: bool = True
    profile_stride: int = 20
    source: Path | None = field(default=None, compare=False)

    def operator(self) -> OperatorSpec:
        if self.c_file is not None:
            return OperatorSpec.from_csv(self.c_file, self.L)
        x = np.linspace(0.0, self.L, self.grid_points + 1)
        return OperatorSpec(self.L, np.broadcast_to(
            np.asarray(eval_expression(self.c_expr, x=x, L=self.L), dtype=float), x.shape))

    def y0_on(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        return np.broadcast_to(np.asarray(eval_expression(self.y0_expr, x=grid, L=self.L),
                                          dtype=float), grid.shape).copy()

    def with_overrides(self, poles=None, dt=None, modes=None, directory=None) -> "RunConfig":
        cfg = self
        if poles is not None:
            cfg = replace(cfg, poles=tuple(parse_poles(poles)))
        if dt is not None:
            cfg = replace(cfg, dt=float(dt))
        if modes is not None:
            cfg = replace(cfg, N=int(modes), num_modes=max(cfg.num_modes, int(modes) + 2))
        if directory is not None:
            cfg = replace(cfg, directory=Path(directory))
        validate(cfg)
        return cfg

    def to_ini(self) -> str:
        poles = "" if self.poles is None else ", ".join(_fmt_pole(p) for p in self.poles)
        lines = ["[problem]", f"L = {self.L!r}"]
        if self.c_file is not None:
            lines.append(f"c_file = {self.c_file}")
        else:
            lines.append(f"c = {self.c_expr}")
        lines += [f"D = {self.D!r}", f"y0 = {self.y0_expr}", "",
                  "[discretization]", f"grid_points = {self.grid_points}",
                  f"num_modes = {self.num_modes}", f"N = {self.N}", f"dt = {self.dt!r}",
                  f"T = {self.T!r}", "", "[control]", f"poles = {poles}", "",
                  "[output]", f"directory = {self.directory}",
                  f"record_every = {self.record_every}", f"plot = {str(self.plot).lower()}",
                  f"profile_stride = {self.profile_stride}", ""]
        return "\n".join(lines)


def _fmt_pole(p: complex) -> str:
    if p.imag == 0:
        return repr(p.real)
    return f"{p.real!r}{'+' if p.imag > 0 else '-'}{abs(p.imag)!r}j"


def _key_lines(text: str) -> dict:
    # (section, key) -> line number, for error messages
    where, section = {}, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            where[(section, None)] = lineno
        elif section and "=" in line and not line.startswith(("#", ";")):
            where[(section, line.split("=", 1)[0].strip())] = lineno
    return where


def resolve_config_path(name) -> Path:
    """A path on disk, or the name of a shipped preset such as ``reference``."""
    path = Path(name)
    if path.exists():
        return path
    preset = resources.files("rdstab") / "presets" / f"{path.stem}.ini"
    if preset.is_file():
        return Path(str(preset))
    raise ConfigError(f"{name}: no such file or preset")


def load_config(path) -> RunConfig:
    """Parse and validate a configuration file.

    Raises
    ------
    ConfigError
        On syntax errors, unknown sections or keys, bad values or violated
        invariants; the message names the file and line where possible.
    """
    path = resolve_config_path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from exc
    where = _key_lines(text)

    def loc(section, key=None):
        return f"{path}:{where.get((section, key), where.get((section, None), '?'))}"

    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{loc(section)}: unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{loc(section, key)}: unknown key {key!r} in [{section}]")

    def get(section, key, conv, default=None, required=False):
        if not parser.has_option(section, key) or parser[section][key].strip() == "":
            if required:
                raise ConfigError(f"{loc(section)}: missing required key {key!r} in [{section}]")
            return default
        raw = parser[section][key]
        try:
            return conv(raw)
        except (ValueError, TypeError, ZeroDivisionError, OverflowError) as exc:
            raise ConfigError(f"{loc(section, key)}: bad value for {key}: {exc}") from None

    def number(raw):
        return float(eval_expression(raw))

    def integer(raw):
        val = float(eval_expression(raw))
        if val != int(val):
            raise ValueError(f"{raw!r} is not an integer")
        return int(val)

    def boolean(raw):
        low = raw.strip().lower()
        if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
            raise ValueError(f"{raw!r} is not a boolean")
        return low in ("true", "yes", "1", "on")

    base = path.parent
    L = get("problem", "L", number, required=True)
    c_expr = get("problem", "c", str)
    c_file = get("problem", "c_file", lambda r: (base / r.strip()).resolve())
    if (c_expr is None) == (c_file is None):
        raise ConfigError(f"{loc('problem')}: give exactly one of 'c' and 'c_file'")
    N = get("discretization", "N", integer, 6)
    cfg = RunConfig(
        L=L, c_expr=c_expr, c_file=c_file,
        D=get("problem", "D", number, required=True),
        y0_expr=get("problem", "y0", str, "x*(L-x)"),
        grid_points=get("discretization", "grid_points", integer, 2000),
        num_modes=get("discretization", "num_modes", integer, N + 2),
        N=N,
        dt=get("discretization", "dt", number, None),
        T=get("discretization", "T", number, 40.0),
        poles=get("control", "poles", lambda r: tuple(parse_poles(r))),
        directory=get("output", "directory", lambda r: Path(r.strip()), Path("out")),
        record_every=get("output", "record_every", integer, 10),
        plot=get("output", "plot", boolean, True),
        profile_stride=get("output", "profile_stride", integer, 20),
        source=path,
    )
    if cfg.dt is None:
        cfg = replace(cfg, dt=cfg.D / 100 if cfg.D > 0 else 0.01)
    try:
        validate(cfg)
    except ConfigError as exc:
        key = getattr(exc, "key", None)
        section = next((s for s, keys in SCHEMA.items() if key in keys), None)
        raise ConfigError(f"{loc(section, key) if section else path}: {exc}") from None
    return cfg


def _invalid(key, message):
    err = ConfigError(f"invariant violated ({key}): {message}")
    err.key = key
    return err


def validate(cfg: RunConfig) -> None:
    """Check the cross-field invariants of a configuration."""
    if not (np.isfinite(cfg.L) and cfg.L > 0):
        raise _invalid("L", "L must be positive")
    if not (np.isfinite(cfg.D) and cfg.D >= 0):
        raise _invalid("D", "delay must be >= 0")
    if not cfg.dt > 0:
        raise _invalid("dt", "dt must be positive")
    try:
        delay_steps(cfg.D, cfg.dt)
    except ValueError:
        raise _invalid("dt", f"dt={cfg.dt} must divide D={cfg.D}") from None
    try:
        delay_steps(cfg.T, cfg.dt)
    except ValueError:
        raise _invalid("T", f"dt={cfg.dt} must divide T={cfg.T}") from None
    if cfg.T <= 0:
        raise _invalid("T", "T must be positive")
    if cfg.grid_points < MIN_GRID:
        raise _invalid("grid_points", f"grid_points must be >= {MIN_GRID}")
    if cfg.N < 1:
        raise _invalid("N", "N must be >= 1")
    if cfg.num_modes < cfg.N:
        raise _invalid("num_modes", f"num_modes={cfg.num_modes} must be >= N={cfg.N}")
    if cfg.num_modes > cfg.grid_points / 8:
        raise _invalid("num_modes", "num_modes must be <= grid_points / 8")
    if cfg.record_every < 1 or cfg.profile_stride < 1:
        raise _invalid("record_every", "record_every and profile_stride must be >= 1")
    if cfg.c_file is not None and not Path(cfg.c_file).is_file():
        raise _invalid("c_file", f"{cfg.c_file} does not exist")
    x = np.linspace(0.0, cfg.L, 5)
    for key, expr in (("c", cfg.c_expr), ("y0", cfg.y0_expr)):
        if expr is None:
            continue
        try:
            vals = np.asarray(eval_expression(expr, x=x, L=cfg.L), dtype=float)
        except (ValueError, TypeError, ZeroDivisionError) as exc:
            raise _invalid(key, str(exc)) from None
        if not np.all(np.isfinite(vals)):
            raise _invalid(key, f"{expr!r} is not finite on [0, L]")
