"""Experiment configuration files.

Format: UTF-8, ``key = value`` lines, ``#`` comments, sections ``[problem]``,
``[optimizer]`` and ``[run]``. A comparison file replaces ``[optimizer]`` with
one ``[optimizer.NAME]`` section per optimizer, each carrying ``lr_grid``.
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .optim import STEPPERS, OptimizerConfig

PROBLEM_KEYS = {
    "quadratic": {
        "m": 128, "n": 128, "p": 0, "q": 0, "kappa": 1000.0, "b_kappa": 1.0,
        "noise": 0.0, "init_scale": 0.0,
    },
    "mlp": {"d": 32, "h": 64, "o": 16, "batch": 256, "noise": 0.01, "init_scale": 1.0},
}
SCHEDULES = ("constant", "cosine_with_warmup")
OPT_NAMES = tuple(STEPPERS)


@dataclass(frozen=True)
class ProblemConfig:
    kind: str = "quadratic"
    params: tuple = ()  # sorted (key, value) pairs, completed with defaults

    def get(self, key):
        return dict(self.params)[key]


@dataclass(frozen=True)
class RunConfig:
    steps: int = 1000
    seed: int = 0
    grad_clip: float = 0.0
    lr_schedule: str = "constant"
    warmup_fraction: float = 0.1
    spectral_stride: int = 10
    scalar_stride: int = 1
    rank_tol: float = 1e-12
    threshold: float = 1e-3
    output_dir: str = "runs/out"


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    optimizer: str = "conda"
    opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    run: RunConfig = field(default_factory=RunConfig)


@dataclass(frozen=True)
class CompareEntry:
    name: str
    opt: OptimizerConfig
    lr_grid: tuple


@dataclass(frozen=True)
class CompareConfig:
    problem: ProblemConfig
    run: RunConfig
    entries: tuple


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int(text: str) -> int:
    return int(text.strip(), 10)


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _coerce(key: str, text: str, default):
    try:
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            return _parse_int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return _floats(text)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})") from None


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def _read(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#",), comment_prefixes=("#",),
        default_section="__none__",
    )
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from None
    return cp


def _section(cp, name) -> dict:
    return dict(cp.items(name)) if cp.has_section(name) else {}


def parse_problem(raw: dict) -> ProblemConfig:
    raw = dict(raw)
    kind = raw.pop("type", "quadratic").strip()
    if kind not in PROBLEM_KEYS:
        raise ConfigError(f"unknown problem type {kind!r}")
    defaults = PROBLEM_KEYS[kind]
    unknown = sorted(set(raw) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) in [problem]: {', '.join(unknown)}")
    values = dict(defaults)
    for k, v in raw.items():
        values[k] = _coerce(k, v, defaults[k])
    return ProblemConfig(kind=kind, params=tuple(sorted(values.items())))


def _parse_dataclass(cls, raw: dict, section: str, extra=()):
    defaults = {f.name: getattr(cls(), f.name) for f in fields(cls)}
    unknown = sorted(set(raw) - set(defaults) - set(extra))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    values = {k: _coerce(k, v, defaults[k]) for k, v in raw.items() if k in defaults}
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def _parse_run(raw: dict) -> RunConfig:
    run = _parse_dataclass(RunConfig, raw, "run")
    if run.steps < 0:
        raise ConfigError("steps must be >= 0")
    if not 0 <= run.seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if run.grad_clip < 0:
        raise ConfigError("grad_clip must be >= 0")
    if run.lr_schedule not in SCHEDULES:
        raise ConfigError(f"lr_schedule must be one of {', '.join(SCHEDULES)}")
    if not 0 <= run.warmup_fraction <= 1:
        raise ConfigError("warmup_fraction must be in [0, 1]")
    if run.spectral_stride < 1 or run.scalar_stride < 1:
        raise ConfigError("strides must be positive")
    if run.rank_tol <= 0 or run.threshold <= 0:
        raise ConfigError("rank_tol and threshold must be positive")
    return run


def _parse_optimizer(raw: dict, section: str, name: str | None = None):
    raw = dict(raw)
    if name is None:
        name = raw.pop("name", "conda").strip()
    if name not in OPT_NAMES:
        raise ConfigError(f"unknown optimizer {name!r}; expected one of {', '.join(OPT_NAMES)}")
    lr_grid = raw.pop("lr_grid", None)
    opt = _parse_dataclass(OptimizerConfig, raw, section)
    return name, opt, lr_grid


def _check_sections(cp, allowed_prefix_ok):
    for sec in cp.sections():
        if not allowed_prefix_ok(sec):
            raise ConfigError(f"unknown section [{sec}]")


def parse_experiment(text: str) -> ExperimentConfig:
    cp = _read(text)
    _check_sections(cp, lambda s: s in ("problem", "optimizer", "run"))
    name, opt, lr_grid = _parse_optimizer(_section(cp, "optimizer"), "optimizer")
    if lr_grid is not None:
        raise ConfigError("lr_grid is only valid in [optimizer.NAME] sections of a compare file")
    return ExperimentConfig(
        problem=parse_problem(_section(cp, "problem")),
        optimizer=name,
        opt=opt,
        run=_parse_run(_section(cp, "run")),
    )


def parse_compare(text: str) -> CompareConfig:
    cp = _read(text)
    _check_sections(cp, lambda s: s in ("problem", "run") or s.startswith("optimizer."))
    entries = []
    for sec in cp.sections():
        if not sec.startswith("optimizer."):
            continue
        name = sec.split(".", 1)[1]
        raw = _section(cp, sec)
        if "name" in raw:
            raise ConfigError(f"[{sec}]: optimizer name comes from the section header")
        _, opt, grid_text = _parse_optimizer(raw, sec, name=name)
        grid = _floats(grid_text) if grid_text is not None else (opt.lr,)
        if not grid or any(lr <= 0 for lr in grid):
            raise ConfigError(f"[{sec}]: lr_grid must list positive learning rates")
        entries.append(CompareEntry(name=name, opt=opt, lr_grid=grid))
    if not entries:
        raise ConfigError("compare config needs at least one [optimizer.NAME] section")
    return CompareConfig(
        problem=parse_problem(_section(cp, "problem")),
        run=_parse_run(_section(cp, "run")),
        entries=tuple(entries),
    )


def load_experiment(path) -> ExperimentConfig:
    return parse_experiment(_read_file(path))


def load_compare(path) -> CompareConfig:
    return parse_compare(_read_file(path))


def _read_file(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _lines(values: dict) -> list[str]:
    return [f"{k} = {_render(v)}" for k, v in values.items()]


def _opt_values(opt: OptimizerConfig) -> dict:
    return {f.name: getattr(opt, f.name) for f in fields(opt)}


def dump_experiment(cfg: ExperimentConfig) -> str:
    out = ["[problem]", f"type = {cfg.problem.kind}"]
    out += _lines(dict(cfg.problem.params))
    out += ["", "[optimizer]", f"name = {cfg.optimizer}"]
    out += _lines(_opt_values(cfg.opt))
    out += ["", "[run]"]
    out += _lines(dataclasses.asdict(cfg.run))
    return "\n".join(out) + "\n"


def dump_compare(cfg: CompareConfig) -> str:
    out = ["[problem]", f"type = {cfg.problem.kind}"]
    out += _lines(dict(cfg.problem.params))
    out += ["", "[run]"]
    out += _lines(dataclasses.asdict(cfg.run))
    for e in cfg.entries:
        out += ["", f"[optimizer.{e.name}]", f"lr_grid = {_render(tuple(e.lr_grid))}"]
        out += _lines(_opt_values(e.opt))
    return "\n".join(out) + "\n"


def flatten(cfg: ExperimentConfig) -> dict:
    """Flat ``section.key -> text`` snapshot for run metadata."""
    flat = {"problem.type": cfg.problem.kind, "optimizer.name": cfg.optimizer}
    flat.update({f"problem.{k}": _render(v) for k, v in cfg.problem.params})
    flat.update({f"optimizer.{k}": _render(v) for k, v in _opt_values(cfg.opt).items()})
    flat.update({f"run.{k}": _render(v) for k, v in dataclasses.asdict(cfg.run).items()})
    return flat
