"""Sectioned key=value run configuration, strict validation and provenance stamps.

A config file looks like::

    seed = 3

    [env]
    name = chain
    macro_mode = flexible(4)

    [trainer]
    iterations = 200

    [phase:short]
    bands = D4
    iterations = 100

Absent keys take the documented defaults; unknown sections or keys are errors.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

from . import __version__
from .grammar import ATOMIC, MacroMode
from .rl import AdvantageConfig, ISConfig, TrainerConfig

SEED_ENV = "HORIZONLAB_SEED"
ENVS = ("sudoku", "rushhour", "chain")
H_MAX_DEFAULT = {"sudoku": 50, "rushhour": 30, "chain": 30}
H_MAX_MACRO = {"rushhour": 20}


@dataclass(frozen=True)
class Violation:
    key: str
    message: str

    def __str__(self) -> str:
        return f"{self.key}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, key: str, message: str) -> None:
        self.violations.append(Violation(key, message))

    def __str__(self) -> str:
        return "\n".join(str(v) for v in self.violations)


class ConfigError(ValueError):
    def __init__(self, report: ValidationReport):
        super().__init__(str(report))
        self.report = report


@dataclass(frozen=True)
class EvalSettings:
    k: int = 4
    temperature: float = 0.8
    split: str = "test"


@dataclass(frozen=True)
class DataSettings:
    manifest: str | None = None
    train_bands: tuple[str, ...] = ()
    eval_bands: tuple[str, ...] = ()
    preset: str | None = None
    depths: tuple[int, ...] = (2, 4, 6, 8, 10, 12)
    train: int = 32
    test: int = 32
    filter_command: str | None = None


@dataclass(frozen=True)
class PhaseSettings:
    name: str
    bands: tuple[str, ...]
    trainer: TrainerConfig


@dataclass(frozen=True)
class RunConfig:
    env: str = "chain"
    macro_mode: MacroMode = ATOMIC
    size: int = 9
    lookahead: int | None = None
    advantage: AdvantageConfig = AdvantageConfig()
    importance: ISConfig = ISConfig()
    trainer: TrainerConfig = TrainerConfig()
    data: DataSettings = DataSettings()
    evaluation: EvalSettings = EvalSettings()
    phases: tuple[PhaseSettings, ...] = ()
    out: str = "runs/default"
    seed: int = 0

    def to_dict(self) -> dict:
        def conv(x):
            if isinstance(x, MacroMode):
                return str(x)
            if isinstance(x, dict):
                return {k: conv(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [conv(v) for v in x]
            return x

        d = {
            "env": self.env,
            "macro_mode": str(self.macro_mode),
            "size": self.size,
            "lookahead": self.lookahead,
            "advantage": asdict(self.advantage),
            "importance": asdict(self.importance),
            "trainer": conv(asdict(self.trainer) | {"macro_mode": str(self.trainer.macro_mode)}),
            "data": conv(asdict(self.data)),
            "evaluation": asdict(self.evaluation),
            "phases": [
                {"name": p.name, "bands": list(p.bands), "trainer": conv(asdict(p.trainer) | {"macro_mode": str(p.trainer.macro_mode)})}
                for p in self.phases
            ],
            "out": self.out,
            "seed": self.seed,
        }
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def env_options(self) -> dict:
        return {"lookahead": self.lookahead} if self.env == "chain" and self.lookahead else {}


# -- value readers ------------------------------------------------------------------


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt(fn: Callable) -> Callable:
    def read(s: str):
        return None if s.strip().lower() in ("", "none") else fn(s)

    return read


def _words(s: str) -> tuple[str, ...]:
    return tuple(w for w in (p.strip() for p in s.replace(",", " ").split()) if w)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(w) for w in _words(s))


def _choice(*options: str) -> Callable:
    def read(s: str) -> str:
        v = s.strip()
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return v

    return read


def _check(pred: Callable, msg: str, base: Callable) -> Callable:
    def read(s: str):
        v = base(s)
        if v is not None and not pred(v):
            raise ValueError(msg)
        return v

    return read


_pos_int = _check(lambda v: v >= 1, "must be a positive integer", int)
_pos_float = _check(lambda v: v > 0, "must be positive", float)

TRAINER_KEYS: dict[str, Callable] = {
    "epochs": _pos_int,
    "iterations": _opt(_pos_int),
    "tasks_per_batch": _pos_int,
    "rollouts_per_task": _pos_int,
    "minibatches": _pos_int,
    "learning_rate": _pos_float,
    "temperature": _pos_float,
    "train_temperature": _opt(_pos_float),
    "h_max": _pos_int,
    "window": _pos_int,
    "dense_rewards": _bool,
    "subgoal_every": _opt(_pos_int),
    "macro_mode": MacroMode.parse,
}

SCHEMA: dict[str, dict[str, Callable]] = {
    "": {"seed": int, "out": str},
    "env": {
        "name": _choice(*ENVS),
        "macro_mode": MacroMode.parse,
        "size": _check(lambda v: v in (4, 9), "must be 4 or 9", int),
        "lookahead": _opt(_pos_int),
    },
    "advantage": {
        "gamma": _check(lambda v: 0 < v <= 1, "gamma must lie in (0,1]", float),
        "alpha": _check(lambda v: v >= 0, "alpha must be nonnegative", float),
        "normalization": _choice("batch", "group", "none"),
        "epsilon": _pos_float,
        "segment_subgoals": _bool,
    },
    "importance": {
        "c_low": _check(lambda v: 0 < v <= 1, "c_low must lie in (0,1]", float),
        "c_high": _check(lambda v: v >= 1, "c_high must be >= 1", float),
        "c_trunc": _check(lambda v: v >= 1, "c_trunc must be >= 1", float),
        "mode": _choice("mis+tis", "tis", "mis", "none"),
    },
    "trainer": TRAINER_KEYS,
    "data": {
        "manifest": _opt(str),
        "train_bands": _words,
        "eval_bands": _words,
        "preset": _opt(_choice("table1", "table2", "small", "chain")),
        "depths": _check(lambda v: len(v) > 0 and min(v) >= 1, "depths must be positive integers", _ints),
        "train": _check(lambda v: v >= 0, "must be nonnegative", int),
        "test": _check(lambda v: v >= 0, "must be nonnegative", int),
        "filter_command": _opt(str),
    },
    "eval": {
        "k": _pos_int,
        "temperature": _pos_float,
        "split": _choice("train", "test", "all"),
    },
}
PHASE_KEYS = dict(TRAINER_KEYS, bands=_words)


def parse_sections(text: str, source: str = "<config>") -> tuple[dict[str, dict[str, tuple[int, str]]], ValidationReport]:
    """Split config text into {section: {key: (line, raw value)}}."""
    report = ValidationReport()
    sections: dict[str, dict[str, tuple[int, str]]] = {"": {}}
    current = ""
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current in sections:
                report.add(current, f"{source}:{n}: duplicate section")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            report.add(current or "<top>", f"{source}:{n}: expected key = value")
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        path = f"{current}.{key}" if current else key
        if key in sections[current]:
            report.add(path, f"{source}:{n}: duplicate key")
        sections[current][key] = (n, value)
    return sections, report


def _read_block(section: str, entries, schema, report: ValidationReport) -> dict:
    out = {}
    for key, (_, raw) in entries.items():
        path = f"{section}.{key}" if section else key
        reader = schema.get(key)
        if reader is None:
            report.add(path, f"unknown key {key!r}")
            continue
        try:
            out[key] = reader(raw)
        except ValueError as e:
            report.add(path, str(e))
    return out


def _build(section: str, cls, values: dict, report: ValidationReport, **fixed):
    try:
        return cls(**fixed, **values)
    except ValueError as e:
        report.add(section, str(e))
        return None


def build_config(text: str, source: str = "<config>", environ: Mapping[str, str] | None = None) -> RunConfig:
    """Validate config text and apply defaults.

    Raises:
        ConfigError: listing every violation with its key path.
    """
    env_vars = os.environ if environ is None else environ
    sections, report = parse_sections(text, source)
    values: dict[str, dict] = {}
    phases = []
    for name, entries in sections.items():
        if name.startswith("phase:"):
            phases.append((name, _read_block(name, entries, PHASE_KEYS, report)))
        elif name in SCHEMA:
            values[name] = _read_block(name, entries, SCHEMA[name], report)
        else:
            report.add(name, f"unknown section [{name}]")
    top = values.get("", {})
    envv = values.get("env", {})
    env_name = envv.get("name", "chain")
    mode = envv.get("macro_mode", ATOMIC)
    seed = top.get("seed", 0)
    if SEED_ENV in env_vars:
        try:
            seed = int(env_vars[SEED_ENV])
        except ValueError:
            report.add(SEED_ENV, f"environment override is not an integer: {env_vars[SEED_ENV]!r}")

    def trainer_from(vals: dict, path: str):
        vals = dict(vals)
        m = vals.pop("macro_mode", mode)
        h_default = H_MAX_DEFAULT[env_name]
        if m.kind != "atomic":
            h_default = H_MAX_MACRO.get(env_name, h_default)
        vals.setdefault("h_max", h_default)
        vals.setdefault("seed", seed)
        return _build(path, TrainerConfig, vals, report, macro_mode=m)

    advantage = _build("advantage", AdvantageConfig, values.get("advantage", {}), report)
    importance = _build("importance", ISConfig, values.get("importance", {}), report)
    base_trainer = values.get("trainer", {})
    trainer = trainer_from(base_trainer, "trainer")
    datav = values.get("data", {})
    data = _build("data", DataSettings, datav, report)
    ev = dict(values.get("eval", {}))
    evaluation = _build("eval", EvalSettings, ev, report)
    phase_cfgs = []
    for name, vals in phases:
        vals = dict(vals)
        bands = vals.pop("bands", ())
        if not bands:
            report.add(f"{name}.bands", "a phase must select at least one band")
        t = trainer_from(base_trainer | vals, name)
        if t is not None:
            phase_cfgs.append(PhaseSettings(name.split(":", 1)[1], tuple(bands), t))
    if not report.ok:
        raise ConfigError(report)
    return RunConfig(
        env=env_name,
        macro_mode=mode,
        size=envv.get("size", 9),
        lookahead=envv.get("lookahead"),
        advantage=advantage,
        importance=importance,
        trainer=trainer,
        data=data,
        evaluation=evaluation,
        phases=tuple(phase_cfgs),
        out=top.get("out", "runs/default"),
        seed=seed,
    )


def load_config(path: str | Path | None, environ: Mapping[str, str] | None = None) -> RunConfig:
    """Read and validate a config file; ``None`` means all defaults."""
    if path is None:
        return build_config("", "<defaults>", environ)
    p = Path(path)
    if not p.is_file():
        report = ValidationReport()
        report.add("--config", f"file not found: {p}")
        raise ConfigError(report)
    return build_config(p.read_text(encoding="utf-8"), str(p), environ)


# -- provenance -------------------------------------------------------------------


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def stamp_provenance(config: RunConfig, outputs: Mapping[str, str | Path] | None = None, **extra) -> dict:
    """Config hash, code version, seeds and a digest per output file."""
    rec = {
        "config_hash": config.config_hash(),
        "code_version": __version__,
        "seeds": {"run": config.seed, "trainer": config.trainer.seed},
        "outputs": {name: file_digest(p) for name, p in sorted((outputs or {}).items())},
    }
    rec.update(extra)
    return rec


def verify_provenance(record: Mapping, outputs: Mapping[str, str | Path]) -> list[str]:
    """Names of outputs whose current digest differs from the recorded one."""
    bad = []
    for name, p in sorted(outputs.items()):
        want = record.get("outputs", {}).get(name)
        if want is None or not Path(p).is_file() or file_digest(p) != want:
            bad.append(name)
    return bad
