"""Run configuration: TOML files (or a run manifest) into validated dataclasses.

Every validation failure raises :class:`ConfigError` naming the dotted field
and, when it can be found, the line in the source file.
"""

from __future__ import annotations

import json
import re
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from decentmem.environment import SCHEDULES, EnvConfig


class ConfigError(ValueError):
    def __init__(self, message: str, field_name: str | None = None, line: int | None = None,
                 source: str | None = None) -> None:
        where = ""
        if source:
            where = source + (f":{line}" if line else "") + ": "
        elif line:
            where = f"line {line}: "
        prefix = f"{field_name}: " if field_name else ""
        super().__init__(f"{where}{prefix}{message}")
        self.field_name = field_name
        self.line = line


@dataclass(frozen=True)
class TopologyConfig:
    agents: int = 3
    stages: int = 3
    aggregation: str = "majority"
    round_robin: bool = True


@dataclass(frozen=True)
class RouterConfig:
    mode: str = "online"
    fixed_alpha: float = 0.5
    increment: float = 0.5
    decay: float = 0.5
    floor: float = 1.0

    @property
    def routing(self) -> str | float:
        return "online" if self.mode == "online" else self.fixed_alpha


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 3
    tau: float = 0.6
    dimension: int = 256
    dissent_quality: float = 2.0


@dataclass(frozen=True)
class JudgeConfig:
    mode: str = "simulated"
    noise: float = 0.5
    correct: float = 9.0
    partial: float = 5.5
    incorrect: float = 2.0


@dataclass(frozen=True)
class LLMConfig:
    base_url: str = "http://localhost:11434"
    model_name: str = "qwen3:8b"
    timeout: float = 120.0
    max_retries: int = 3
    backoff_ms: float = 500.0
    max_in_flight: int = 4
    embeddings: str = "hash"


@dataclass(frozen=True)
class StudyConfig:
    """Multi-seed settings for ``sim ablation`` and the self-evolution study."""

    seeds: int = 20
    modes: tuple[str | float, ...] = ("online", 1.0, 0.0, 0.5)
    alpha_level: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    environment: EnvConfig = field(default_factory=EnvConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    llm: LLMConfig = field(default_factory=LLMConfig)
    study: StudyConfig = field(default_factory=StudyConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["study"]["modes"] = list(self.study.modes)
        return d

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None) -> "RunConfig":
        out = self
        if seed is not None:
            out = replace(out, seed=seed)
        if output_dir is not None:
            out = replace(out, output_dir=output_dir)
        return out


@dataclass(frozen=True)
class ReachConfig:
    seed: int = 0
    instances: int = 100
    max_states: int = 200
    alpha_max: float = 0.99
    tol: float = 1e-12
    tv_bound: float = 1e-9


@dataclass(frozen=True)
class RegretConfig:
    seed: int = 0
    seeds: int = 200
    horizon: int = 100_000
    alpha_star: float = 0.75
    gain: float = 5.0
    baseline_alpha: float = 0.5
    window_start: int = 1_000
    log_fit_bound: float = 0.05
    ratio_bound: float = 2.0
    mse_trend_bound: float = 1.5
    separation_bound: float = 0.05
    trace_stride: int = 100


@dataclass(frozen=True)
class TheoryConfig:
    output_dir: str = "runs/theory"
    reach: ReachConfig = field(default_factory=ReachConfig)
    regret: RegretConfig = field(default_factory=RegretConfig)


# -- loading -----------------------------------------------------------------

_SECTIONS = {
    "environment": EnvConfig,
    "topology": TopologyConfig,
    "router": RouterConfig,
    "retrieval": RetrievalConfig,
    "judge": JudgeConfig,
    "llm": LLMConfig,
    "study": StudyConfig,
}
_THEORY_SECTIONS = {"reach": ReachConfig, "regret": RegretConfig}


def _locate(text: str | None, section: str | None, key: str) -> int | None:
    """Line number of ``key = ...`` inside ``[section]`` (top level if None)."""
    if not text:
        return None
    current = None
    key_re = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for no, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"^\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and key_re.match(line):
            return no
    if section is not None:
        for no, line in enumerate(text.splitlines(), start=1):
            if re.match(rf"^\s*\[{re.escape(section)}\]", line):
                return no
    return None


class _Builder:
    def __init__(self, text: str | None, source: str | None) -> None:
        self.text = text
        self.source = source

    def error(self, msg: str, section: str | None, key: str | None) -> ConfigError:
        name = ".".join(p for p in (section, key) if p)
        line = _locate(self.text, section, key) if key else _locate(self.text, section, "") if section else None
        return ConfigError(msg, name or None, line, self.source)

    def build(self, cls, data: Any, section: str):
        if not isinstance(data, dict):
            raise self.error("expected a table", section, None)
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise self.error(f"unknown key (expected one of: {', '.join(known)})", section, key)
            kwargs[key] = self.coerce(value, known[key].type, section, key)
        try:
            obj = cls(**kwargs)
        except ValueError as exc:
            raise self.error(str(exc), section, self._blame(str(exc), kwargs)) from None
        return obj

    @staticmethod
    def _blame(message: str, kwargs: dict) -> str | None:
        for key in kwargs:
            if re.search(rf"\b{re.escape(key)}\b", message):
                return key
        return None

    def coerce(self, value, type_name, section, key):
        t = str(type_name)
        if t == "bool":
            if not isinstance(value, bool):
                raise self.error(f"expected true/false, got {value!r}", section, key)
            return value
        if t == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise self.error(f"expected an integer, got {value!r}", section, key)
            return value
        if t == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise self.error(f"expected a number, got {value!r}", section, key)
            return float(value)
        if t == "str":
            if not isinstance(value, str):
                raise self.error(f"expected a string, got {value!r}", section, key)
            return value
        if t.startswith("tuple"):
            if not isinstance(value, list):
                raise self.error(f"expected a list, got {value!r}", section, key)
            return tuple(value)
        return value


def _check_run(cfg: RunConfig, b: _Builder) -> None:
    if cfg.environment.schedule not in SCHEDULES:
        raise b.error(f"must be one of {SCHEDULES}", "environment", "schedule")
    r = cfg.retrieval
    if r.k < 1:
        raise b.error(f"k must be >= 1, got {r.k}", "retrieval", "k")
    if not -1.0 <= r.tau <= 1.0:
        raise b.error(f"similarity threshold must lie in [-1, 1], got {r.tau}", "retrieval", "tau")
    if r.dimension < 1:
        raise b.error("must be >= 1", "retrieval", "dimension")
    if not 0.0 <= r.dissent_quality <= 10.0:
        raise b.error("must lie in [0, 10]", "retrieval", "dissent_quality")
    t = cfg.topology
    if t.agents < 1:
        raise b.error("must be >= 1", "topology", "agents")
    if t.stages < 1:
        raise b.error("must be >= 1", "topology", "stages")
    if t.aggregation not in ("majority", "integrator"):
        raise b.error("must be 'majority' or 'integrator'", "topology", "aggregation")
    ro = cfg.router
    if ro.mode not in ("online", "fixed"):
        raise b.error("must be 'online' or 'fixed'", "router", "mode")
    if not 0.0 <= ro.fixed_alpha <= 1.0:
        raise b.error("must be a probability", "router", "fixed_alpha")
    if ro.increment <= 0:
        raise b.error("must be > 0", "router", "increment")
    if not 0.0 < ro.decay < 1.0:
        raise b.error("must lie in (0, 1)", "router", "decay")
    if ro.floor < 1.0:
        raise b.error("must be >= 1.0", "router", "floor")
    j = cfg.judge
    if j.mode not in ("simulated", "llm"):
        raise b.error("must be 'simulated' or 'llm'", "judge", "mode")
    if not 0.0 <= j.noise <= 5.0:
        raise b.error("must lie in [0, 5]", "judge", "noise")
    for name in ("correct", "partial", "incorrect"):
        if not 0.0 <= getattr(j, name) <= 10.0:
            raise b.error("must lie in [0, 10]", "judge", name)
    if cfg.llm.embeddings not in ("hash", "remote"):
        raise b.error("must be 'hash' or 'remote'", "llm", "embeddings")
    s = cfg.study
    if s.seeds < 1:
        raise b.error("must be >= 1", "study", "seeds")
    for m in s.modes:
        if m != "online" and (isinstance(m, (str, bool)) or not 0.0 <= float(m) <= 1.0):
            raise b.error(f"mode {m!r} is neither 'online' nor a probability", "study", "modes")
    if not 0.0 < s.alpha_level < 1.0:
        raise b.error("must lie in (0, 1)", "study", "alpha_level")
    if cfg.seed < 0:
        raise b.error("must be >= 0", None, "seed")


def run_config_from_dict(data: dict, text: str | None = None, source: str | None = None) -> RunConfig:
    b = _Builder(text, source)
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = b.build(_SECTIONS[key], value, key)
        elif key == "seed":
            kwargs[key] = b.coerce(value, "int", None, key)
        elif key == "output_dir":
            kwargs[key] = b.coerce(value, "str", None, key)
        else:
            raise b.error("unknown key", None, key)
    cfg = RunConfig(**kwargs)
    _check_run(cfg, b)
    return cfg


def theory_config_from_dict(data: dict, text: str | None = None, source: str | None = None) -> TheoryConfig:
    b = _Builder(text, source)
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _THEORY_SECTIONS:
            kwargs[key] = b.build(_THEORY_SECTIONS[key], value, key)
        elif key == "output_dir":
            kwargs[key] = b.coerce(value, "str", None, key)
        else:
            raise b.error("unknown key", None, key)
    cfg = TheoryConfig(**kwargs)
    r = cfg.reach
    if r.instances < 1 or r.max_states < 2:
        raise b.error("need instances >= 1 and max_states >= 2", "reach", "instances")
    if not 0.0 <= r.alpha_max < 1.0:
        raise b.error("must lie in [0, 1)", "reach", "alpha_max")
    g = cfg.regret
    if g.seeds < 1 or g.horizon < 10:
        raise b.error("need seeds >= 1 and horizon >= 10", "regret", "horizon")
    if not 0.5 < g.alpha_star < 1.0:
        raise b.error("must lie in (0.5, 1)", "regret", "alpha_star")
    if not 1 <= g.window_start < g.horizon // 10:
        raise b.error("must be >= 1 and below horizon/10", "regret", "window_start")
    if not 0.0 <= g.baseline_alpha <= 1.0:
        raise b.error("must be a probability", "regret", "baseline_alpha")
    return cfg


def _read(path: str | Path) -> tuple[str, str]:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8"), str(path)
    except FileNotFoundError:
        raise ConfigError("config file not found", source=str(path)) from None


def _parse(text: str, source: str) -> dict:
    if source.endswith(".json"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, line=exc.lineno, source=source) from None
        if isinstance(data, dict) and data.get("schema") == "decentmem-manifest":
            data = data["config"]
        return data
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(str(exc), line=int(m.group(1)) if m else None, source=source) from None


def load_run_config(path: str | Path) -> RunConfig:
    """TOML run config, or a ``manifest.json`` written by an earlier run."""
    text, source = _read(path)
    data = _parse(text, source)
    return run_config_from_dict(data, None if source.endswith(".json") else text, source)


def load_theory_config(path: str | Path) -> TheoryConfig:
    text, source = _read(path)
    data = _parse(text, source)
    return theory_config_from_dict(data, None if source.endswith(".json") else text, source)
