"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

STUDIES = ("lemma1_ratio", "redundancy_sweep", "universality_grid", "lz_comparison")
DIST_SOURCES = ("hamming", "file", "random_grid")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    study: str
    n_list: tuple = (16, 32)
    K: int = 2
    J: int = 2
    A: int = 3
    D: float = 0.25
    d_list: tuple = ()  # optional sweep over D (lz_comparison)
    d_relative: bool = False  # D (and d_list) as fractions of each matrix's d_max
    dist_source: str = "hamming"
    dist_file: str = ""
    resolution: int = 0  # 0: grid spacing d_max / n
    count: int = 1
    offgrid_count: int = 0
    trials: int = 10
    balanced: bool = False  # source blocks with an exactly uniform type when K divides n
    seed: int = 0
    epsilon: float = 0.5
    max_scan_cap: int = 10**7
    workers: int = 1
    output_path: str = "out.csv"

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; expected one of {', '.join(STUDIES)}")
        if not self.n_list:
            raise ConfigError("n_list must be nonempty")
        if any(n < 1 for n in self.n_list):
            raise ConfigError("block lengths must be >= 1")
        if self.K < 1 or self.J < 1:
            raise ConfigError("alphabet sizes must be >= 1")
        if self.A <= max(self.J, self.K):
            raise ConfigError(f"A = {self.A} must exceed max(J, K) = {max(self.J, self.K)}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")
        if self.dist_source not in DIST_SOURCES:
            raise ConfigError(f"dist_source must be one of {', '.join(DIST_SOURCES)}")
        if self.dist_source == "file" and not self.dist_file:
            raise ConfigError("dist_source = file needs dist_file")
        if self.D < 0 or any(v < 0 for v in self.d_list):
            raise ConfigError("distortion levels must be nonnegative")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def d_levels(self) -> tuple:
        return self.d_list if self.d_list else (self.D,)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "tuple":
            items = [t for t in raw.replace(",", " ").split() if t]
            conv = float if key == "d_list" else int
            return tuple(conv(t) for t in items)
        if kind == "int":
            return int(raw, 0)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, **overrides) -> ExperimentConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (t.strip() for t in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "study" not in values:
        raise ConfigError("missing required key 'study'")
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, **overrides)


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for k, v in asdict(cfg).items():
        if isinstance(v, tuple):
            v = ", ".join(str(t) for t in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# execution-only settings; results must not depend on them
_UNHASHED = ("workers",)


def config_hash(cfg: ExperimentConfig) -> str:
    fields_ = {k: v for k, v in asdict(cfg).items() if k not in _UNHASHED}
    blob = json.dumps(fields_, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})

