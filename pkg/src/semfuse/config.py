"""Experiment configuration: a small sectioned key=value format.

Grammar (documented here and in the README):
  - ``[section]`` headers, one per line
  - ``key = value`` pairs; values are ints, floats, ``true``/``false``,
    double-quoted strings, or ``[v1, v2, ...]`` lists of those scalars
  - full-line comments start with ``#``; blank lines are ignored
Unknown sections or keys are rejected. ``serialize(parse(text))`` reproduces
the parsed settings exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .synthdata import TaskConfig
from .training import StageConfig

_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0


@dataclass(frozen=True)
class ModelSection:
    dim: int = 32
    grid: int = 32
    scales: int = 6
    fusion_layers: int = 12
    fusion_heads: int = 4
    fusion_ffn: int = 64
    lm_layers: int = 2
    lm_heads: int = 2
    lm_ffn: int = 64
    max_seq_len: int = 1152
    encoder_depth: int = 2
    queue_tau: float = 0.07


@dataclass(frozen=True)
class DataSection:
    train_samples: int = 512
    eval_samples: int = 100
    classes: int = 6
    distractors: int = 2
    queue_k: int = 30
    closed_fraction: float = 0.25
    noise: float = 0.25
    signal: float = 2.0
    pos_amplitude: float = 1.0


@dataclass(frozen=True)
class StageSection:
    lambda_sem: float
    lr: float
    epochs: int
    batch_size: int = 16
    max_steps: int = 0
    trainable: tuple = ()


@dataclass(frozen=True)
class GradcheckSection:
    dim: int = 8
    grid: int = 4
    scales: int = 2
    layers: int = 1
    heads: int = 1
    queue_k: int = 3
    eps: float = 1e-5
    tolerance: float = 1e-4
    corrupt: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    stage1: StageSection = field(default_factory=lambda: StageSection(
        lambda_sem=0.0, lr=5e-5, epochs=1,
        trainable=("projector", "fusion", "gate", "embedding")))
    stage2: StageSection = field(default_factory=lambda: StageSection(
        lambda_sem=1.0, lr=2e-5, epochs=5,
        trainable=("projector", "fusion", "gate", "embedding", "lm")))
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=RunSection(seed=seed))

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(
            dim=m.dim, grid=m.grid, scales=m.scales,
            fusion_layers=m.fusion_layers, fusion_heads=m.fusion_heads,
            fusion_ffn=m.fusion_ffn, lm_layers=m.lm_layers, lm_heads=m.lm_heads,
            lm_ffn=m.lm_ffn, max_seq_len=m.max_seq_len,
            encoder_depth=m.encoder_depth, queue_tau=m.queue_tau)

    def task_config(self) -> TaskConfig:
        d = self.data
        return TaskConfig(
            grid=self.model.grid, dim=self.model.dim, scales=self.model.scales,
            classes=d.classes, distractors=d.distractors,
            queue_k=d.queue_k, closed_fraction=d.closed_fraction,
            noise=d.noise, signal=d.signal, pos_amplitude=d.pos_amplitude)

    def stage_config(self, index: int) -> StageConfig:
        sec = self.stage1 if index == 1 else self.stage2
        return StageConfig(
            lambda_sem=sec.lambda_sem, lr=sec.lr, epochs=sec.epochs,
            trainable_groups=tuple(sec.trainable), seed=self.run.seed + index,
            batch_size=sec.batch_size, max_steps=sec.max_steps)

    @property
    def train_seed(self) -> int:
        return self.run.seed + 1000

    @property
    def eval_seed(self) -> int:
        return self.run.seed + 2000

    def validate(self) -> "ExperimentConfig":
        """Instantiating the per-module configs runs their invariant checks."""
        try:
            self.model_config()
            self.task_config()
            self.stage_config(1)
            self.stage_config(2)
        except Exception as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        if self.model.max_seq_len < self.model.grid**2 + 8:
            raise ConfigError(
                f"max_seq_len {self.model.max_seq_len} cannot hold "
                f"{self.model.grid**2} visual tokens plus a question")
        return self


_SECTIONS = {
    "run": RunSection,
    "model": ModelSection,
    "data": DataSection,
    "stage1": StageSection,
    "stage2": StageSection,
    "gradcheck": GradcheckSection,
}


def _parse_scalar(text: str, where: str):
    text = text.strip()
    if text == "true":
        return True
    if text == "false":
        return False
    if text.startswith('"'):
        if not (len(text) >= 2 and text.endswith('"')):
            raise ConfigError(f"{where}: unterminated string {text!r}")
        return text[1:-1]
    if _INT_RE.match(text):
        return int(text)
    if _FLOAT_RE.match(text):
        return float(text)
    raise ConfigError(f"{where}: cannot parse value {text!r}")


def _parse_value(text: str, where: str):
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise ConfigError(f"{where}: unterminated list")
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(part, where) for part in inner.split(",")]
    return _parse_scalar(text, where)


def parse_config(text: str) -> ExperimentConfig:
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        where = f"line {lineno}"
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {line!r}")
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(f"{where}: unknown section [{name}]")
            if name in sections:
                raise ConfigError(f"{where}: duplicate section [{name}]")
            current = name
            sections[name] = {}
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        if current is None:
            raise ConfigError(f"{where}: key outside any section")
        key, _, value = line.partition("=")
        key = key.strip()
        cls = _SECTIONS[current]
        legal = {f.name: f.type for f in fields(cls)}
        if key not in legal:
            raise ConfigError(f"{where}: unknown key {key!r} in section [{current}]")
        if key in sections[current]:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        sections[current][key] = _parse_value(value, where)

    kwargs = {}
    for name, values in sections.items():
        cls = _SECTIONS[name]
        coerced = {}
        for f in fields(cls):
            if f.name not in values:
                continue
            v = values[f.name]
            if f.type in ("float", float) and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if f.type in ("tuple", tuple) and isinstance(v, list):
                v = tuple(v)
            coerced[f.name] = v
        try:
            kwargs[name] = cls(**{**_defaults(name), **coerced})
        except TypeError as exc:
            raise ConfigError(f"section [{name}]: {exc}") from exc
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _defaults(section: str) -> dict:
    base = getattr(ExperimentConfig(), section)
    return {f.name: getattr(base, f.name) for f in fields(base)}


def _format_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name in _SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(section):
            v = getattr(section, f.name)
            if isinstance(v, (tuple, list)):
                body = ", ".join(_format_scalar(x) for x in v)
                lines.append(f"{f.name} = [{body}]")
            else:
                lines.append(f"{f.name} = {_format_scalar(v)}")
        lines.append("")
    return "\n".join(lines)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text()).validate()


def save_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(serialize_config(cfg))
