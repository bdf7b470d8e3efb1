"""Pipeline configuration: a flat TOML document of ``section.key = value`` pairs.

Both ``contrastive.temperature = 0.02`` and a ``[contrastive]`` table parse
to the same thing. Unknown sections or keys, and values of the wrong type,
raise ConfigError. The global ``seed`` is pushed into every module config.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import tomli

from .adapt import AdaptConfig
from .contrastive import ContrastiveConfig
from .errors import ConfigError
from .shift_detect import DetectConfig
from .shift_explain import ExplainConfig


@dataclass
class ModelConfig:
    hidden_dim: int = 128
    latent_dim: int = 32


@dataclass
class ScenarioConfig:
    """Arguments of :func:`flowshift.drift_sim.make_scenario`."""

    kind: str = "mean_shift"
    d: int = 20
    n_per_window: int = 2000
    n_windows: int = 2
    abnormal_fraction: float = 0.3
    class_separation: float = 7.0
    shift: float = 3.0
    drift_angle: float = 20.0


@dataclass
class LifecycleConfig:
    test_fraction: float = 0.2
    refine_rounds: int = 10
    force: bool = False


@dataclass
class DataConfig:
    train: str = ""
    windows: str = ""


SECTIONS = {
    "model": ModelConfig,
    "contrastive": ContrastiveConfig,
    "detect": DetectConfig,
    "explain": ExplainConfig,
    "adapt": AdaptConfig,
    "scenario": ScenarioConfig,
    "lifecycle": LifecycleConfig,
    "data": DataConfig,
}
TOP_LEVEL = {"seed": int, "out_dir": str}


@dataclass
class PipelineConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    lifecycle: LifecycleConfig = field(default_factory=LifecycleConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        self._sync_seeds()

    def _sync_seeds(self):
        for name in ("contrastive", "detect", "explain", "adapt"):
            section = getattr(self, name)
            if section.seed != self.seed:
                setattr(self, name, replace(section, seed=self.seed))

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=seed)

    def to_flat(self) -> dict:
        """Echo as ``{"section.key": value}``; seeds appear once at top level."""
        out = {k: getattr(self, k) for k in TOP_LEVEL}
        for name in SECTIONS:
            for f in fields(getattr(self, name)):
                if f.name != "seed":
                    out[f"{name}.{f.name}"] = getattr(getattr(self, name), f.name)
        return out


def _flatten(doc: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in doc.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def _coerce(key: str, value, annotation):
    kind = {"int": int, "float": float, "str": str, "bool": bool}.get(str(annotation).replace("'", ""), annotation)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{key}: expected int, got bool")
    if not isinstance(value, kind):
        raise ConfigError(f"{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def from_flat(flat: dict) -> PipelineConfig:
    top, sections = {}, {name: {} for name in SECTIONS}
    for key, value in flat.items():
        if key in TOP_LEVEL:
            top[key] = _coerce(key, value, TOP_LEVEL[key])
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name or "." in name:
            raise ConfigError(f"unknown config key {key!r}")
        known = {f.name: f.type for f in fields(SECTIONS[section]) if f.name != "seed"}
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        sections[section][name] = _coerce(key, value, known[name])
    try:
        built = {name: cls(**sections[name]) for name, cls in SECTIONS.items()}
        return PipelineConfig(**top, **built)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def loads(text: str) -> PipelineConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_flat(_flatten(doc))


def load(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    return loads(path.read_text())


def dumps(config: PipelineConfig) -> str:
    """TOML text that :func:`loads` maps back to an equal config."""
    lines = []
    for key, value in config.to_flat().items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
        else:
            text = repr(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


__all__ = [
    "DataConfig",
    "LifecycleConfig",
    "ModelConfig",
    "PipelineConfig",
    "ScenarioConfig",
    "dumps",
    "from_flat",
    "load",
    "loads",
]
