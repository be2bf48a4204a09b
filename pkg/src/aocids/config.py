"""Experiment configuration: one record selecting every component and hyperparameter."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .adm import ArchitectureSpec
from .augment import MixupConfig
from .losses import CrcConfig, ImprovedLossConfig


@dataclass
class StreamConfig:
    initial_fraction: float = 0.2
    stream_batch_size: int = 2784
    epoch0: int = 300
    epoch1: int = 3
    train_batch_size: int = 128
    objective: str = "crc"  # crc | improved
    decision_mode: str = "gaussian"  # gaussian | heads
    gate_mode: str = "base"  # base | filtered
    confidence_threshold: float = 0.85
    # "both": each head must clear the threshold; "voted": only the winning head
    gate_heads: str = "both"
    flip_fraction: float = 0.05
    use_mixup: bool = False
    use_balanced_sampling: bool = False
    seed: int = 0
    max_stream_batches: int | None = None

    def __post_init__(self):
        if not 0.0 < self.initial_fraction < 1.0:
            raise ValueError("initial_fraction must be in (0, 1)")
        if not 0.5 < self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must be in (0.5, 1]")
        if self.stream_batch_size < 1 or self.train_batch_size < 2:
            raise ValueError("batch sizes too small")
        _choice("objective", self.objective, ("crc", "improved"))
        _choice("decision_mode", self.decision_mode, ("gaussian", "heads"))
        _choice("gate_mode", self.gate_mode, ("base", "filtered"))
        _choice("gate_heads", self.gate_heads, ("both", "voted"))


@dataclass
class OptimConfig:
    kind: str = "sgd"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    schedule: str = "constant"  # constant | cosine
    eta_min: float = 1e-5
    t_max: int = 50

    def __post_init__(self):
        _choice("optimizer kind", self.kind, ("sgd", "adam"))
        _choice("schedule", self.schedule, ("constant", "cosine"))


def _choice(name, value, allowed):
    if value not in allowed:
        raise ValueError(f"{name} must be one of {allowed}, got {value!r}")


@dataclass
class ExperimentConfig:
    name: str = "base"
    arch: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    stream: StreamConfig = field(default_factory=StreamConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    crc: CrcConfig = field(default_factory=CrcConfig)
    loss: ImprovedLossConfig = field(default_factory=ImprovedLossConfig)
    mixup: MixupConfig = field(default_factory=MixupConfig)

    def __post_init__(self):
        s = self.stream
        needs_heads = s.objective == "improved" or s.decision_mode == "heads" or s.gate_mode == "filtered"
        if needs_heads and not self.arch.with_heads:
            raise ValueError(f"{self.name}: configuration needs classifier heads but arch has none")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arch"]["hidden_dims"] = list(self.arch.hidden_dims)
        return d

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        return config_from_dict(_deep_merge(self.to_dict(), overrides))

    def replace(self, **sections) -> "ExperimentConfig":
        """Shallow per-section override, e.g. ``cfg.replace(stream={"seed": 3})``."""
        return self.with_overrides(sections)


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


_SECTIONS = {
    "arch": ArchitectureSpec, "stream": StreamConfig, "optim": OptimConfig,
    "crc": CrcConfig, "loss": ImprovedLossConfig, "mixup": MixupConfig,
}


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    unknown = set(d) - set(_SECTIONS) - {"name", "preset"}
    if unknown:
        raise ValueError(f"unknown config sections {sorted(unknown)}")
    if "preset" in d:
        base = preset(d.pop("preset"), input_dim=d.get("arch", {}).get("input_dim", 194))
        return base.with_overrides(d)
    kwargs = {"name": d.get("name", "custom")}
    for key, cls in _SECTIONS.items():
        section = d.get(key, {}) or {}
        allowed = {f.name for f in fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ValueError(f"unknown keys in [{key}]: {sorted(bad)}")
        kwargs[key] = cls(**section)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    """Read a YAML (or JSON) config file."""
    doc = yaml.safe_load(Path(path).read_text()) or {}
    return config_from_dict(doc)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


# -- presets -------------------------------------------------------------------


def base_replication(input_dim: int = 194) -> ExperimentConfig:
    """Original system: CRC loss, Gaussian decision, SGD, blind pseudo-labels."""
    return ExperimentConfig(
        name="base",
        arch=ArchitectureSpec.base(input_dim),
        stream=StreamConfig(epoch0=300, train_batch_size=128),
        optim=OptimConfig(kind="sgd", learning_rate=1e-3),
    )


def improved(pseudo_filter: bool = False, mixup: bool = False, lite: bool = False,
             input_dim: int = 194) -> ExperimentConfig:
    """Improved recipe with any subset of the filtered gate, Mixup and the lite encoder."""
    parts = [n for n, on in (("filter", pseudo_filter), ("mixup", mixup), ("lite", lite)) if on]
    arch = ArchitectureSpec.lite(input_dim) if lite else ArchitectureSpec.base(input_dim, with_heads=True)
    return ExperimentConfig(
        name="+".join(parts) if parts else "improved",
        arch=arch,
        stream=StreamConfig(
            epoch0=50, train_batch_size=256, objective="improved", decision_mode="heads",
            gate_mode="filtered" if pseudo_filter else "base", use_mixup=mixup,
            use_balanced_sampling=True,
        ),
        optim=OptimConfig(kind="adam", learning_rate=1e-3, weight_decay=1e-4,
                          schedule="cosine", eta_min=1e-5, t_max=50),
    )


PRESETS = {
    "base": lambda d: base_replication(d),
    "filter": lambda d: improved(True, False, False, d),
    "mixup": lambda d: improved(False, True, False, d),
    "lite": lambda d: improved(False, False, True, d),
    "filter+mixup": lambda d: improved(True, True, False, d),
    "filter+lite": lambda d: improved(True, False, True, d),
    "filter+mixup+lite": lambda d: improved(True, True, True, d),
}


def preset(name: str, input_dim: int = 194) -> ExperimentConfig:
    try:
        return PRESETS[name](input_dim)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
