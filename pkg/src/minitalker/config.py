"""Run configuration: dataclasses with JSON round-trip and validation.

Every training default lives here; the CLI accepts a JSON file with the same
field names (nested objects for style_e / style_a, a list for clients).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class StyleEConfig:
    T: int = 1000
    schedule_kind: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    hidden_width: int = 128
    num_blocks: int = 2
    time_embed_dim: int = 64
    lr: float = 1e-3
    steps: int = 400
    batch_size: int = 4
    checkpoint_every: int = 200
    num_sample_steps: int = 5

    def validate(self):
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.lr <= 0:
            raise ConfigError(f"stage-E learning rate must be positive, got {self.lr}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("stage-E steps and batch_size must be >= 1")
        if not 1 <= self.num_sample_steps <= self.T:
            raise ConfigError(f"num_sample_steps must lie in [1, T], got {self.num_sample_steps}")


@dataclass
class StyleAConfig:
    resolution: int = 32
    d_w: int = 64
    warp_resolution: int | None = None  # resolution // 4 when unset
    perceptual_weight: float = 0.1
    adversarial_weight: float = 0.05
    lr: float = 2e-4
    disc_lr: float = 2e-4
    steps: int = 300
    grad_clip: float = 1.0
    use_skips: bool = True
    use_refiner: bool = True
    art_palette_id: int = 1
    blend: float = 1.0
    pretrain_steps: int = 400
    pretrain_lr: float = 1e-3
    backbone_seed: int = 0
    backbone_depth: int = 3
    checkpoint_every: int = 200

    def validate(self):
        if self.lr <= 0 or self.disc_lr <= 0 or self.pretrain_lr <= 0:
            raise ConfigError("stage-A learning rates must be positive")
        if self.perceptual_weight < 0:
            raise ConfigError(f"perceptual weight must be >= 0, got {self.perceptual_weight}")
        if self.steps < 1 or self.pretrain_steps < 1:
            raise ConfigError("stage-A step counts must be >= 1")
        if not 0.0 <= self.blend <= 1.0:
            raise ConfigError(f"blend must lie in [0,1], got {self.blend}")


def default_client_blocks() -> list:
    return [
        {"modality": "text", "backend": "mock", "dim": 32},
        {"modality": "identity", "backend": "mock", "dim": 16},
        {"modality": "audio", "backend": "mock", "dim": 16},
    ]


@dataclass
class RunConfig:
    seed: int = 0
    corpus_dir: str = "corpus"
    records_dir: str = "records"
    out_dir: str = "runs"
    style_e: StyleEConfig = field(default_factory=StyleEConfig)
    style_a: StyleAConfig = field(default_factory=StyleAConfig)
    clients: list = field(default_factory=default_client_blocks)

    def validate(self, check_paths: bool = False):
        self.style_e.validate()
        self.style_a.validate()
        modalities = {c.get("modality") for c in self.clients}
        if modalities != {"text", "identity", "audio"}:
            raise ConfigError(f"clients must cover text/identity/audio, got {sorted(modalities)}")
        if check_paths:
            for name in ("corpus_dir", "records_dir"):
                path = Path(getattr(self, name))
                if not path.exists():
                    raise ConfigError(f"{name} does not exist: {path}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "style_e" in d:
            d["style_e"] = _sub_config(StyleEConfig, d["style_e"])
        if "style_a" in d:
            d["style_a"] = _sub_config(StyleAConfig, d["style_a"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))


def _sub_config(cls, data):
    if isinstance(data, cls):
        return data
    unknown = set(data) - {f for f in cls.__dataclass_fields__}
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**data)
