"""Model hyperparameters and named presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

# feature profile -> (feature dim, frames per AR step, frames per second)
PROFILES = {
    "world": (67, 8, 200.0),
    "lpcnet": (23, 3, 100.0),
}

PROFILE_TAGS = {67: "WORLD67", 23: "LPCNET23"}


@dataclass
class DfsmnConfig:
    n_blocks: int
    p1: int
    p2: int
    n1: int
    n2: int


@dataclass
class ModelConfig:
    """Architecture hyperparameters.  Defaults are the WORLD-feature model."""

    vocab_size: int = 100
    embed_dim: int = 128
    encoder: DfsmnConfig = field(default_factory=lambda: DfsmnConfig(4, 256, 128, 20, 20))
    duration: DfsmnConfig = field(default_factory=lambda: DfsmnConfig(3, 256, 128, 20, 20))
    duration_blstm_hidden: int = 128
    prenet_widths: tuple[int, int] = (128, 128)
    lstm_hidden: int = 128
    lstm_layers: int = 2
    refine: DfsmnConfig = field(default_factory=lambda: DfsmnConfig(2, 256, 128, 10, 10))
    nonar: DfsmnConfig = field(default_factory=lambda: DfsmnConfig(2, 256, 128, 20, 60))
    feature_dim: int = 67
    frames_per_step: int = 8
    decoder_variant: str = "AR"
    dfsmn_activation: str = "relu"
    prenet_dropout: float = 0.0
    refine_residual: bool = False
    frame_rate: float = 200.0
    phoneme_rate_per_s: float = 12.0
    symbols: list[str] | None = None

    def __post_init__(self):
        for name in ("encoder", "duration", "refine", "nonar"):
            v = getattr(self, name)
            if isinstance(v, dict):
                setattr(self, name, DfsmnConfig(**v))
        self.prenet_widths = tuple(self.prenet_widths)
        if self.symbols is not None:
            self.symbols = list(self.symbols)
            if len(set(self.symbols)) != len(self.symbols):
                raise ValueError("symbol table has duplicate entries")
            self.vocab_size = len(self.symbols)
        if self.frames_per_step < 1:
            raise ValueError(f"frames_per_step must be >= 1, got {self.frames_per_step}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be positive, got {self.feature_dim}")
        if self.decoder_variant not in ("AR", "nonAR"):
            raise ValueError(f"decoder_variant must be 'AR' or 'nonAR', got {self.decoder_variant!r}")
        if self.lstm_layers < 1:
            raise ValueError("lstm_layers must be >= 1")

    @property
    def profile(self) -> str:
        return PROFILE_TAGS.get(self.feature_dim, "CUSTOM")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def with_profile(self, profile: str) -> "ModelConfig":
        dim, r, rate = PROFILES[profile]
        return self.replace(feature_dim=dim, frames_per_step=r, frame_rate=rate)

    def symbol_table(self) -> dict[str, int]:
        if self.symbols is None:
            return {str(i): i for i in range(self.vocab_size)}
        return {s: i for i, s in enumerate(self.symbols)}

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["prenet_widths"] = list(self.prenet_widths)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))


def tiny_config(**overrides) -> ModelConfig:
    """Small dims (8) and short filters (N1 = N2 = 2, r = 2) for checks and toy training."""
    cfg = ModelConfig(
        vocab_size=12,
        embed_dim=8,
        encoder=DfsmnConfig(2, 8, 8, 2, 2),
        duration=DfsmnConfig(1, 8, 8, 2, 2),
        duration_blstm_hidden=4,
        prenet_widths=(8, 8),
        lstm_hidden=8,
        lstm_layers=2,
        refine=DfsmnConfig(2, 8, 8, 2, 2),
        nonar=DfsmnConfig(2, 8, 8, 2, 4),
        feature_dim=8,
        frames_per_step=2,
        frame_rate=20.0,
        phoneme_rate_per_s=4.0,
    )
    return cfg.replace(**overrides) if overrides else cfg


PRESETS = {
    "default": ModelConfig,
    "world": ModelConfig,
    "lpcnet": lambda: ModelConfig().with_profile("lpcnet"),
    "tiny": tiny_config,
}


def load_config(source: str | Path | None) -> ModelConfig:
    """A preset name, a JSON config path, or ``None`` for the default model."""
    if source is None:
        return ModelConfig()
    if str(source) in PRESETS:
        return PRESETS[str(source)]()
    return ModelConfig.from_json(Path(source).read_text(encoding="utf-8"))
