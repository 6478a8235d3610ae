"""Configuration dataclasses and their JSON (de)serialization.

Paper-scale values (conv channels 32..128, 2000 basis vectors, 80 mel
channels) are kept as documented defaults; ``desk_config`` returns the
small configuration the tests and the default CLI runs use, sized so a
full three-stage run finishes in well under five minutes on one core.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigurationError

# the value used in the original experiments; desk runs use far fewer
PAPER_SCALE_BASIS_COUNT = 2000
PAPER_SCALE_CONV_CHANNELS = [32, 32, 64, 64, 128, 128]
PAPER_SCALE_MEL_CHANNELS = 80


@dataclass
class SpeakerEncoderConfig:
    conv_channels: list[int] = field(default_factory=lambda: list(PAPER_SCALE_CONV_CHANNELS))
    embedding_dim: int = 16
    kernel: int = 3
    stride: int = 2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def validate(self):
        if not self.conv_channels:
            raise ConfigurationError("conv_channels must be non-empty")
        if self.embedding_dim < 2:
            raise ConfigurationError("embedding_dim must be >= 2")


@dataclass
class TransformerBlockConfig:
    hidden: int = 32
    heads: int = 2
    ffn: int = 64
    encoder_blocks: int = 2
    decoder_blocks: int = 2

    def validate(self):
        for name in ("hidden", "heads", "ffn", "encoder_blocks", "decoder_blocks"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.hidden % self.heads != 0:
            raise ConfigurationError("hidden width must divide evenly across heads")


@dataclass
class SupervisionConfig:
    kl_floor: float = 1e-8
    lambda_dist: float = 1.0
    lambda_cos: float = 0.0

    def validate(self):
        if self.kl_floor <= 0:
            raise ConfigurationError("kl_floor must be positive")


@dataclass
class StageConfig:
    stage: int = 1
    steps: int = 300
    learning_rate: float = 0.05
    lr_final_fraction: float = 0.1  # linear decay to this fraction by the last step
    batch_size: int = 8
    lambda_reg: float = 0.0
    lambda_dist: float = 0.0
    lambda_cos: float = 0.0
    frozen_parameter_patterns: list[str] = field(default_factory=list)
    seed: int = 0

    def validate(self):
        if self.stage not in (1, 2, 3):
            raise ConfigurationError(f"stage must be 1, 2, or 3, got {self.stage}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigurationError("steps must be >= 0 and batch_size >= 1")


@dataclass
class ModelConfig:
    vocab_size: int = 32
    mel_channels: int = 16
    basis_count: int = 16
    ln_eps: float = 1e-5
    lambda_dur: float = 0.1
    duration_hidden: int = 16
    eval_interval: int = 50
    use_basis: bool = True  # False = condition CLN on S directly (ablation #4)
    encoder: SpeakerEncoderConfig = field(default_factory=SpeakerEncoderConfig)
    blocks: TransformerBlockConfig = field(default_factory=TransformerBlockConfig)
    supervision: SupervisionConfig = field(default_factory=SupervisionConfig)
    stages: dict = field(default_factory=dict)  # stage number (int) -> StageConfig

    def validate(self):
        if self.vocab_size < 1 or self.mel_channels < 1 or self.basis_count < 1:
            raise ConfigurationError("vocab_size, mel_channels and basis_count must be positive")
        self.encoder.validate()
        self.blocks.validate()
        self.supervision.validate()
        for st in self.stages.values():
            st.validate()

    def stage(self, n: int) -> StageConfig:
        if n not in self.stages:
            raise ConfigurationError(f"no configuration for stage {n}")
        return self.stages[n]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stages"] = {str(k): dataclasses.asdict(v) for k, v in self.stages.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        try:
            enc = SpeakerEncoderConfig(**d.pop("encoder", {}))
            blk = TransformerBlockConfig(**d.pop("blocks", {}))
            sup = SupervisionConfig(**d.pop("supervision", {}))
            stages = {int(k): StageConfig(**v) for k, v in d.pop("stages", {}).items()}
            cfg = cls(encoder=enc, blocks=blk, supervision=sup, stages=stages, **d)
        except TypeError as e:
            raise ConfigurationError(f"bad config key: {e}") from e
        cfg.validate()
        return cfg

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        try:
            with open(path) as f:
                d = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(d)


def desk_config(seed: int = 0) -> ModelConfig:
    """Small configuration for fast end-to-end runs; none of these step
    counts or learning rates come from published values."""
    cfg = ModelConfig(
        vocab_size=32,
        mel_channels=16,
        basis_count=16,
        encoder=SpeakerEncoderConfig(conv_channels=[4, 8, 16], embedding_dim=16),
        blocks=TransformerBlockConfig(hidden=32, heads=2, ffn=64,
                                      encoder_blocks=2, decoder_blocks=2),
        supervision=SupervisionConfig(),
        stages={
            1: StageConfig(stage=1, steps=1500, learning_rate=0.02, batch_size=8,
                           seed=seed),
            2: StageConfig(stage=2, steps=800, learning_rate=0.01, batch_size=8,
                           lambda_reg=0.1, seed=seed + 1),
            3: StageConfig(stage=3, steps=600, learning_rate=0.005, batch_size=8,
                           lambda_dist=2.0, seed=seed + 2,
                           frozen_parameter_patterns=["speaker_encoder.*", "basis.*"]),
        },
    )
    cfg.validate()
    return cfg
