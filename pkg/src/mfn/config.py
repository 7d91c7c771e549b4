"""Configuration dataclasses and TOML loading.

A config file has four sections -- [data], [model], [loss], [train] --
mirroring the four configurable stages of the system.  Every field has a
default, so an empty file is a valid config.  ``config_hash`` gives a
stable fingerprint used to guard checkpoint resumption.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

from .errors import UsageError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_MOVING_CLASSES = (
    "person", "rider", "car", "truck", "bus", "motorcycle", "bicycle",
)


@dataclass
class PipelineConfig:
    """Settings for dataset filtering, mask synthesis and pair generation."""

    moving_ratio_max: float = 0.05
    overlap_threshold: float = 0.5
    train_crop: tuple[int, int] = (512, 512)
    test_size: tuple[int, int] = (1024, 512)
    seed: int = 0
    moving_classes: tuple[str, ...] = DEFAULT_MOVING_CLASSES
    # Directory of binary template images used to seed holes.  When unset,
    # smooth random polygons are synthesized instead.
    template_dir: str | None = None
    template_library_size: int = 32
    templates_per_mask: tuple[int, int] = (1, 4)
    template_scale: tuple[float, float] = (0.15, 0.45)

    def __post_init__(self):
        if not 0.0 < self.moving_ratio_max < 1.0:
            raise UsageError(f"moving_ratio_max must be in (0, 1), got {self.moving_ratio_max}")
        if not 0.0 <= self.overlap_threshold <= 1.0:
            raise UsageError(f"overlap_threshold must be in [0, 1], got {self.overlap_threshold}")
        self.train_crop = tuple(self.train_crop)
        self.test_size = tuple(self.test_size)
        self.moving_classes = tuple(self.moving_classes)
        self.templates_per_mask = tuple(self.templates_per_mask)
        self.template_scale = tuple(self.template_scale)


@dataclass
class PretextConfig:
    """Frozen feature extractor used to supervise the prompter and to feed
    the perceptual/style losses.  The default is a deterministic random
    convolutional pyramid so the whole suite runs offline."""

    seed: int = 7
    channels: tuple[int, ...] = (16, 32, 64)

    def __post_init__(self):
        self.channels = tuple(self.channels)


@dataclass
class ModelConfig:
    """Architecture hyperparameters for prompter, generator, discriminator."""

    encoder_channels: tuple[int, int, int, int] = (64, 128, 256, 512)
    prompter_channels: tuple[int, int, int, int] = (32, 64, 96, 128)
    prior_channels: int = 64
    spa_blocks_per_scale: int = 2
    spa_rates: tuple[int, ...] = (1, 2, 4, 8)
    bottleneck_blocks: int = 8
    lpt_hidden: int = 64
    disc_channels: int = 64
    pretext: PretextConfig = field(default_factory=PretextConfig)

    def __post_init__(self):
        self.encoder_channels = tuple(self.encoder_channels)
        self.prompter_channels = tuple(self.prompter_channels)
        self.spa_rates = tuple(self.spa_rates)
        if isinstance(self.pretext, dict):
            self.pretext = PretextConfig(**self.pretext)
        if self.bottleneck_blocks < 1:
            raise UsageError("bottleneck_blocks must be >= 1")


@dataclass
class LossWeights:
    """Weights of the training objective plus the soft-target smoothing
    used by the patch discriminator's fake labels."""

    alpha: float = 1.0
    lambda_rec: float = 1.0
    lambda_perc: float = 0.5
    lambda_style: float = 250.0
    lambda_adv: float = 0.01
    sm_kernel_size: int = 15
    sm_sigma: float = 5.0

    def __post_init__(self):
        for name in ("alpha", "lambda_rec", "lambda_perc", "lambda_style", "lambda_adv"):
            if getattr(self, name) < 0:
                raise UsageError(f"loss weight {name} must be non-negative")


ABLATION_FLAGS = (
    "no_semantic_supervision",
    "no_lpt",
    "no_multiscale",
    "no_attention_transfer",
    "no_spa",
)


@dataclass
class TrainConfig:
    """Optimization schedule and run control."""

    batch_size: int = 8
    max_iters: int = 200_000
    lr_init: float = 1e-4
    lr_final: float = 1e-5
    decay_window: int = 20_000
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    seed: int = 0
    ablation: tuple[str, ...] = ()
    checkpoint_interval: int = 1000
    prompter_warmup_iters: int = 0

    def __post_init__(self):
        self.ablation = tuple(self.ablation)
        if self.decay_window > self.max_iters:
            raise UsageError("decay_window must be <= max_iters")
        if self.lr_final > self.lr_init:
            raise UsageError("lr_final must be <= lr_init")
        unknown = [f for f in self.ablation if f not in ABLATION_FLAGS]
        if unknown:
            raise UsageError(f"unknown ablation flag(s): {unknown}; valid: {list(ABLATION_FLAGS)}")


@dataclass
class Config:
    data: PipelineConfig = field(default_factory=PipelineConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        known = {"data", "model", "loss", "train"}
        extra = set(raw) - known
        if extra:
            raise UsageError(f"unknown config section(s): {sorted(extra)}")

        def build(klass, section):
            values = dict(raw.get(section, {}))
            names = {f.name for f in dataclasses.fields(klass)}
            bad = set(values) - names
            if bad:
                raise UsageError(f"unknown key(s) in [{section}]: {sorted(bad)}")
            return klass(**values)

        return cls(
            data=build(PipelineConfig, "data"),
            model=build(ModelConfig, "model"),
            loss=build(LossWeights, "loss"),
            train=build(TrainConfig, "train"),
        )

    @classmethod
    def from_toml(cls, path: str | os.PathLike) -> "Config":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"invalid config file {path}: {exc}")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(canon.encode()).hexdigest()


def toy_model_config(**overrides) -> ModelConfig:
    """Small architecture for desk-scale experiments and the test suite."""
    base = dict(
        encoder_channels=(12, 16, 24, 32),
        prompter_channels=(12, 16, 20, 24),
        prior_channels=16,
        spa_blocks_per_scale=2,
        spa_rates=(1, 2, 4, 8),
        bottleneck_blocks=8,
        lpt_hidden=16,
        disc_channels=8,
        pretext=PretextConfig(seed=7, channels=(8, 12, 16)),
    )
    base.update(overrides)
    return ModelConfig(**base)
