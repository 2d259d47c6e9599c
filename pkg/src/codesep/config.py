"""Training configuration, presets and strict JSON loading."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .atsp import ATSPConfig
from .btd import BTDConfig
from .codec import CodecConfig
from .errors import ConfigurationError

STAGES = ("codec", "btd", "atsp", "separator")
PRESETS = ("desk", "paper")


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "codec"
    preset: str = "desk"
    data_root: str = "data"
    out: str = ""
    codec_checkpoint: str = ""
    seed: int = 0
    max_steps: int = 2000
    batch_size: int = 16
    crop_samples: int = 4000
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.99)
    weight_decay: float = 0.01
    checkpoint_interval: int = 0
    log_interval: int = 100
    # codec only: steps trained without quantization before k-means init of the codebooks
    quantizer_warmup_steps: int = 200
    # codec only: share of batch rows decoded from a random number of leading RVQ stages
    quantizer_dropout: float = 0.5
    permutation_scope: str = "frame"
    codec: CodecConfig = field(default_factory=CodecConfig)
    btd: BTDConfig = field(default_factory=BTDConfig)
    atsp: ATSPConfig = field(default_factory=ATSPConfig)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if self.preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {self.preset!r}")
        if self.max_steps < 1 or self.batch_size < 1 or self.crop_samples < 1:
            raise ConfigurationError("max_steps, batch_size and crop_samples must be positive")
        if self.lr <= 0 or not all(0 <= b < 1 for b in self.betas) or self.weight_decay < 0:
            raise ConfigurationError("invalid optimizer hyperparameters")
        if not 0 <= self.quantizer_dropout <= 1:
            raise ConfigurationError("quantizer_dropout must lie in [0, 1]")
        if self.permutation_scope not in ("frame", "utterance"):
            raise ConfigurationError(f"unknown permutation scope {self.permutation_scope!r}")
        if self.stage in ("btd", "atsp") and not self.codec_checkpoint:
            raise ConfigurationError(f"stage {self.stage} needs codec_checkpoint (a trained codec)")
        hop = self.codec.hop
        if self.crop_samples % hop:
            raise ConfigurationError(f"crop_samples={self.crop_samples} is not a multiple of the hop {hop}")
        consistency = [
            (self.btd.token_hop, hop, "BTD token hop"),
            (self.btd.codebook_size, self.codec.codebook_size, "BTD codebook size"),
            (self.btd.sample_rate_hz, self.codec.sample_rate_hz, "BTD sample rate"),
            (self.atsp.latent_dim, self.codec.latent_dim, "ATSP latent dim"),
            (self.atsp.num_stages, self.codec.num_stages, "ATSP stage count"),
            (self.atsp.codebook_size, self.codec.codebook_size, "ATSP codebook size"),
        ]
        for got, want, name in consistency:
            if got != want:
                raise ConfigurationError(f"{name} {got} does not match codec value {want}")

    @classmethod
    def for_preset(cls, preset: str = "desk", **overrides) -> "TrainConfig":
        if preset == "paper":
            overrides = {"codec": CodecConfig.paper(), "btd": BTDConfig.paper(),
                         "atsp": ATSPConfig.paper(), "crop_samples": 32000, "lr": 3e-4,
                         "max_steps": 1_000_000, **overrides}
        elif preset != "desk":
            raise ConfigurationError(f"unknown preset {preset!r}")
        return cls(preset=preset, **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


_NESTED = {"codec": CodecConfig, "btd": BTDConfig, "atsp": ATSPConfig}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigurationError(f"invalid {where}: {err}") from err


def config_from_dict(data: dict) -> TrainConfig:
    """Build a TrainConfig from a plain dict; nested model sections override the preset."""
    if not isinstance(data, dict):
        raise ConfigurationError("configuration must be a JSON object")
    unknown = sorted(set(data) - {f.name for f in dataclasses.fields(TrainConfig)})
    if unknown:
        raise ConfigurationError(f"unknown key(s) in configuration: {', '.join(unknown)}")
    data = dict(data)
    preset = data.pop("preset", "desk")
    base = TrainConfig.for_preset(preset, stage="codec") if preset in PRESETS else None
    if base is None:
        raise ConfigurationError(f"unknown preset {preset!r}")
    for key, cls in _NESTED.items():
        if key in data:
            section = data[key]
            if not isinstance(section, dict):
                raise ConfigurationError(f"{key} must be a JSON object")
            data[key] = _build(cls, {**asdict(getattr(base, key)), **section}, key)
    if "betas" in data:
        data["betas"] = tuple(data["betas"])
    kwargs = {k: v for k, v in base.to_dict().items() if k not in _NESTED and k != "preset"}
    kwargs["betas"] = tuple(kwargs["betas"])
    kwargs.update({k: getattr(base, k) for k in _NESTED})
    kwargs.update(data)
    try:
        return TrainConfig(preset=preset, **kwargs)
    except TypeError as err:
        raise ConfigurationError(str(err)) from err


def load_config(path: str | Path) -> TrainConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"config {path} is not valid JSON: {err}") from err
    return config_from_dict(data)
