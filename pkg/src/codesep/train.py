"""Deterministic training loops for the codec, BTD, ATSP and the mask separator.

Each stage trains independently. BTD and ATSP read a frozen codec; the
separator is only needed by the cascade baselines. Batches are random
hop-aligned crops drawn from a seeded generator, so a given
(config, data) pair reproduces every checkpoint byte for byte.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .atsp import ATSPModule, tf_ce_loss
from .btd import BTDModel, btd_batch_loss
from .checkpoint import Checkpoint, checkpoint_of, load_checkpoint, save_checkpoint
from .codec import CodecModel, codec_training_loss
from .config import TrainConfig
from .data import load_singles, load_wav_corpus
from .errors import ConfigurationError, DataError, TrainingAborted
from .pipeline import MaskSeparator, neg_pit_si_sdr

log = logging.getLogger(__name__)

KMEANS_CROPS = 64


@dataclass
class TrainResult:
    model: torch.nn.Module
    losses: list[float] = field(default_factory=list)
    checkpoint: Checkpoint | None = None


def seed_everything(seed: int) -> torch.Generator:
    """Fix every RNG the training loops touch and force deterministic kernels."""
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    return torch.Generator().manual_seed(seed)


def stack_signals(signals, min_length: int) -> torch.Tensor:
    """Equal-length float32 matrix of 1-D signals, cut to the shortest one."""
    arrays = [np.asarray(getattr(s, "samples", s), dtype=np.float64) for s in signals]
    if not arrays:
        raise DataError("no training signals")
    n = min(a.size for a in arrays)
    if n < min_length:
        raise DataError(f"shortest training signal has {n} samples, crops need {min_length}")
    return torch.tensor(np.stack([a[:n] for a in arrays]), dtype=torch.float32)


def random_crops(gen: torch.Generator, tensors: tuple[torch.Tensor, ...], batch: int, crop: int,
                 hop: int) -> list[torch.Tensor]:
    """Same random rows and hop-aligned offsets for every tensor in ``tensors``."""
    rows, length = tensors[0].shape
    idx = torch.randint(rows, (batch,), generator=gen)
    offsets = hop * torch.randint(0, (length - crop) // hop + 1, (batch,), generator=gen)
    cols = offsets[:, None] + torch.arange(crop)
    return [t[idx[:, None], cols] for t in tensors]


def _optimizer(params, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW([p for p in params if p.requires_grad], lr=cfg.lr, betas=tuple(cfg.betas),
                             weight_decay=cfg.weight_decay)


def _loop(stage: str, cfg: TrainConfig, model: torch.nn.Module, loss_fn: Callable[[int], torch.Tensor],
          on_step: Callable[[int], None] | None = None) -> list[float]:
    opt = _optimizer(model.parameters(), cfg)
    losses = []
    model.train()
    for step in range(cfg.max_steps):
        if on_step is not None:
            on_step(step)
        loss = loss_fn(step)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingAborted(stage, step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(value)
        if cfg.log_interval and (step % cfg.log_interval == 0 or step == cfg.max_steps - 1):
            log.info("%s step %d loss %.5f", stage, step, value)
        if cfg.checkpoint_interval and cfg.out and step and step % cfg.checkpoint_interval == 0:
            save_checkpoint(cfg.out, checkpoint_of(model, stage, step, _snapshot(cfg)))
    model.eval()
    return losses


def _snapshot(cfg: TrainConfig) -> dict:
    # the output location does not influence training, so it stays out of the file
    d = cfg.to_dict()
    del d["out"]
    return d


def _finish(stage: str, cfg: TrainConfig, model, losses, gen: torch.Generator) -> TrainResult:
    ckpt = checkpoint_of(model, stage, cfg.max_steps, _snapshot(cfg), gen.get_state().numpy().tobytes())
    if cfg.out:
        save_checkpoint(cfg.out, ckpt)
    return TrainResult(model, losses, ckpt)


def _frozen(model: torch.nn.Module) -> torch.nn.Module:
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


# --------------------------------------------------------------------------- stages


def train_codec(cfg: TrainConfig, singles) -> TrainResult:
    """Codec on single-speaker audio.

    The first ``quantizer_warmup_steps`` bypass the RVQ; the codebooks are then
    fitted by k-means on encoder latents and training continues end to end.
    A ``quantizer_dropout`` share of rows is decoded from a random number of
    leading stages so that shallow decodes stay usable.
    """
    gen = seed_everything(cfg.seed)
    model = CodecModel(cfg.codec)
    data = stack_signals(singles, cfg.crop_samples)
    hop, warmup = cfg.codec.hop, min(cfg.quantizer_warmup_steps, cfg.max_steps)

    def init_codebooks(step):
        if step == warmup:
            (crops,) = random_crops(gen, (data,), KMEANS_CROPS, cfg.crop_samples, hop)
            model.init_codebooks_from(crops, seed=cfg.seed)

    def loss_fn(step):
        (x,) = random_crops(gen, (data,), cfg.batch_size, cfg.crop_samples, hop)
        if step < warmup:
            return codec_training_loss(x, model, quantize=False)
        stages = cfg.codec.num_stages
        depth = torch.full((cfg.batch_size,), stages)
        dropped = torch.rand(cfg.batch_size, generator=gen) < cfg.quantizer_dropout
        depth[dropped] = torch.randint(1, stages + 1, (int(dropped.sum()),), generator=gen)
        return codec_training_loss(x, model, depth=depth)

    if warmup == 0:
        init_codebooks(0)
    losses = _loop("codec", cfg, model, loss_fn, init_codebooks if warmup else None)
    return _finish("codec", cfg, model, losses, gen)


def train_btd(cfg: TrainConfig, codec: CodecModel, mixtures) -> TrainResult:
    """BTD on ``(y, x1, x2)`` triples against the frozen codec's base tokens."""
    if codec.config.to_dict() != cfg.codec.to_dict():
        raise ConfigurationError("codec checkpoint does not match the configured codec")
    gen = seed_everything(cfg.seed)
    codec = _frozen(codec)
    model = BTDModel(cfg.btd)
    triples = [stack_signals([getattr(m, k) for m in mixtures], cfg.crop_samples) for k in ("y", "x1", "x2")]

    def loss_fn(step):
        y, x1, x2 = random_crops(gen, tuple(triples), cfg.batch_size, cfg.crop_samples, cfg.codec.hop)
        return btd_batch_loss(model, codec, y, x1, x2, cfg.permutation_scope)

    losses = _loop("btd", cfg, model, loss_fn)
    return _finish("btd", cfg, model, losses, gen)


def train_atsp(cfg: TrainConfig, codec: CodecModel, singles) -> TrainResult:
    """ATSP with teacher forcing on the frozen codec's tokens of single-speaker audio."""
    if codec.config.to_dict() != cfg.codec.to_dict():
        raise ConfigurationError("codec checkpoint does not match the configured codec")
    gen = seed_everything(cfg.seed)
    codec = _frozen(codec)
    model = ATSPModule(cfg.atsp)
    model.check_quantizer(codec.quantizer)
    data = stack_signals(singles, cfg.crop_samples)

    def loss_fn(step):
        (x,) = random_crops(gen, (data,), cfg.batch_size, cfg.crop_samples, cfg.codec.hop)
        return tf_ce_loss(x, codec, model)

    losses = _loop("atsp", cfg, model, loss_fn)
    return _finish("atsp", cfg, model, losses, gen)


def train_separator(cfg: TrainConfig, mixtures) -> TrainResult:
    """Mask separator for the cascade baselines, trained with negative PIT SI-SDR."""
    gen = seed_everything(cfg.seed)
    model = MaskSeparator()
    triples = [stack_signals([getattr(m, k) for m in mixtures], cfg.crop_samples) for k in ("y", "x1", "x2")]

    def loss_fn(step):
        y, x1, x2 = random_crops(gen, tuple(triples), cfg.batch_size, cfg.crop_samples, cfg.codec.hop)
        return neg_pit_si_sdr(model(y), torch.stack([x1, x2], dim=1))

    losses = _loop("separator", cfg, model, loss_fn)
    return _finish("separator", cfg, model, losses, gen)


# --------------------------------------------------------------------------- file-driven entry point


def _load_codec(cfg: TrainConfig) -> CodecModel:
    if not cfg.codec_checkpoint or not Path(cfg.codec_checkpoint).exists():
        raise ConfigurationError(f"stage {cfg.stage} needs a trained codec checkpoint, "
                                 f"{cfg.codec_checkpoint or '(none)'} not found")
    return load_checkpoint(cfg.codec_checkpoint, "codec").build()


def _train_split(items):
    chosen = [m for m in items if getattr(m, "split", "train") == "train"]
    if not chosen:
        raise DataError("no training items in the corpus")
    return chosen


def train(cfg: TrainConfig) -> TrainResult:
    """Run one stage from files under ``cfg.data_root`` and write ``cfg.out``."""
    root = Path(cfg.data_root)
    if cfg.stage == "codec":
        return train_codec(cfg, [u.waveform for u in _train_split(load_singles(root))])
    if cfg.stage == "atsp":
        codec = _load_codec(cfg)
        return train_atsp(cfg, codec, [u.waveform for u in _train_split(load_singles(root))])
    if cfg.stage == "btd":
        codec = _load_codec(cfg)
        return train_btd(cfg, codec, _train_split(load_wav_corpus(root)[0]))
    return train_separator(cfg, _train_split(load_wav_corpus(root)[0]))
