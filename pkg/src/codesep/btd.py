"""Base-token disentanglement: mixture mel -> two base-token distributions.

mel -> strided conv downsampler -> self-attention (intra) stack
    -> duplicate + per-source trainable bias (ACBG)
    -> cross-attention (inter) stack, one shared map g: (a, b) -> (g(a, b), g(b, a))
    -> shared linear head -> softmax over the M first-stage codevectors
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dsp import MelSpectrogram, Waveform, mdct_num_frames, mel_spectrogram_torch
from .errors import ConfigurationError


@dataclass(frozen=True)
class BTDConfig:
    sample_rate_hz: int = 8000
    n_mels: int = 40
    mel_shift: int = 40
    num_down: int = 1
    stride: int = 2
    d_model: int = 64
    n_heads: int = 4
    n_intra: int = 1
    n_inter: int = 1
    ff_mult: int = 4
    codebook_size: int = 64
    use_acbg: bool = True
    delta_std: float = 0.02

    @property
    def token_hop(self) -> int:
        """Samples per output frame; must equal the codec hop."""
        return self.mel_shift * self.stride**self.num_down

    @classmethod
    def paper(cls) -> "BTDConfig":
        return cls(sample_rate_hz=16000, n_mels=80, mel_shift=80, num_down=3, stride=2,
                   d_model=256, n_heads=4, n_intra=4, n_inter=4, codebook_size=1024)

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    freq = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)[:, : dim // 2]
    return pe.to(dtype)


class AttentionBlock(nn.Module):
    """Pre-norm attention + feed-forward. Self-attention when ``context`` is None."""

    def __init__(self, d_model: int, n_heads: int, ff_mult: int):
        super().__init__()
        self.norm_q = nn.LayerNorm(d_model)
        self.norm_kv = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.norm_ff = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, ff_mult * d_model), nn.GELU(),
                                nn.Linear(ff_mult * d_model, d_model))

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        q = self.norm_q(x)
        kv = q if context is None else self.norm_kv(context)
        x = x + self.attn(q, kv, kv, need_weights=False)[0]
        return x + self.ff(self.norm_ff(x))


class BTDModel(nn.Module):
    def __init__(self, config: BTDConfig = BTDConfig()):
        super().__init__()
        self.config = c = config
        layers = []
        in_dim = c.n_mels
        for _ in range(c.num_down):
            layers += [nn.Conv1d(in_dim, c.d_model, 2 * c.stride, stride=c.stride, padding=c.stride // 2),
                       nn.GELU()]
            in_dim = c.d_model
        if not layers:
            layers = [nn.Conv1d(in_dim, c.d_model, 1)]
        self.downsample = nn.Sequential(*layers)
        self.intra = nn.ModuleList(AttentionBlock(c.d_model, c.n_heads, c.ff_mult) for _ in range(c.n_intra))
        self.inter = nn.ModuleList(AttentionBlock(c.d_model, c.n_heads, c.ff_mult) for _ in range(c.n_inter))
        delta = torch.randn(2, c.d_model) * c.delta_std
        self.delta = nn.Parameter(delta if c.use_acbg else torch.zeros_like(delta),
                                  requires_grad=c.use_acbg)
        self.out_norm = nn.LayerNorm(c.d_model)
        self.head = nn.Linear(c.d_model, c.codebook_size)

    # ---- front end

    def mel_frames_for(self, num_tokens: int) -> int:
        return num_tokens * self.config.stride**self.config.num_down

    def features(self, y: torch.Tensor) -> torch.Tensor:
        """Mixture ``(B, n)`` -> padded log-mel ``(B, T_tokens * r, n_mels)``.

        Padding centres every group of ``r`` mel frames on the matching codec
        frame, so the downsampled sequence has exactly the codec frame count.
        """
        c = self.config
        r = c.stride**c.num_down
        window = 4 * c.mel_shift
        num_tokens = mdct_num_frames(y.shape[-1], 2 * c.token_hop)
        if num_tokens == 0:
            return y.new_zeros(*y.shape[:-1], 0, c.n_mels)
        left = ((r - 1) * c.mel_shift + window) // 2
        total = (num_tokens * r - 1) * c.mel_shift + window
        padded = F.pad(y, (left, total - left - y.shape[-1]))
        return mel_spectrogram_torch(padded, c.sample_rate_hz, c.n_mels, c.mel_shift)

    # ---- network

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """``(B, T_mel, n_mels)`` -> logits ``(B, 2, T, M)``."""
        c = self.config
        if mel.shape[-1] != c.n_mels:
            raise ValueError(f"mel dimension {mel.shape[-1]} != configured {c.n_mels}")
        z = self.downsample(mel.transpose(1, 2)).transpose(1, 2)
        z = z + sinusoidal_positions(z.shape[1], c.d_model, z.dtype)
        for block in self.intra:
            z = block(z)
        a, b = z + self.delta[0], z + self.delta[1]
        for block in self.inter:
            # two separate calls keep the swap symmetry bit-exact
            a, b = block(a, b), block(b, a)
        logits = [self.head(self.out_norm(s)) for s in (a, b)]
        return torch.stack(logits, dim=1)

    def logits_for(self, y: torch.Tensor) -> torch.Tensor:
        return self(self.features(y))


# --------------------------------------------------------------------------- operations


def argmax_tokens(scores) -> np.ndarray:
    """1-based argmax over the last axis; ties go to the smallest index."""
    scores = np.asarray(scores)
    return np.argmax(scores, axis=-1) + 1


def _mel_tensor(mel, model: BTDModel) -> torch.Tensor:
    frames = mel.frames if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    if frames.ndim != 2 or frames.shape[1] != model.config.n_mels:
        raise ValueError(f"expected (T, {model.config.n_mels}) mel frames, got {frames.shape}")
    dtype = model.head.weight.dtype
    return torch.as_tensor(frames, dtype=dtype)[None]


@torch.no_grad()
def btd_forward(mel, model: BTDModel) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic ``(T, M)`` base-token distributions for both sources."""
    probs = torch.softmax(model(_mel_tensor(mel, model)).double(), dim=-1)[0]
    return probs[0].numpy(), probs[1].numpy()


@torch.no_grad()
def disentangle(mel, model: BTDModel) -> tuple[np.ndarray, np.ndarray]:
    """Argmax base tokens ``(D1, D2)``, each of length T and 1-based."""
    logits = model(_mel_tensor(mel, model))[0].numpy()
    return argmax_tokens(logits[0]), argmax_tokens(logits[1])


def mixture_mel(y: Waveform, model: BTDModel) -> MelSpectrogram:
    """Codec-aligned mixture mel used as BTD input."""
    if y.sample_rate_hz != model.config.sample_rate_hz:
        raise ConfigurationError(
            f"mixture rate {y.sample_rate_hz} Hz != BTD rate {model.config.sample_rate_hz} Hz")
    feats = model.features(torch.from_numpy(y.samples)[None])[0]
    return MelSpectrogram(feats.numpy(), model.config.mel_shift)


def pi_ce_loss(p1, p2, t1, t2, *, scope: str = "frame", log_probs: bool = False):
    """Permutation-invariant cross-entropy between two distributions and two targets.

    Args:
        p1, p2: ``(..., T, M)`` probabilities (or log-probabilities with ``log_probs``).
        t1, t2: ``(..., T)`` 1-based target tokens.
        scope: ``"frame"`` takes the min over the two assignments per frame;
            ``"utterance"`` takes it once per sequence of summed frame losses.

    Returns:
        The mean per-frame loss; a float for array inputs, a tensor for tensors.
    """
    as_float = not isinstance(p1, torch.Tensor)
    p1, p2 = (torch.as_tensor(np.ascontiguousarray(p), dtype=torch.float64) if as_float else p for p in (p1, p2))
    t1, t2 = (torch.as_tensor(np.ascontiguousarray(t)) if not isinstance(t, torch.Tensor) else t for t in (t1, t2))
    if p1.shape != p2.shape or t1.shape != t2.shape or p1.shape[:-1] != t1.shape:
        raise ValueError(
            f"shape mismatch: P {tuple(p1.shape)}/{tuple(p2.shape)}, targets {tuple(t1.shape)}/{tuple(t2.shape)}")
    m = p1.shape[-1]
    for t in (t1, t2):
        if t.numel() and (t.min() < 1 or t.max() > m):
            raise ValueError(f"targets must lie in 1..{m}")
    lp1, lp2 = (p, q) = (p1, p2) if log_probs else (torch.log(p1), torch.log(p2))

    def nll(lp, t):
        return -lp.gather(-1, (t.long() - 1).unsqueeze(-1)).squeeze(-1)

    straight = nll(lp1, t1) + nll(lp2, t2)
    swapped = nll(lp1, t2) + nll(lp2, t1)
    if scope == "frame":
        loss = torch.minimum(straight, swapped).mean()
    elif scope == "utterance":
        frames = straight.shape[-1]
        best = torch.minimum(straight.sum(-1), swapped.sum(-1))
        loss = (best / frames).mean()
    else:
        raise ValueError(f"unknown permutation scope {scope!r}")
    return float(loss) if as_float else loss


def btd_batch_loss(model: BTDModel, codec, y: torch.Tensor, x1: torch.Tensor, x2: torch.Tensor,
                   scope: str = "frame") -> torch.Tensor:
    """PI-CE of the model on a mixture batch against the codec's first-stage tokens."""
    logits = model.logits_for(y)
    with torch.no_grad():
        d1 = codec.tokenize_batch(x1)[..., 0]
        d2 = codec.tokenize_batch(x2)[..., 0]
    if logits.shape[2] != d1.shape[1]:
        raise ConfigurationError(
            f"BTD produces {logits.shape[2]} frames but the codec {d1.shape[1]}; "
            f"token hop {model.config.token_hop} vs codec hop {codec.config.hop}")
    logp = torch.log_softmax(logits, dim=-1)
    return pi_ce_loss(logp[:, 0], logp[:, 1], d1, d2, scope=scope, log_probs=True)


def train_step_btd(batch, codec, model: BTDModel, optimizer: torch.optim.Optimizer,
                   scope: str = "frame") -> float:
    """One optimizer step on a ``(y, x1, x2)`` batch of ``(B, n)`` tensors; codec stays frozen."""
    y, x1, x2 = batch
    if model.config.token_hop != codec.config.hop:
        raise ConfigurationError(
            f"BTD token hop {model.config.token_hop} != codec hop {codec.config.hop}")
    model.train()
    loss = btd_batch_loss(model, codec, y, x1, x2, scope)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())
