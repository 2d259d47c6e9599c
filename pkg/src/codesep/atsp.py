"""Auxiliary-token serial prediction.

Sub-predictor ``n`` (1..N-1) reads, per frame, the sum of the base codevector
and the codevectors of the auxiliary tokens already decided, and outputs a
distribution over the codebook of RVQ stage ``n + 1``. Training feeds
ground-truth prefixes (teacher forcing); inference feeds its own argmax
predictions, one stage after another.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dsp import Waveform
from .rvq import ResidualQuantizer, lookup


@dataclass(frozen=True)
class ATSPConfig:
    latent_dim: int = 8
    num_stages: int = 4
    codebook_size: int = 64
    d_model: int = 64
    n_lstm: int = 2
    n_conformer: int = 1
    n_heads: int = 4
    conv_kernel: int = 7
    ff_mult: int = 4

    @classmethod
    def paper(cls) -> "ATSPConfig":
        return cls(latent_dim=32, num_stages=4, codebook_size=1024, d_model=256,
                   n_lstm=2, n_conformer=3, n_heads=4, conv_kernel=15)

    def to_dict(self) -> dict:
        return asdict(self)


class FeedForward(nn.Sequential):
    def __init__(self, d_model: int, mult: int):
        super().__init__(nn.LayerNorm(d_model), nn.Linear(d_model, mult * d_model), nn.SiLU(),
                         nn.Linear(mult * d_model, d_model))


class ConvModule(nn.Module):
    """Pointwise conv + GLU -> depthwise conv -> norm -> SiLU -> pointwise conv."""

    def __init__(self, d_model: int, kernel_size: int):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.pointwise_in = nn.Conv1d(d_model, 2 * d_model, 1)
        self.depthwise = nn.Conv1d(d_model, d_model, kernel_size, padding=kernel_size // 2, groups=d_model)
        # LayerNorm instead of BatchNorm keeps outputs independent of batch composition
        self.mid_norm = nn.LayerNorm(d_model)
        self.pointwise_out = nn.Conv1d(d_model, d_model, 1)

    def forward(self, x):  # (B, T, D)
        h = self.norm(x).transpose(1, 2)
        h = F.glu(self.pointwise_in(h), dim=1)
        h = self.depthwise(h).transpose(1, 2)
        h = F.silu(self.mid_norm(h)).transpose(1, 2)
        return self.pointwise_out(h).transpose(1, 2)


class ConformerBlock(nn.Module):
    """Macaron Conformer: FF/2 -> MHSA -> conv -> FF/2 -> LayerNorm."""

    def __init__(self, d_model: int, n_heads: int, kernel_size: int, ff_mult: int):
        super().__init__()
        self.ff1 = FeedForward(d_model, ff_mult)
        self.attn_norm = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.conv = ConvModule(d_model, kernel_size)
        self.ff2 = FeedForward(d_model, ff_mult)
        self.out_norm = nn.LayerNorm(d_model)

    def forward(self, x):
        x = x + 0.5 * self.ff1(x)
        h = self.attn_norm(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        x = x + self.conv(x)
        x = x + 0.5 * self.ff2(x)
        return self.out_norm(x)


class SubPredictor(nn.Module):
    """Embedding sum ``(B, T, K)`` -> logits ``(B, T, M)``."""

    def __init__(self, c: ATSPConfig):
        super().__init__()
        self.proj = nn.Linear(c.latent_dim, c.d_model)
        self.proj_norm = nn.LayerNorm(c.d_model)
        self.lstm = nn.LSTM(c.d_model, c.d_model // 2, num_layers=c.n_lstm, batch_first=True,
                            bidirectional=True)
        self.blocks = nn.ModuleList(
            ConformerBlock(c.d_model, c.n_heads, c.conv_kernel, c.ff_mult) for _ in range(c.n_conformer))
        self.head = nn.Linear(c.d_model, c.codebook_size)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.proj_norm(self.proj(z))
        h = self.lstm(h)[0]
        for block in self.blocks:
            h = block(h)
        return self.head(h)


class ATSPModule(nn.Module):
    """N-1 sub-predictors; both speaker branches run this single parameter set."""

    def __init__(self, config: ATSPConfig = ATSPConfig()):
        super().__init__()
        self.config = config
        self.predictors = nn.ModuleList(SubPredictor(config) for _ in range(config.num_stages - 1))

    def check_quantizer(self, q: ResidualQuantizer) -> None:
        c = self.config
        if (q.num_stages, q.codebook_size, q.dim) != (c.num_stages, c.codebook_size, c.latent_dim):
            raise ValueError(
                f"quantizer (N={q.num_stages}, M={q.codebook_size}, K={q.dim}) does not match "
                f"ATSP (N={c.num_stages}, M={c.codebook_size}, K={c.latent_dim})")

    def teacher_forced_logits(self, tokens: torch.Tensor, q: ResidualQuantizer) -> torch.Tensor:
        """Ground-truth tokens ``(B, T, N)`` -> logits ``(B, N-1, T, M)``.

        Sub-predictor n reads the codevector sum of stages 1..n.
        """
        books = q.codebooks.detach().to(self.predictors[0].proj.weight.dtype)
        inputs = torch.zeros(*tokens.shape[:2], books.shape[-1], dtype=books.dtype)
        out = []
        for n, predictor in enumerate(self.predictors):
            inputs = inputs + books[n][tokens[..., n] - 1]
            out.append(predictor(inputs))
        return torch.stack(out, dim=1)

    @torch.no_grad()
    def predict(self, base: torch.Tensor, q: ResidualQuantizer) -> torch.Tensor:
        """Base tokens ``(B, T)`` -> predicted auxiliary tokens ``(B, N-1, T)``, 1-based."""
        books = q.codebooks.detach().to(self.predictors[0].proj.weight.dtype)
        inputs = books[0][base - 1]
        out = []
        for n, predictor in enumerate(self.predictors):
            aux = predictor(inputs).argmax(-1) + 1
            out.append(aux)
            inputs = inputs + books[n + 1][aux - 1]
        return torch.stack(out, dim=1)


# --------------------------------------------------------------------------- operations


def sub_predictor_input(d_base: int, d_aux_prefix, q: ResidualQuantizer, n: int) -> np.ndarray:
    """Input of sub-predictor ``n``: base codevector plus the prefix's stage codevectors.

    Only ``n <= N - 1`` feeds a sub-predictor, but the sum is defined up to
    ``n = N`` (the full-depth embedding), so that is accepted too.
    """
    if not 1 <= n <= q.num_stages:
        raise ValueError(f"sub-predictor index {n} outside 1..{q.num_stages}")
    prefix = list(d_aux_prefix)
    if len(prefix) != n - 1:
        raise ValueError(f"sub-predictor {n} needs {n - 1} prefix tokens, got {len(prefix)}")
    z = lookup(d_base, q.codebook(1))
    for i, token in enumerate(prefix, start=1):
        z = z + lookup(token, q.codebook(i + 1))
    return z


def predict_aux(base_tokens, module: ATSPModule, q: ResidualQuantizer) -> np.ndarray:
    """Serial argmax prediction of the ``(N-1, T)`` auxiliary tokens of one stream."""
    module.check_quantizer(q)
    base = torch.as_tensor(np.ascontiguousarray(base_tokens), dtype=torch.long)
    if base.numel() and (base.min() < 1 or base.max() > q.codebook_size):
        raise ValueError(f"base tokens must lie in 1..{q.codebook_size}")
    return module.predict(base[None], q)[0].numpy()


def teacher_forcing_ce(p, targets, *, log_probs: bool = False):
    """Mean over frames of the summed per-stage cross-entropy.

    Args:
        p: ``(..., N-1, T, M)`` probabilities, or log-probabilities with ``log_probs``.
        targets: ``(..., N-1, T)`` 1-based tokens of stages 2..N.
    """
    as_float = not isinstance(p, torch.Tensor)
    if as_float:
        p = torch.as_tensor(np.ascontiguousarray(p), dtype=torch.float64)
    targets = torch.as_tensor(np.ascontiguousarray(targets)) if not isinstance(targets, torch.Tensor) else targets
    if p.shape[:-1] != targets.shape:
        raise ValueError(f"probabilities {tuple(p.shape)} do not match targets {tuple(targets.shape)}")
    logp = p if log_probs else torch.log(p)
    nll = -logp.gather(-1, (targets.long() - 1).unsqueeze(-1)).squeeze(-1)
    loss = nll.sum(-2).mean()
    return float(loss) if as_float else loss


def tf_ce_from_tokens(module: ATSPModule, q: ResidualQuantizer, tokens: torch.Tensor) -> torch.Tensor:
    """Teacher-forced loss for ground-truth codec tokens ``(B, T, N)``."""
    logp = torch.log_softmax(module.teacher_forced_logits(tokens, q), dim=-1)
    targets = tokens[..., 1:].permute(0, 2, 1)  # (B, N-1, T)
    return teacher_forcing_ce(logp, targets, log_probs=True)


def tf_ce_loss(x, codec, module: ATSPModule) -> torch.Tensor:
    """Teacher-forced cross-entropy for single-speaker audio under a frozen codec.

    ``x`` is a :class:`Waveform` or a ``(B, n)`` batch.
    """
    module.check_quantizer(codec.quantizer)
    if isinstance(x, Waveform):
        x = torch.from_numpy(x.samples).to(codec.dtype)[None]
    tokens = codec.tokenize_batch(x)
    return tf_ce_from_tokens(module, codec.quantizer, tokens)
