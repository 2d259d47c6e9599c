"""Plain neural speech codec operating on MDCT frames.

encoder: MDCT frames -> residual 1-D conv stack -> K-dim latents
RVQ:     latents -> N tokens per frame
decoder: summed codevectors -> residual 1-D conv stack -> MDCT frames -> IMDCT
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
import torch
from torch import nn

from .dsp import Waveform, imdct_torch, mdct_num_frames, mdct_torch, mel_spectrogram_torch
from .rvq import ResidualQuantizer, init_codebooks, lookup


@dataclass(frozen=True)
class CodecConfig:
    sample_rate_hz: int = 8000
    mdct_frame_length: int = 160
    latent_dim: int = 8
    num_stages: int = 4
    codebook_size: int = 64
    hidden: int = 128
    depth: int = 3
    kernel_size: int = 3
    # weight of the MDCT-coefficient MSE term in the training loss
    mdct_weight: float = 20.0

    def __post_init__(self):
        if self.mdct_frame_length % 2 or self.mdct_frame_length < 4:
            raise ValueError("mdct_frame_length must be even and >= 4")
        if self.num_stages < 2 or self.codebook_size < 2:
            raise ValueError("need N >= 2 stages and M >= 2 codevectors")

    @property
    def hop(self) -> int:
        return self.mdct_frame_length // 2

    @property
    def token_rate(self) -> Fraction:
        return Fraction(self.sample_rate_hz, self.hop)

    @classmethod
    def paper(cls) -> "CodecConfig":
        # hop 640 matches the BTD token hop (mel shift 80, three stride-2 layers)
        return cls(sample_rate_hz=16000, mdct_frame_length=1280, latent_dim=32,
                   num_stages=4, codebook_size=1024, hidden=256, depth=4)

    def to_dict(self) -> dict:
        return asdict(self)


class ResBlock(nn.Module):
    """Conv -> LayerNorm -> GELU -> 1x1 conv, with a residual connection."""

    def __init__(self, channels: int, kernel_size: int):
        super().__init__()
        self.conv = nn.Conv1d(channels, channels, kernel_size, padding=kernel_size // 2)
        self.norm = nn.LayerNorm(channels)
        self.act = nn.GELU()
        self.proj = nn.Conv1d(channels, channels, 1)

    def forward(self, x):  # (B, C, T)
        h = self.conv(x)
        h = self.norm(h.transpose(1, 2)).transpose(1, 2)
        return x + self.proj(self.act(h))


def _stack(in_dim: int, out_dim: int, hidden: int, depth: int, kernel_size: int) -> nn.Sequential:
    layers = [nn.Conv1d(in_dim, hidden, kernel_size, padding=kernel_size // 2)]
    layers += [ResBlock(hidden, kernel_size) for _ in range(depth)]
    layers += [nn.Conv1d(hidden, out_dim, 1)]
    return nn.Sequential(*layers)


class CodecModel(nn.Module):
    def __init__(self, config: CodecConfig = CodecConfig()):
        super().__init__()
        self.config = config
        bins = config.hop
        self.encoder = _stack(bins, config.latent_dim, config.hidden, config.depth, config.kernel_size)
        self.quantizer = ResidualQuantizer(config.num_stages, config.codebook_size, config.latent_dim)
        self.decoder = _stack(config.latent_dim, bins, config.hidden, config.depth, config.kernel_size)

    @property
    def dtype(self) -> torch.dtype:
        return self.quantizer.codebooks.dtype

    # ---- batched tensor path (used for training)

    def encode_batch(self, x: torch.Tensor) -> torch.Tensor:
        """``(B, n)`` samples -> ``(B, T, K)`` latents."""
        spec = mdct_torch(x, self.config.mdct_frame_length)
        return self.encoder(spec.transpose(1, 2)).transpose(1, 2)

    def decode_batch(self, emb: torch.Tensor, num_samples: int | None = None) -> torch.Tensor:
        """``(B, T, K)`` embeddings -> ``(B, num_samples)`` samples."""
        if emb.shape[-1] != self.config.latent_dim:
            raise ValueError(f"embedding dimension {emb.shape[-1]} != K={self.config.latent_dim}")
        coeffs = self.decoder(emb.transpose(1, 2)).transpose(1, 2)
        return imdct_torch(coeffs, self.config.mdct_frame_length, num_samples)

    def decode_coefficients(self, emb: torch.Tensor) -> torch.Tensor:
        return self.decoder(emb.transpose(1, 2)).transpose(1, 2)

    def forward(self, x: torch.Tensor, quantize: bool = True, depth: torch.Tensor | None = None):
        """Returns ``(reconstruction, tokens, quantization_loss, coefficients)``.

        With ``quantize=False`` the latents bypass the RVQ (tokens are None).
        ``depth`` (one stage count per batch row) decodes each row from only
        its first stages; the quantization loss still covers every stage.
        """
        z = self.encode_batch(x)
        if quantize:
            zq, tokens, qloss = self.quantizer(z)
            if depth is not None:
                partial = torch.stack([self.quantizer.embed(tokens, k) for k in range(1, tokens.shape[-1] + 1)])
                chosen = partial[depth - 1, torch.arange(z.shape[0])]
                zq = z + (chosen - z).detach()
        else:
            zq, tokens, qloss = z, None, z.new_zeros(())
        coeffs = self.decode_coefficients(zq)
        recon = imdct_torch(coeffs, self.config.mdct_frame_length, x.shape[-1])
        return recon, tokens, qloss, coeffs

    @torch.no_grad()
    def tokenize_batch(self, x: torch.Tensor) -> torch.Tensor:
        """``(B, n)`` -> 1-based tokens ``(B, T, N)``."""
        _, tokens, _ = self.quantizer(self.encode_batch(x))
        return tokens

    @torch.no_grad()
    def init_codebooks_from(self, x: torch.Tensor, seed: int = 0) -> None:
        """k-means initialisation of the RVQ on the current encoder's latents."""
        z = self.encode_batch(x).reshape(-1, self.config.latent_dim).double().numpy()
        fitted = init_codebooks(z, self.config.num_stages, self.config.codebook_size, seed=seed)
        self.quantizer.codebooks.copy_(fitted.codebooks.to(self.dtype))


def _check_rate(w: Waveform, m: CodecModel) -> None:
    if w.sample_rate_hz != m.config.sample_rate_hz:
        raise ValueError(
            f"waveform rate {w.sample_rate_hz} Hz != codec rate {m.config.sample_rate_hz} Hz"
        )


def _as_batch(w: Waveform, m: CodecModel) -> torch.Tensor:
    return torch.from_numpy(w.samples).to(m.dtype)[None]


@torch.no_grad()
def encode(w: Waveform, m: CodecModel) -> np.ndarray:
    """Latent sequence ``(T, K)`` with T equal to the MDCT frame count."""
    _check_rate(w, m)
    return m.encode_batch(_as_batch(w, m))[0].double().numpy()


@torch.no_grad()
def tokenize(w: Waveform, m: CodecModel) -> np.ndarray:
    """1-based token matrix ``(T, N)``."""
    _check_rate(w, m)
    return m.tokenize_batch(_as_batch(w, m))[0].numpy()


def dequantize_frames(tokens: np.ndarray, m: CodecModel, up_to: int | None = None) -> np.ndarray:
    """Frame-wise :func:`codesep.rvq.dequantize` for a ``(T, n)`` token matrix."""
    tokens = np.asarray(tokens)
    q = m.quantizer
    up_to = tokens.shape[1] if up_to is None else up_to
    if not 1 <= up_to <= min(q.num_stages, tokens.shape[1]):
        raise ValueError(f"up_to={up_to} outside 1..{min(q.num_stages, tokens.shape[1])}")
    out = np.zeros((tokens.shape[0], q.dim))
    for n in range(1, up_to + 1):
        cb = q.codebook(n)
        if tokens.size:
            lookup(int(tokens[:, n - 1].min()), cb)
            lookup(int(tokens[:, n - 1].max()), cb)
        out = out + cb[tokens[:, n - 1] - 1]
    return out


@torch.no_grad()
def decode_embeddings(e: np.ndarray, m: CodecModel, num_samples: int | None = None) -> Waveform:
    """Decode ``(T, K)`` embeddings; default length is ``(T - 1) * hop`` samples."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != m.config.latent_dim:
        raise ValueError(f"expected (T, {m.config.latent_dim}) embeddings, got {e.shape}")
    x = m.decode_batch(torch.from_numpy(e).to(m.dtype)[None], num_samples)
    return Waveform(x[0].double().numpy(), m.config.sample_rate_hz)


def reconstruct(w: Waveform, m: CodecModel, up_to: int | None = None) -> Waveform:
    """Tokenize, keep the first ``up_to`` stages, decode; output has ``len(w)`` samples."""
    tokens = tokenize(w, m)
    return decode_embeddings(dequantize_frames(tokens, m, up_to), m, len(w))


def multi_resolution_mel_loss(x: torch.Tensor, y: torch.Tensor, sample_rate_hz: int) -> torch.Tensor:
    """Mean L1 distance of log-mel spectrograms at three resolutions."""
    scale = sample_rate_hz / 16000
    total = x.new_zeros(())
    for window, n_mels in ((256, 32), (512, 64), (1024, 80)):
        shift = max(1, int(round(window * scale)) // 4)
        n_mels = max(8, int(round(n_mels * min(1.0, scale * 1.5))))
        mx = mel_spectrogram_torch(x, sample_rate_hz, n_mels, shift)
        my = mel_spectrogram_torch(y, sample_rate_hz, n_mels, shift)
        if mx.shape[-2]:
            total = total + (mx - my).abs().mean()
    return total / 3


def codec_training_loss(batch: torch.Tensor, m: CodecModel, quantize: bool = True,
                        depth: torch.Tensor | None = None) -> torch.Tensor:
    """Spectral reconstruction loss plus quantization loss for a ``(B, n)`` batch.

    The spectral part is multi-resolution log-mel L1 plus an MDCT-coefficient
    MSE (weight ``config.mdct_weight``); the adversarial term is not used.
    """
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError(f"expected a non-empty (B, n) batch, got {tuple(batch.shape)}")
    recon, _, qloss, coeffs = m(batch, quantize, depth)
    loss = multi_resolution_mel_loss(recon, batch, m.config.sample_rate_hz) + qloss
    if m.config.mdct_weight:
        target = mdct_torch(batch, m.config.mdct_frame_length)
        loss = loss + m.config.mdct_weight * (coeffs - target).pow(2).sum(-1).mean()
    return loss


def num_frames(num_samples: int, config: CodecConfig) -> int:
    return mdct_num_frames(num_samples, config.mdct_frame_length)
