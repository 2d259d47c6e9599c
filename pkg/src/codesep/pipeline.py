"""End-to-end assembly: joint separation-and-compression plus the two cascade baselines.

JSAC  y -> BTD base tokens (2 streams) -> bitstream -> ATSP aux tokens -> codec decoder
FCTS  y -> codec (n stages) -> y' -> separator
FSTC  y -> separator -> codec (n stages) per stream
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Protocol

import numpy as np
import torch

from .atsp import ATSPModule, predict_aux
from .bitstream import TokenBitstream, bitrate_of
from .btd import BTDModel, disentangle, mixture_mel
from .codec import CodecModel, decode_embeddings, dequantize_frames, reconstruct
from .dsp import Waveform
from .errors import ConfigurationError
from .evalkit import EvalReport, mel_distance, pit_si_sdr

MODES = ("jsac", "fcts", "fstc")


class Separator(Protocol):
    def separate(self, y: Waveform) -> tuple[Waveform, Waveform]: ...


class OracleSeparator:
    """Returns the known sources regardless of its input; for exercising the harness."""

    def __init__(self, x1: Waveform, x2: Waveform):
        self.sources = (x1, x2)

    def separate(self, y: Waveform) -> tuple[Waveform, Waveform]:
        if len(y) != len(self.sources[0]):
            raise ValueError(f"input has {len(y)} samples, sources have {len(self.sources[0])}")
        return self.sources


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "jsac"
    bitrate_bps: float | None = None
    num_sources: int = 2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode != "jsac" and (self.bitrate_bps is None or self.bitrate_bps <= 0):
            raise ConfigurationError(f"{self.mode} needs a positive bitrate")
        if self.num_sources != 2:
            raise ConfigurationError("only two-source mixtures are supported")


# --------------------------------------------------------------------------- rates


def rate_report(codec: CodecModel, streams: int, stages: int) -> dict:
    per_stream = bitrate_of(codec.config.token_rate, codec.config.codebook_size, 1, stages)
    return {"per_stream_bps": float(per_stream), "total_bps": float(per_stream * streams),
            "streams": streams, "stages": stages}


def jsac_rate(codec: CodecModel, streams: int = 2) -> dict:
    """Transmitted rate of JSAC: base tokens only, independent of the RVQ depth."""
    return rate_report(codec, streams, 1)


def baseline_stages(bitrate_bps: float, codec: CodecModel) -> tuple[int, Fraction]:
    """RVQ stage count whose single-stream rate is closest to ``bitrate_bps``.

    Raises:
        ConfigurationError: when even the closest rate is off by more than half a stage.
    """
    c = codec.config
    one = bitrate_of(c.token_rate, c.codebook_size, 1, 1)
    target = Fraction(bitrate_bps).limit_denominator(10**6)
    best = min(range(1, c.num_stages + 1), key=lambda n: (abs(n * one - target), n))
    if abs(best * one - target) > one / 2:
        raise ConfigurationError(
            f"{float(target):g} bit/s is not reachable with {c.num_stages} stages of "
            f"{float(one):g} bit/s (M={c.codebook_size}, {float(c.token_rate):g} tokens/s)")
    return best, best * one


# --------------------------------------------------------------------------- JSAC


def _check_pair(btd: BTDModel, codec: CodecModel) -> None:
    if btd.config.token_hop != codec.config.hop:
        raise ConfigurationError(
            f"BTD frame hop {btd.config.token_hop} != codec hop {codec.config.hop}")
    if btd.config.codebook_size != codec.config.codebook_size:
        raise ConfigurationError(
            f"BTD predicts {btd.config.codebook_size} classes, codec has M={codec.config.codebook_size}")
    if btd.config.sample_rate_hz != codec.config.sample_rate_hz:
        raise ConfigurationError("BTD and codec sample rates differ")


def jsac_encode(y: Waveform, btd: BTDModel, codec: CodecModel) -> TokenBitstream:
    """Mixture -> two streams of base tokens."""
    _check_pair(btd, codec)
    d1, d2 = disentangle(mixture_mel(y, btd), btd)
    c = codec.config
    return TokenBitstream(c.sample_rate_hz, c.token_rate, c.codebook_size, np.stack([d1, d2]))


def decode_stream(base: np.ndarray, atsp: ATSPModule, codec: CodecModel,
                  num_samples: int | None = None) -> Waveform:
    aux = predict_aux(base, atsp, codec.quantizer)
    tokens = np.concatenate([np.asarray(base)[None], aux]).T  # (T, N)
    return decode_embeddings(dequantize_frames(tokens, codec), codec, num_samples)


def jsac_decode(bs: TokenBitstream, atsp: ATSPModule, codec: CodecModel,
                num_samples: int | None = None) -> tuple[Waveform, ...]:
    """Reconstruct one waveform per stream; default length is ``(T - 1) * hop``."""
    c = codec.config
    if bs.codebook_size != c.codebook_size:
        raise ConfigurationError(f"bitstream M={bs.codebook_size} != codec M={c.codebook_size}")
    if bs.sample_rate_hz != c.sample_rate_hz or bs.token_rate != c.token_rate:
        raise ConfigurationError(
            f"bitstream ({bs.sample_rate_hz} Hz, {bs.token_rate} tokens/s) does not match "
            f"codec ({c.sample_rate_hz} Hz, {c.token_rate} tokens/s)")
    return tuple(decode_stream(bs.tokens[i], atsp, codec, num_samples) for i in range(bs.num_streams))


def jsac_separate(y: Waveform, btd: BTDModel, atsp: ATSPModule,
                  codec: CodecModel) -> tuple[Waveform, Waveform]:
    x1, x2 = jsac_decode(jsac_encode(y, btd, codec), atsp, codec, len(y))
    return x1, x2


# --------------------------------------------------------------------------- baselines


def fcts(y: Waveform, bitrate_bps: float, codec: CodecModel,
         separator: Separator) -> tuple[Waveform, Waveform]:
    """Compress the mixture at ``bitrate_bps``, then separate the decoded mixture."""
    stages, _ = baseline_stages(bitrate_bps, codec)
    return separator.separate(reconstruct(y, codec, up_to=stages))


def fstc(y: Waveform, bitrate_bps: float, codec: CodecModel,
         separator: Separator) -> tuple[Waveform, Waveform]:
    """Separate, then compress each estimate at ``bitrate_bps / 2``."""
    stages, _ = baseline_stages(bitrate_bps / 2, codec)
    x1, x2 = separator.separate(y)
    return reconstruct(x1, codec, up_to=stages), reconstruct(x2, codec, up_to=stages)


def baseline_rate(mode: str, bitrate_bps: float, codec: CodecModel, num_sources: int = 2) -> dict:
    """Achieved rate of a baseline at the requested preset ``bitrate_bps``."""
    if mode == "fcts":
        stages, _ = baseline_stages(bitrate_bps, codec)
        return rate_report(codec, 1, stages)
    if mode == "fstc":
        stages, _ = baseline_stages(bitrate_bps / 2, codec)
        return rate_report(codec, num_sources, stages)
    raise ConfigurationError(f"{mode!r} is not a baseline mode")


# --------------------------------------------------------------------------- trainable separator


class MaskSeparator(torch.nn.Module):
    """Small STFT-mask separator (BLSTM over log-magnitudes, two sigmoid masks)."""

    def __init__(self, n_fft: int = 256, hop: int = 64, hidden: int = 128, layers: int = 2):
        super().__init__()
        self.n_fft, self.hop = n_fft, hop
        bins = n_fft // 2 + 1
        self.lstm = torch.nn.LSTM(bins, hidden, num_layers=layers, batch_first=True, bidirectional=True)
        self.out = torch.nn.Linear(2 * hidden, 2 * bins)

    def config_dict(self) -> dict:
        return {"n_fft": self.n_fft, "hop": self.hop, "hidden": self.lstm.hidden_size,
                "layers": self.lstm.num_layers}

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        """``(B, n)`` -> ``(B, 2, n)``."""
        window = torch.hann_window(self.n_fft, dtype=y.dtype)
        spec = torch.stft(y, self.n_fft, self.hop, window=window, return_complex=True)  # (B, F, T)
        feats = torch.log(spec.abs() + 1e-5).transpose(1, 2)
        masks = torch.sigmoid(self.out(self.lstm(feats)[0]))  # (B, T, 2F)
        masks = masks.reshape(*masks.shape[:2], 2, -1).permute(0, 2, 3, 1)  # (B, 2, F, T)
        est = spec[:, None] * masks
        flat = est.reshape(-1, *est.shape[2:])
        wav = torch.istft(flat, self.n_fft, self.hop, window=window, length=y.shape[-1])
        return wav.reshape(y.shape[0], 2, -1)

    @torch.no_grad()
    def separate(self, y: Waveform) -> tuple[Waveform, Waveform]:
        dtype = self.out.weight.dtype
        est = self(torch.from_numpy(y.samples).to(dtype)[None])[0].double().numpy()
        return Waveform(est[0], y.sample_rate_hz), Waveform(est[1], y.sample_rate_hz)


def neg_pit_si_sdr(est: torch.Tensor, ref: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Negative two-source PIT SI-SDR, averaged over the batch; ``(B, 2, n)`` inputs."""

    def si_sdr(e, r):
        scale = (e * r).sum(-1, keepdim=True) / ((r * r).sum(-1, keepdim=True) + eps)
        target = scale * r
        noise = e - target
        return 10 * torch.log10((target.pow(2).sum(-1) + eps) / (noise.pow(2).sum(-1) + eps))

    straight = si_sdr(est[:, 0], ref[:, 0]) + si_sdr(est[:, 1], ref[:, 1])
    swapped = si_sdr(est[:, 0], ref[:, 1]) + si_sdr(est[:, 1], ref[:, 0])
    return -(torch.maximum(straight, swapped) / 2).mean()


# --------------------------------------------------------------------------- evaluation


def run_mode(mode: str, y: Waveform, *, codec: CodecModel, btd: BTDModel | None = None,
             atsp: ATSPModule | None = None, separator: Separator | None = None,
             bitrate_bps: float | None = None) -> tuple[Waveform, Waveform]:
    PipelineConfig(mode, bitrate_bps)
    if mode == "jsac":
        if btd is None or atsp is None:
            raise ConfigurationError("JSAC needs BTD and ATSP models")
        return jsac_separate(y, btd, atsp, codec)
    if separator is None:
        raise ConfigurationError(f"{mode} needs a separator")
    return (fcts if mode == "fcts" else fstc)(y, bitrate_bps, codec, separator)


def evaluate(mode: str, mixtures, *, codec: CodecModel, btd: BTDModel | None = None,
             atsp: ATSPModule | None = None, separator: Separator | None = None,
             bitrate_bps: float | None = None) -> EvalReport:
    """Per-mixture PIT SI-SDR, its improvement over the mixture, and matched mel distance."""
    PipelineConfig(mode, bitrate_bps)
    rate = jsac_rate(codec) if mode == "jsac" else baseline_rate(mode, bitrate_bps, codec)
    report = EvalReport(mode, {**rate, "requested_bps": bitrate_bps})
    for pair in mixtures:
        refs = (pair.x1, pair.x2)
        ests = run_mode(mode, pair.y, codec=codec, btd=btd, atsp=atsp, separator=separator,
                        bitrate_bps=bitrate_bps)
        value, perm = pit_si_sdr(ests, refs)
        baseline, _ = pit_si_sdr((pair.y, pair.y), refs)
        ordered = ests if perm == (1, 2) else ests[::-1]
        mel = 0.5 * (mel_distance(ordered[0], refs[0]) + mel_distance(ordered[1], refs[1]))
        report.add(pair.uid, pit_si_sdr=value, si_sdr_mixture=baseline, si_sdri=value - baseline,
                   mel_distance=mel)
    return report
