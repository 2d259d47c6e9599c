"""Deterministic DSP primitives: MDCT/IMDCT, log-mel spectrograms, mixing, WAV I/O.

The public functions operate on :class:`Waveform` / numpy arrays in float64.
Batched torch counterparts (``*_torch``) are differentiable and are what the
neural modules call during training; the numpy API is a thin wrapper over them
so there is a single implementation of each transform.
"""
from __future__ import annotations

import functools
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

MEL_FLOOR = 1e-5


@dataclass(frozen=True)
class Waveform:
    """Mono audio, nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"mono waveform expected, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class MDCTSpectrum:
    """MDCT frames (T x F) with 50% overlap; hop = frame_length / 2 = F."""

    frames: np.ndarray
    frame_length: int
    sample_rate_hz: int = 1
    num_samples: int | None = field(default=None)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if self.frame_length < 4 or self.frame_length % 2:
            raise ValueError(f"frame_length must be even and >= 4, got {self.frame_length}")
        if frames.ndim != 2 or frames.shape[1] != self.frame_length // 2:
            raise ValueError(
                f"expected (T, {self.frame_length // 2}) coefficients, got {frames.shape}"
            )
        object.__setattr__(self, "frames", frames)

    @property
    def hop(self) -> int:
        return self.frame_length // 2


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # T_mel x D_mel, natural-log magnitudes
    frame_shift_samples: int

    @property
    def num_bins(self) -> int:
        return self.frames.shape[1]


# --------------------------------------------------------------------------- MDCT


@functools.lru_cache(maxsize=32)
def _mdct_basis(frame_length: int) -> tuple[torch.Tensor, torch.Tensor]:
    hop = frame_length // 2
    n = torch.arange(frame_length, dtype=torch.float64)
    k = torch.arange(hop, dtype=torch.float64)
    window = torch.sin(math.pi * (n + 0.5) / frame_length)
    basis = torch.cos(math.pi / hop * (n[:, None] + 0.5 + hop / 2) * (k[None, :] + 0.5))
    # orthonormal scaling: analysis and synthesis are transposes of each other
    basis = basis * math.sqrt(2.0 / hop)
    return window, basis


def mdct_num_frames(num_samples: int, frame_length: int) -> int:
    """Frame count produced by :func:`mdct` for a signal of ``num_samples``."""
    if num_samples == 0:
        return 0
    hop = frame_length // 2
    return -(-num_samples // hop) + 1


def mdct_torch(x: torch.Tensor, frame_length: int) -> torch.Tensor:
    """MDCT of a batch ``(B, n)`` -> ``(B, T, frame_length // 2)``.

    The signal is zero-padded by one hop on the left and by one hop plus
    whatever completes the last hop on the right.
    """
    if frame_length < 4 or frame_length % 2:
        raise ValueError(f"frame_length must be even and >= 4, got {frame_length}")
    hop = frame_length // 2
    n = x.shape[-1]
    if n == 0:
        return x.new_zeros(*x.shape[:-1], 0, hop)
    window, basis = _mdct_basis(frame_length)
    window = window.to(x.dtype)
    basis = basis.to(x.dtype)
    tail = (-n) % hop
    padded = F.pad(x, (hop, hop + tail))
    frames = padded.unfold(-1, frame_length, hop)  # (B, T, L)
    return (frames * window) @ basis


def imdct_torch(coeffs: torch.Tensor, frame_length: int, num_samples: int | None = None) -> torch.Tensor:
    """Inverse of :func:`mdct_torch` via windowed overlap-add.

    Returns ``(B, (T - 1) * hop)`` samples, or ``num_samples`` if given.
    """
    hop = frame_length // 2
    if coeffs.shape[-1] != hop:
        raise ValueError(
            f"coefficient dimension {coeffs.shape[-1]} does not match frame_length {frame_length}"
        )
    num_frames = coeffs.shape[-2]
    lead = coeffs.shape[:-2]
    out_len = max(num_frames - 1, 0) * hop
    if num_samples is None:
        num_samples = out_len
    if num_frames == 0:
        return coeffs.new_zeros(*lead, num_samples)
    window, basis = _mdct_basis(frame_length)
    segments = (coeffs @ basis.to(coeffs.dtype).T) * window.to(coeffs.dtype)  # (.., T, L)
    flat = segments.reshape(-1, num_frames, frame_length).transpose(1, 2)  # (B', L, T)
    total = (num_frames + 1) * hop
    signal = F.fold(flat, output_size=(1, total), kernel_size=(1, frame_length), stride=(1, hop))
    signal = signal.reshape(*lead, total)[..., hop : hop + out_len]
    if num_samples > out_len:
        signal = F.pad(signal, (0, num_samples - out_len))
    return signal[..., :num_samples]


def mdct(w: Waveform, frame_length: int) -> MDCTSpectrum:
    """Sine-windowed MDCT with 50% overlap."""
    if frame_length % 2:
        raise ValueError(f"frame_length must be even, got {frame_length}")
    x = torch.from_numpy(w.samples)[None]
    frames = mdct_torch(x, frame_length)[0].numpy()
    return MDCTSpectrum(frames, frame_length, w.sample_rate_hz, len(w))


def imdct(s: MDCTSpectrum) -> Waveform:
    coeffs = torch.from_numpy(s.frames)
    samples = imdct_torch(coeffs, s.frame_length, s.num_samples).numpy()
    return Waveform(samples, s.sample_rate_hz)


# --------------------------------------------------------------------------- mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, sample_rate_hz: int) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate_hz / 2), n_mels + 2))
    return edges[1:-1]


@functools.lru_cache(maxsize=64)
def _mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    nyquist = sample_rate_hz / 2
    bins = np.linspace(0.0, nyquist, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(nyquist), n_mels + 2))
    fb = np.zeros((n_mels, bins.size))
    for j in range(n_mels):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        rising = (bins - lo) / (mid - lo)
        falling = (hi - bins) / (hi - mid)
        fb[j] = np.clip(np.minimum(rising, falling), 0.0, None)
        if not fb[j].any():
            # filter narrower than the bin spacing: give it the nearest bin
            fb[j, np.argmin(np.abs(bins - mid))] = 1.0
    return fb


def mel_filterbank(n_mels: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    """Triangular HTK-mel filterbank, ``(n_mels, n_fft // 2 + 1)``, peak weight 1."""
    if n_mels < 1:
        raise ValueError(f"need at least one mel band, got {n_mels}")
    return _mel_filterbank(n_mels, n_fft, sample_rate_hz).copy()


def num_mel_frames(num_samples: int, frame_shift: int) -> int:
    window = 4 * frame_shift
    if num_samples < window:
        return 0
    return (num_samples - window) // frame_shift + 1


def mel_spectrogram_torch(
    x: torch.Tensor, sample_rate_hz: int, n_mels: int, frame_shift: int
) -> torch.Tensor:
    """Log-mel magnitudes of a batch ``(B, n)`` -> ``(B, T_mel, n_mels)``.

    Hann window of ``4 * frame_shift`` samples; frame ``t`` covers
    ``[t * shift, t * shift + window)`` and a trailing partial window is dropped.
    """
    if n_mels < 1 or frame_shift < 1:
        raise ValueError("n_mels and frame_shift must be >= 1")
    window = n_fft = 4 * frame_shift
    fb = torch.from_numpy(_mel_filterbank(n_mels, n_fft, sample_rate_hz)).to(x.dtype)
    if x.shape[-1] < window:
        return x.new_zeros(*x.shape[:-1], 0, n_mels)
    frames = x.unfold(-1, window, frame_shift)
    hann = torch.hann_window(window, periodic=True, dtype=x.dtype)
    spec = torch.fft.rfft(frames * hann, n=n_fft)
    # eps inside the sqrt keeps the gradient finite at exact zeros
    magnitude = torch.sqrt(spec.real**2 + spec.imag**2 + 1e-12)
    return torch.log(magnitude @ fb.T + MEL_FLOOR)


def mel_spectrogram(w: Waveform, n_mels: int, frame_shift: int) -> MelSpectrogram:
    x = torch.from_numpy(w.samples)[None]
    frames = mel_spectrogram_torch(x, w.sample_rate_hz, n_mels, frame_shift)[0].numpy()
    return MelSpectrogram(frames, frame_shift)


# --------------------------------------------------------------------------- mixing / IO


def mix(x1: Waveform, x2: Waveform) -> Waveform:
    if x1.sample_rate_hz != x2.sample_rate_hz:
        raise ValueError(f"sample rates differ: {x1.sample_rate_hz} vs {x2.sample_rate_hz}")
    if len(x1) != len(x2):
        raise ValueError(f"lengths differ: {len(x1)} vs {len(x2)}")
    return Waveform(x1.samples + x2.samples, x1.sample_rate_hz)


def read_wav(path: str | Path) -> Waveform:
    """Read a mono 16-bit PCM WAV; samples are scaled by 1/32768."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    scaled = np.round(np.asarray(samples, dtype=np.float64) * 32768.0)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def write_wav(path: str | Path, w: Waveform) -> None:
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate_hz)
        f.writeframes(to_pcm16(w.samples).tobytes())
