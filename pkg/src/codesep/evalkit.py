"""Objective metrics: SI-SDR, two-source PIT SI-SDR, log-mel distance, JSON reports."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import Waveform, mel_spectrogram

SI_SDR_CAP_DB = 60.0
# log-mel settings of the quality proxy: 10 ms shift at the signal's rate
MEL_DISTANCE_BINS = 40


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)


def si_sdr(est, ref) -> float:
    """Scale-invariant SDR in dB, capped at +60 dB.

    Raises:
        ValueError: on length mismatch or an all-zero reference.
    """
    est, ref = _samples(est), _samples(ref)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("reference signal is all zeros")
    target = (np.dot(est, ref) / ref_energy) * ref
    noise = est - target
    signal_energy = float(np.dot(target, target))
    noise_energy = float(np.dot(noise, noise))
    if noise_energy <= signal_energy * 10 ** (-SI_SDR_CAP_DB / 10):
        return SI_SDR_CAP_DB
    return float(10 * np.log10(signal_energy / noise_energy))


def pit_si_sdr(ests, refs) -> tuple[float, tuple[int, int]]:
    """Best mean SI-SDR over the two source assignments.

    Returns the value and the permutation ``(1, 2)`` or ``(2, 1)``; ties keep ``(1, 2)``.
    """
    e1, e2 = ests
    r1, r2 = refs
    straight = 0.5 * (si_sdr(e1, r1) + si_sdr(e2, r2))
    swapped = 0.5 * (si_sdr(e2, r1) + si_sdr(e1, r2))
    if swapped > straight:
        return swapped, (2, 1)
    return straight, (1, 2)


def mel_distance(a: Waveform, b: Waveform) -> float:
    """Mean absolute difference of log-mel spectrograms (shorter length wins).

    A non-perceptual quality proxy.
    """
    if a.sample_rate_hz != b.sample_rate_hz:
        raise ValueError(f"sample rates differ: {a.sample_rate_hz} vs {b.sample_rate_hz}")
    n = min(len(a), len(b))
    shift = max(1, a.sample_rate_hz // 100)
    ma = mel_spectrogram(Waveform(a.samples[:n], a.sample_rate_hz), MEL_DISTANCE_BINS, shift).frames
    mb = mel_spectrogram(Waveform(b.samples[:n], b.sample_rate_hz), MEL_DISTANCE_BINS, shift).frames
    if ma.size == 0:
        return 0.0
    return float(np.mean(np.abs(ma - mb)))


@dataclass
class EvalReport:
    mode: str
    bitrate_bps: dict = field(default_factory=dict)
    utterances: list[dict] = field(default_factory=list)

    def add(self, uid: str, **metrics: float) -> None:
        self.utterances.append({"id": uid, **{k: float(v) for k, v in metrics.items()}})

    def aggregate(self) -> dict:
        keys = [k for k in (self.utterances[0] if self.utterances else {}) if k != "id"]
        return {k: float(np.mean([u[k] for u in self.utterances])) for k in keys}

    def to_json(self) -> str:
        return json.dumps({
            "mode": self.mode,
            "bitrate_bps": self.bitrate_bps,
            "utterances": self.utterances,
            "aggregate": {"count": len(self.utterances), **self.aggregate()},
        }, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())
